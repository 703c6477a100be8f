//! Partitioned KV cache shared by every eviction policy.
//!
//! The cache splits cached tokens into four position-ordered regions:
//!
//! * `sink` — the first `k` stream tokens, never evicted;
//! * `old` — middle tokens that have survived at least one eviction;
//! * `buffer` — middle tokens that recently left the sliding window and
//!   are staged until the next eviction;
//! * `window` — the most recent `w` tokens.
//!
//! An eviction is due whenever `|old| + |buffer|` reaches the threshold, so
//! total occupancy never exceeds `sink + threshold + window` as long as the
//! driver evicts when told to (and the small stride is at least 2; see
//! `BuzzConfig::shrinks`).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// One cached token: its key/value projections, stream position, and the
/// attention mass it has received so far.
#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub original_position: u64,
    pub accumulated_score: f64,
}

impl KvEntry {
    pub fn new(key: Vec<f64>, value: Vec<f64>, original_position: u64) -> KvEntry {
        KvEntry { key, value, original_position, accumulated_score: 0.0 }
    }
}

/// Policy parameters: sink size, window size, sampling strides, and the
/// middle-region threshold that triggers an eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuzzConfig {
    /// Sink size k.
    pub sink_size: usize,
    /// Sliding window size w.
    pub window_size: usize,
    /// Sampling stride s for tokens fresh out of the window.
    pub stride: usize,
    /// Small stride for previously sampled tokens, always floor((s+1)/2).
    pub small_stride: usize,
    /// Middle-region threshold T: eviction fires when old + buffer reach it.
    pub threshold: usize,
}

impl BuzzConfig {
    pub fn new(sink_size: usize, window_size: usize, stride: usize, threshold: usize) -> Result<BuzzConfig> {
        if window_size < 1 {
            return Err(Error::invalid_argument("window size must be >= 1"));
        }
        if stride < 1 {
            return Err(Error::invalid_argument("stride must be >= 1"));
        }
        if threshold < stride {
            return Err(Error::invalid_argument("threshold must be >= stride"));
        }
        Ok(BuzzConfig {
            sink_size,
            window_size,
            stride,
            small_stride: stride.div_ceil(2),
            threshold,
        })
    }

    /// Total container length: every region full at eviction time.
    pub fn container(&self) -> usize {
        self.sink_size + self.threshold + self.window_size
    }

    /// Whether one eviction round is guaranteed to shrink the middle region.
    /// With a small stride of 1 the old region is copied verbatim and the
    /// middle can saturate at the threshold instead of contracting.
    pub fn shrinks(&self) -> bool {
        self.small_stride >= 2
    }
}

/// Per-region entry counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    pub sink: usize,
    pub old: usize,
    pub buffer: usize,
    pub window: usize,
    pub total: usize,
}

/// Region contents by original position, for debug dumps and golden traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionDump {
    pub sink: Vec<u64>,
    pub old: Vec<u64>,
    pub buffer: Vec<u64>,
    pub window: Vec<u64>,
}

/// The partitioned cache. One decoding run owns one `CacheState`.
#[derive(Debug, Clone)]
pub struct CacheState {
    config: BuzzConfig,
    sink: Vec<KvEntry>,
    old: Vec<KvEntry>,
    buffer: Vec<KvEntry>,
    window: VecDeque<KvEntry>,
    epoch: u64,
    highest_position: Option<u64>,
}

impl CacheState {
    pub fn new(config: BuzzConfig) -> CacheState {
        CacheState {
            config,
            sink: Vec::new(),
            old: Vec::new(),
            buffer: Vec::new(),
            window: VecDeque::new(),
            epoch: 0,
            highest_position: None,
        }
    }

    pub fn config(&self) -> &BuzzConfig {
        &self.config
    }

    /// Completed evictions.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn middle_len(&self) -> usize {
        self.old.len() + self.buffer.len()
    }

    pub fn len(&self) -> usize {
        self.sink.len() + self.old.len() + self.buffer.len() + self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether the middle region has reached the eviction threshold.
    pub fn eviction_due(&self) -> bool {
        self.middle_len() >= self.config.threshold
    }

    /// Append one token. Fills the sink first, then the window; once the
    /// window is full each arrival displaces the oldest window token into
    /// the buffer. Returns whether an eviction is now due.
    pub fn append_token(&mut self, entry: KvEntry) -> Result<bool> {
        if let Some(high) = self.highest_position {
            if entry.original_position <= high {
                return Err(Error::invalid_argument(format!(
                    "position {} not greater than highest cached position {high}",
                    entry.original_position
                )));
            }
        }
        self.highest_position = Some(entry.original_position);
        if self.sink.len() < self.config.sink_size {
            self.sink.push(entry);
        } else if self.window.len() < self.config.window_size {
            self.window.push_back(entry);
        } else {
            self.window.push_back(entry);
            let displaced = self.window.pop_front().expect("window was full");
            self.buffer.push(displaced);
        }
        Ok(self.eviction_due())
    }

    /// Keys, values, and accumulated scores in decode order:
    /// sink, old, buffer, window — ascending original position throughout.
    pub fn concat_regions(&self) -> (Matrix, Matrix, Vec<f64>) {
        let total = self.len();
        if total == 0 {
            return (Matrix::zeros(0, 0), Matrix::zeros(0, 0), Vec::new());
        }
        let d = self.iter_entries().next().map(|e| e.key.len()).unwrap_or(0);
        let mut keys = Vec::with_capacity(total * d);
        let mut values = Vec::with_capacity(total * d);
        let mut scores = Vec::with_capacity(total);
        for e in self.iter_entries() {
            keys.extend_from_slice(&e.key);
            values.extend_from_slice(&e.value);
            scores.push(e.accumulated_score);
        }
        let keys = Matrix::from_vec(total, d, keys).expect("entries share one dimension");
        let values = Matrix::from_vec(total, d, values).expect("entries share one dimension");
        (keys, values, scores)
    }

    /// Add one step's attention weights (in `concat_regions` order) into the
    /// per-entry accumulated scores.
    pub fn apply_attention(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::invalid_argument(format!(
                "got {} weights for {} cached entries",
                weights.len(),
                self.len()
            )));
        }
        let mut it = weights.iter();
        for e in self
            .sink
            .iter_mut()
            .chain(self.old.iter_mut())
            .chain(self.buffer.iter_mut())
            .chain(self.window.iter_mut())
        {
            e.accumulated_score += *it.next().expect("length checked");
        }
        Ok(())
    }

    pub fn occupancy(&self) -> Occupancy {
        Occupancy {
            sink: self.sink.len(),
            old: self.old.len(),
            buffer: self.buffer.len(),
            window: self.window.len(),
            total: self.len(),
        }
    }

    /// All cached positions in ascending order.
    pub fn kept_positions(&self) -> Vec<u64> {
        self.iter_entries().map(|e| e.original_position).collect()
    }

    pub fn region_dump(&self) -> RegionDump {
        RegionDump {
            sink: self.sink.iter().map(|e| e.original_position).collect(),
            old: self.old.iter().map(|e| e.original_position).collect(),
            buffer: self.buffer.iter().map(|e| e.original_position).collect(),
            window: self.window.iter().map(|e| e.original_position).collect(),
        }
    }

    /// Debug dump as a JSON object of per-region position lists.
    pub fn dump_json(&self) -> String {
        serde_json::to_string(&self.region_dump()).expect("dump serializes")
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = &KvEntry> {
        self.sink
            .iter()
            .chain(self.old.iter())
            .chain(self.buffer.iter())
            .chain(self.window.iter())
    }

    /// Structural invariants: region caps, global position monotonicity
    /// (which implies disjointness), finite nonnegative scores, and the
    /// middle-region cap for configurations whose evictions shrink.
    pub fn validate(&self) -> Result<()> {
        if self.sink.len() > self.config.sink_size {
            return Err(Error::invalid_state("sink exceeds its capacity"));
        }
        if self.window.len() > self.config.window_size {
            return Err(Error::invalid_state("window exceeds its capacity"));
        }
        if self.config.shrinks() && self.middle_len() > self.config.threshold {
            return Err(Error::invalid_state("old + buffer exceed the threshold"));
        }
        let mut prev: Option<u64> = None;
        for e in self.iter_entries() {
            if let Some(p) = prev {
                if e.original_position <= p {
                    return Err(Error::invalid_state(format!(
                        "positions not strictly increasing: {} after {p}",
                        e.original_position
                    )));
                }
            }
            prev = Some(e.original_position);
            if !e.accumulated_score.is_finite() || e.accumulated_score < 0.0 {
                return Err(Error::invalid_state("accumulated score out of range"));
            }
        }
        Ok(())
    }

    // Region accessors used by the eviction policy.

    pub(crate) fn take_middle(&mut self) -> (Vec<KvEntry>, Vec<KvEntry>) {
        (std::mem::take(&mut self.old), std::mem::take(&mut self.buffer))
    }

    pub(crate) fn install_old(&mut self, old: Vec<KvEntry>) {
        self.old = old;
        self.epoch += 1;
    }

    pub fn old_entries(&self) -> &[KvEntry] {
        &self.old
    }

    pub fn buffer_entries(&self) -> &[KvEntry] {
        &self.buffer
    }

    /// Build a cache directly from a prompt: first k tokens to the sink,
    /// last w to the window, the remainder to the middle. `sampled` middle
    /// entries go to `old` (they have been through at least one sampling
    /// round), unsampled ones to `buffer`.
    pub(crate) fn from_prompt_parts(
        config: BuzzConfig,
        sink: Vec<KvEntry>,
        middle: Vec<KvEntry>,
        window: Vec<KvEntry>,
        middle_sampled: bool,
        epoch: u64,
    ) -> CacheState {
        let highest_position = window
            .last()
            .or(middle.last())
            .or(sink.last())
            .map(|e| e.original_position);
        let (old, buffer) = if middle_sampled { (middle, Vec::new()) } else { (Vec::new(), middle) };
        CacheState {
            config,
            sink,
            old,
            buffer,
            window: window.into(),
            epoch,
            highest_position,
        }
    }
}
