//! Stateful per-policy caches driven step by step during decoding.
//!
//! Each driver owns its kept entries and decides what to drop and when:
//! position-based policies trim on append, score-based ones after the
//! step's attention weights have been folded in.

use std::collections::VecDeque;

use crate::cache::{BuzzConfig, CacheState, KvEntry};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::policy::{buzz_evict, BuzzMode, EvictionOutcome, Policy};

/// A cache policy the experiment loop can drive uniformly.
pub trait PolicyCache {
    /// Admit the next token. Positions must strictly increase.
    fn append(&mut self, entry: KvEntry) -> Result<()>;
    /// Kept keys and values, in ascending position order.
    fn snapshot(&self) -> (Matrix, Matrix);
    /// Fold one step's attention weights (snapshot order) into the scores.
    fn apply_attention(&mut self, weights: &[f64]) -> Result<()>;
    /// Run the policy's post-decode eviction, if any.
    fn finish_step(&mut self) -> Result<Option<EvictionOutcome>>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn kept_positions(&self) -> Vec<u64>;
    /// Score comparisons spent on evictions so far.
    fn comparisons(&self) -> u64;
}

/// Instantiate the cache for a policy.
pub fn build_policy_cache(policy: &Policy) -> Result<Box<dyn PolicyCache>> {
    policy.validate()?;
    Ok(match *policy {
        Policy::Full => Box::new(FullCache::new()),
        Policy::LocalWindow { window } => Box::new(LocalWindowCache::new(window)),
        Policy::SinkWindow { sink, window } => Box::new(SinkWindowCache::new(sink, window)),
        Policy::HeavyHitterTopK { budget, window } => {
            Box::new(HeavyHitterCache::new(budget, window))
        }
        Policy::Buzz { config, mode } => Box::new(BuzzCache::new(config, mode)),
    })
}

fn matrices_of<'a>(entries: impl Iterator<Item = &'a KvEntry> + Clone) -> (Matrix, Matrix) {
    let n = entries.clone().count();
    let d = entries.clone().next().map_or(0, |e| e.key.len());
    let mut keys = Vec::with_capacity(n * d);
    let mut values = Vec::with_capacity(n * d);
    for e in entries {
        keys.extend_from_slice(&e.key);
        values.extend_from_slice(&e.value);
    }
    (
        Matrix::from_vec(n, d, keys).expect("entries share one dimension"),
        Matrix::from_vec(n, d, values).expect("entries share one dimension"),
    )
}

fn add_weights(entries: &mut [KvEntry], weights: &[f64]) -> Result<()> {
    if entries.len() != weights.len() {
        return Err(Error::invalid_argument(format!(
            "got {} weights for {} cached entries",
            weights.len(),
            entries.len()
        )));
    }
    for (e, w) in entries.iter_mut().zip(weights) {
        e.accumulated_score += w;
    }
    Ok(())
}

fn check_monotone(last: &mut Option<u64>, position: u64) -> Result<()> {
    if let Some(high) = *last {
        if position <= high {
            return Err(Error::invalid_argument(format!(
                "position {position} not greater than highest cached position {high}"
            )));
        }
    }
    *last = Some(position);
    Ok(())
}

/// Dense cache: keeps everything. Doubles as the oracle side of a run.
#[derive(Debug, Default)]
pub struct FullCache {
    entries: Vec<KvEntry>,
    last: Option<u64>,
}

impl FullCache {
    pub fn new() -> FullCache {
        FullCache::default()
    }

    /// Accumulated score of the token at a stream position, if cached.
    pub fn score_of(&self, position: u64) -> Option<f64> {
        // positions are dense 0..n in a full cache, but search anyway
        self.entries
            .iter()
            .find(|e| e.original_position == position)
            .map(|e| e.accumulated_score)
    }

    pub fn entries(&self) -> &[KvEntry] {
        &self.entries
    }
}

impl PolicyCache for FullCache {
    fn append(&mut self, entry: KvEntry) -> Result<()> {
        check_monotone(&mut self.last, entry.original_position)?;
        self.entries.push(entry);
        Ok(())
    }

    fn snapshot(&self) -> (Matrix, Matrix) {
        matrices_of(self.entries.iter())
    }

    fn apply_attention(&mut self, weights: &[f64]) -> Result<()> {
        add_weights(&mut self.entries, weights)
    }

    fn finish_step(&mut self) -> Result<Option<EvictionOutcome>> {
        Ok(None)
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn kept_positions(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.original_position).collect()
    }

    fn comparisons(&self) -> u64 {
        0
    }
}

/// Keep only the most recent `window` tokens; older ones drop on append.
#[derive(Debug)]
pub struct LocalWindowCache {
    window: usize,
    entries: VecDeque<KvEntry>,
    last: Option<u64>,
}

impl LocalWindowCache {
    pub fn new(window: usize) -> LocalWindowCache {
        LocalWindowCache { window, entries: VecDeque::new(), last: None }
    }
}

impl PolicyCache for LocalWindowCache {
    fn append(&mut self, entry: KvEntry) -> Result<()> {
        check_monotone(&mut self.last, entry.original_position)?;
        self.entries.push_back(entry);
        while self.entries.len() > self.window {
            self.entries.pop_front();
        }
        Ok(())
    }

    fn snapshot(&self) -> (Matrix, Matrix) {
        matrices_of(self.entries.iter())
    }

    fn apply_attention(&mut self, weights: &[f64]) -> Result<()> {
        add_weights(self.entries.make_contiguous(), weights)
    }

    fn finish_step(&mut self) -> Result<Option<EvictionOutcome>> {
        Ok(None)
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn kept_positions(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.original_position).collect()
    }

    fn comparisons(&self) -> u64 {
        0
    }
}

/// Keep the first `sink` tokens and the most recent `window` tokens.
#[derive(Debug)]
pub struct SinkWindowCache {
    sink_size: usize,
    window_size: usize,
    sink: Vec<KvEntry>,
    window: VecDeque<KvEntry>,
    last: Option<u64>,
}

impl SinkWindowCache {
    pub fn new(sink: usize, window: usize) -> SinkWindowCache {
        SinkWindowCache {
            sink_size: sink,
            window_size: window,
            sink: Vec::new(),
            window: VecDeque::new(),
            last: None,
        }
    }
}

impl PolicyCache for SinkWindowCache {
    fn append(&mut self, entry: KvEntry) -> Result<()> {
        check_monotone(&mut self.last, entry.original_position)?;
        if self.sink.len() < self.sink_size {
            self.sink.push(entry);
        } else {
            self.window.push_back(entry);
            while self.window.len() > self.window_size {
                self.window.pop_front();
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> (Matrix, Matrix) {
        matrices_of(self.sink.iter().chain(self.window.iter()))
    }

    fn apply_attention(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::invalid_argument(format!(
                "got {} weights for {} cached entries",
                weights.len(),
                self.len()
            )));
        }
        let (a, b) = weights.split_at(self.sink.len());
        add_weights(&mut self.sink, a)?;
        add_weights(self.window.make_contiguous(), b)
    }

    fn finish_step(&mut self) -> Result<Option<EvictionOutcome>> {
        Ok(None)
    }

    fn len(&self) -> usize {
        self.sink.len() + self.window.len()
    }

    fn kept_positions(&self) -> Vec<u64> {
        self.sink
            .iter()
            .chain(self.window.iter())
            .map(|e| e.original_position)
            .collect()
    }

    fn comparisons(&self) -> u64 {
        0
    }
}

/// Greedy accumulated-score policy: always keep the trailing window, and
/// whenever occupancy exceeds the budget drop the single lowest-scoring
/// token outside it.
#[derive(Debug)]
pub struct HeavyHitterCache {
    budget: usize,
    window: usize,
    entries: Vec<KvEntry>,
    comparisons: u64,
    last: Option<u64>,
}

impl HeavyHitterCache {
    pub fn new(budget: usize, window: usize) -> HeavyHitterCache {
        HeavyHitterCache { budget, window, entries: Vec::new(), comparisons: 0, last: None }
    }
}

impl PolicyCache for HeavyHitterCache {
    fn append(&mut self, entry: KvEntry) -> Result<()> {
        check_monotone(&mut self.last, entry.original_position)?;
        self.entries.push(entry);
        Ok(())
    }

    fn snapshot(&self) -> (Matrix, Matrix) {
        matrices_of(self.entries.iter())
    }

    fn apply_attention(&mut self, weights: &[f64]) -> Result<()> {
        add_weights(&mut self.entries, weights)
    }

    fn finish_step(&mut self) -> Result<Option<EvictionOutcome>> {
        while self.entries.len() > self.budget {
            let candidates = self.entries.len() - self.window;
            let victim = (0..candidates)
                .min_by(|&a, &b| {
                    self.entries[a]
                        .accumulated_score
                        .total_cmp(&self.entries[b].accumulated_score)
                })
                .expect("budget >= window leaves at least one candidate");
            self.comparisons += candidates.saturating_sub(1) as u64;
            self.entries.remove(victim);
        }
        Ok(None)
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn kept_positions(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.original_position).collect()
    }

    fn comparisons(&self) -> u64 {
        self.comparisons
    }
}

/// The buzz policy: partitioned cache plus one sampling eviction whenever
/// the middle region reaches the threshold.
#[derive(Debug)]
pub struct BuzzCache {
    state: CacheState,
    mode: BuzzMode,
    comparisons: u64,
    outcomes: Vec<EvictionOutcome>,
}

impl BuzzCache {
    pub fn new(config: BuzzConfig, mode: BuzzMode) -> BuzzCache {
        BuzzCache { state: CacheState::new(config), mode, comparisons: 0, outcomes: Vec::new() }
    }

    pub fn state(&self) -> &CacheState {
        &self.state
    }

    pub fn outcomes(&self) -> &[EvictionOutcome] {
        &self.outcomes
    }
}

impl PolicyCache for BuzzCache {
    fn append(&mut self, entry: KvEntry) -> Result<()> {
        self.state.append_token(entry)?;
        Ok(())
    }

    fn snapshot(&self) -> (Matrix, Matrix) {
        let (keys, values, _) = self.state.concat_regions();
        (keys, values)
    }

    fn apply_attention(&mut self, weights: &[f64]) -> Result<()> {
        self.state.apply_attention(weights)
    }

    fn finish_step(&mut self) -> Result<Option<EvictionOutcome>> {
        if !self.state.eviction_due() {
            return Ok(None);
        }
        let outcome = buzz_evict(&mut self.state, self.mode)?;
        self.comparisons += outcome.comparisons;
        self.outcomes.push(outcome.clone());
        Ok(Some(outcome))
    }

    fn len(&self) -> usize {
        self.state.len()
    }

    fn kept_positions(&self) -> Vec<u64> {
        self.state.kept_positions()
    }

    fn comparisons(&self) -> u64 {
        self.comparisons
    }
}
