//! Single-head autoregressive attention over an explicit key/value cache.
//!
//! The model is a synthetic decoder: three seeded d×d projection weights and
//! no positional encoding. Logits can optionally be rescaled by
//! `log_base(n)` where `n` is the current cache length, which keeps softmax
//! entropy roughly flat as the context grows.

use crate::error::{Error, Result};
use crate::numeric::{dot, matvec, seeded_gaussian_matrix, softmax, Matrix, Seed};

/// Default base for log-n logit scaling.
pub const DEFAULT_LOGN_BASE: usize = 512;

/// Fixed projection weights defining the synthetic decoder.
#[derive(Debug, Clone)]
pub struct AttentionModel {
    d: usize,
    w_q: Matrix,
    w_k: Matrix,
    w_v: Matrix,
    logn_enabled: bool,
    logn_base: usize,
}

/// Attention distribution and output vector for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Attention probabilities over the current cache, in cache row order.
    pub weights: Vec<f64>,
    /// Convex combination of cached value rows.
    pub output: Vec<f64>,
}

impl AttentionModel {
    /// Build from explicit d×d weights.
    pub fn from_weights(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<AttentionModel> {
        let d = w_q.rows();
        if d == 0 {
            return Err(Error::invalid_argument("hidden dimension must be >= 1"));
        }
        for (name, m) in [("W_Q", &w_q), ("W_K", &w_k), ("W_V", &w_v)] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::invalid_argument(format!(
                    "{name} must be {d}x{d}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        Ok(AttentionModel { d, w_q, w_k, w_v, logn_enabled: false, logn_base: DEFAULT_LOGN_BASE })
    }

    /// Seeded Gaussian weights with std 1/sqrt(d), so logits stay O(1) for
    /// hidden dimensions up to a few hundred. Streams 1..3 of the seed feed
    /// W_Q, W_K, W_V in that order.
    pub fn seeded(d: usize, seed: Seed) -> Result<AttentionModel> {
        let std = 1.0 / (d as f64).sqrt();
        let w_q = seeded_gaussian_matrix(seed.derive(1), d, d, std)?;
        let w_k = seeded_gaussian_matrix(seed.derive(2), d, d, std)?;
        let w_v = seeded_gaussian_matrix(seed.derive(3), d, d, std)?;
        AttentionModel::from_weights(w_q, w_k, w_v)
    }

    /// Enable or disable log-n logit scaling.
    pub fn with_logn(mut self, enabled: bool, base: usize) -> Result<AttentionModel> {
        if base < 2 {
            return Err(Error::invalid_argument("logn base must be >= 2"));
        }
        self.logn_enabled = enabled;
        self.logn_base = base;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn logn_enabled(&self) -> bool {
        self.logn_enabled
    }

    pub fn logn_base(&self) -> usize {
        self.logn_base
    }

    pub fn key_weights(&self) -> &Matrix {
        &self.w_k
    }

    pub fn query_weights(&self) -> &Matrix {
        &self.w_q
    }

    pub fn value_weights(&self) -> &Matrix {
        &self.w_v
    }

    /// Project one token embedding into query, key, and value vectors.
    pub fn project_token(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if x.len() != self.d {
            return Err(Error::invalid_argument(format!(
                "embedding length {} does not match hidden dimension {}",
                x.len(),
                self.d
            )));
        }
        Ok((matvec(&self.w_q, x)?, matvec(&self.w_k, x)?, matvec(&self.w_v, x)?))
    }

    /// Logit scale for a cache of `n` entries: 1/sqrt(d) in the standard
    /// model, log_base(n)/sqrt(d) when log-n scaling is enabled.
    pub fn attention_scale(&self, n: usize) -> Result<f64> {
        if n < 1 {
            return Err(Error::invalid_argument("cache length must be >= 1"));
        }
        let inv_sqrt_d = 1.0 / (self.d as f64).sqrt();
        if !self.logn_enabled {
            return Ok(inv_sqrt_d);
        }
        if n < 2 {
            return Err(Error::invalid_argument(
                "log-n scaling needs a cache of at least 2 entries",
            ));
        }
        Ok((n as f64).ln() / (self.logn_base as f64).ln() * inv_sqrt_d)
    }

    /// One decoding step: attention of `q` over the cached keys, output as
    /// the weighted combination of cached values.
    pub fn decode_step(&self, keys: &Matrix, values: &Matrix, q: &[f64]) -> Result<StepOutput> {
        let n = keys.rows();
        if n == 0 {
            return Err(Error::invalid_argument("decode over an empty cache"));
        }
        if values.rows() != n {
            return Err(Error::invalid_argument("key and value row counts differ"));
        }
        if keys.cols() != self.d || values.cols() != self.d || q.len() != self.d {
            return Err(Error::invalid_argument("cache width does not match hidden dimension"));
        }
        if n == 1 {
            // Softmax over a single entry is [1] under any scale, including
            // log-n where the scale itself is undefined at n = 1.
            return Ok(StepOutput { weights: vec![1.0], output: values.row(0).to_vec() });
        }
        let scale = self.attention_scale(n)?;
        let logits: Vec<f64> = (0..n).map(|i| dot(q, keys.row(i))).collect();
        let weights = softmax(&logits, scale)?;
        let mut output = vec![0.0; self.d];
        for (i, w) in weights.iter().enumerate() {
            for (o, v) in output.iter_mut().zip(values.row(i)) {
                *o += w * v;
            }
        }
        Ok(StepOutput { weights, output })
    }
}

/// Accumulated attention received by each tracked token.
///
/// Scores are raw sums of softmax probabilities across decoding steps; no
/// renormalization by token age is applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTracker {
    accumulated: Vec<f64>,
    steps_observed: Vec<u64>,
}

impl ScoreTracker {
    pub fn new() -> ScoreTracker {
        ScoreTracker::default()
    }

    /// Start tracking a newly cached token with zero score.
    pub fn push_token(&mut self) {
        self.accumulated.push(0.0);
        self.steps_observed.push(0);
    }

    pub fn len(&self) -> usize {
        self.accumulated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accumulated.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.accumulated
    }

    pub fn steps_observed(&self, i: usize) -> u64 {
        self.steps_observed[i]
    }

    /// Fold one step's attention distribution into the running scores.
    pub fn update(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.accumulated.len() {
            return Err(Error::invalid_argument(format!(
                "got {} weights for {} tracked tokens",
                weights.len(),
                self.accumulated.len()
            )));
        }
        for (acc, w) in self.accumulated.iter_mut().zip(weights) {
            *acc += w;
        }
        for s in &mut self.steps_observed {
            *s += 1;
        }
        Ok(())
    }

    /// Keep only the tokens at the given sorted indices.
    pub fn retain_indices(&mut self, indices: &[usize]) {
        self.accumulated = indices.iter().map(|&i| self.accumulated[i]).collect();
        self.steps_observed = indices.iter().map(|&i| self.steps_observed[i]).collect();
    }
}
