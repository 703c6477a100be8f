//! Parameter estimation for the buzz policy.
//!
//! Three tools live here:
//!
//! * the closed-form optimal threshold-to-window ratio as a function of the
//!   stride parity,
//! * a simulator for the recursion that models the old-region size across
//!   evictions (in two rounding variants) together with a check of the
//!   limit bounds that the ratio rule is derived from,
//! * a Monte-Carlo probe measuring how softmax entropy drifts with context
//!   length under constant versus log-n logit scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{softmax, standard_normal, Seed};

/// Stride parity selects the branch of the ratio rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Odd,
    Even,
}

/// Predicted optimal threshold-to-window ratio for a stride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPrediction {
    pub stride: usize,
    pub ratio: f64,
    pub parity: Parity,
}

/// Optimal T/w for a fixed stride: (s² + 1)/(s + 1) for odd s, s − 1 for
/// even s.
pub fn optimal_ratio(stride: usize) -> Result<RatioPrediction> {
    if stride < 1 {
        return Err(Error::invalid_argument("stride must be >= 1"));
    }
    let s = stride as f64;
    let (ratio, parity) = if stride % 2 == 1 {
        ((s * s + 1.0) / (s + 1.0), Parity::Odd)
    } else {
        (s - 1.0, Parity::Even)
    };
    Ok(RatioPrediction { stride, ratio, parity })
}

/// Rounding discipline for the recursion.
///
/// `Ceil` matches the sampler implementations (each pass keeps
/// ceil(n/stride) entries); `Floor` matches the arithmetic the limit bounds
/// are proved with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    Ceil,
    Floor,
}

/// Trace of the old-region size recursion
/// `a_n = round(a_{n-1}/s_hat) + round((T - a_{n-1})/s)`, `a_1 = floor(T/s)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecursionTrace {
    pub stride: usize,
    pub threshold: usize,
    pub rounding: Rounding,
    pub values: Vec<u64>,
    pub converged: bool,
    /// Limit superior once the trace is eventually periodic: the fixed point
    /// itself, or the cycle maximum for the small-T rounding cycles.
    pub limsup: Option<u64>,
}

impl RecursionTrace {
    /// The trace's limit value: fixed point or cycle maximum.
    pub fn converged_value(&self) -> Option<u64> {
        self.limsup
    }
}

/// Both rounding variants of the recursion, simulated side by side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub ceil: RecursionTrace,
    pub floor: RecursionTrace,
}

/// Iterate one rounding variant until a fixed point or `max_steps`.
pub fn recursion_trace(
    stride: usize,
    threshold: usize,
    max_steps: usize,
    rounding: Rounding,
) -> Result<RecursionTrace> {
    if stride < 1 {
        return Err(Error::invalid_argument("stride must be >= 1"));
    }
    if threshold < stride {
        return Err(Error::invalid_argument("threshold must be >= stride"));
    }
    if max_steps < 1 {
        return Err(Error::invalid_argument("max_steps must be >= 1"));
    }
    let small = stride.div_ceil(2);
    let t = threshold as u64;
    let s = stride as u64;
    let sh = small as u64;
    let step = |a: u64| -> u64 {
        let a = a.min(t);
        match rounding {
            Rounding::Ceil => a.div_ceil(sh) + (t - a).div_ceil(s),
            Rounding::Floor => a / sh + (t - a) / s,
        }
    };
    let mut values = vec![t / s];
    let mut limsup = None;
    for _ in 1..max_steps {
        let next = step(*values.last().unwrap());
        // the sequence is bounded, so any revisited value starts a cycle;
        // a fixed point is the one-element case
        if let Some(start) = values.iter().position(|&v| v == next) {
            limsup = values[start..].iter().copied().max();
            break;
        }
        values.push(next);
    }
    Ok(RecursionTrace { stride, threshold, rounding, values, converged: limsup.is_some(), limsup })
}

/// Simulate both rounding variants.
pub fn simulate_recursion(stride: usize, threshold: usize, max_steps: usize) -> Result<RecursionReport> {
    Ok(RecursionReport {
        ceil: recursion_trace(stride, threshold, max_steps, Rounding::Ceil)?,
        floor: recursion_trace(stride, threshold, max_steps, Rounding::Floor)?,
    })
}

/// Result of checking the limit bounds on a converged trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub holds: bool,
    /// Fixed point scaled by the parity factor; the quantity being bounded.
    pub scaled_sup: f64,
    pub lower: f64,
    pub upper: f64,
    pub lower_margin: f64,
    pub upper_margin: f64,
}

/// Verify the limit bounds on the recursion's fixed point.
///
/// With B = (s²+1)/(s²+s) for odd s and (s−1)/s for even s, the floor
/// variant satisfies T/s − 2 < B·sup ≤ T/s and the ceil variant
/// T/s ≤ B·sup < T/s + 2 (two ceilings each contribute strictly less than
/// one extra unit).
pub fn check_limsup_bounds(trace: &RecursionTrace) -> Result<BoundCheck> {
    let sup = trace
        .converged_value()
        .ok_or_else(|| Error::invalid_state("trace did not converge"))? as f64;
    let s = trace.stride as f64;
    let factor = if trace.stride % 2 == 1 {
        (s * s + 1.0) / (s * s + s)
    } else {
        (s - 1.0) / s
    };
    let scaled_sup = factor * sup;
    let ts = trace.threshold as f64 / s;
    let (lower, upper, holds) = match trace.rounding {
        Rounding::Floor => (ts - 2.0, ts, ts - 2.0 < scaled_sup && scaled_sup <= ts),
        Rounding::Ceil => (ts, ts + 2.0, ts <= scaled_sup && scaled_sup < ts + 2.0),
    };
    Ok(BoundCheck {
        holds,
        scaled_sup,
        lower,
        upper,
        lower_margin: scaled_sup - lower,
        upper_margin: upper - scaled_sup,
    })
}

/// Entropy curves over a grid of context lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProbe {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub entropies_constant: Vec<f64>,
    pub entropies_logn: Vec<f64>,
    /// max over the grid of |H(n) − H(base)| per scaling policy.
    pub drift_constant: f64,
    pub drift_logn: f64,
}

/// Logit scaling policy for the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalePolicy {
    Constant,
    LogN,
}

/// Mean softmax entropy of `n` i.i.d. standard-normal scores under a
/// scaling policy, averaged over seeded trials.
pub fn mean_entropy(n: usize, seed: Seed, policy: ScalePolicy, trials: usize, base: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid_argument("grid lengths must be >= 2"));
    }
    if trials < 1 {
        return Err(Error::invalid_argument("at least one trial required"));
    }
    let lambda = match policy {
        ScalePolicy::Constant => 1.0,
        ScalePolicy::LogN => (n as f64).ln() / (base as f64).ln(),
    };
    let mut total = 0.0;
    for trial in 0..trials {
        let mut rng = seed.derive(n as u64).derive(trial as u64).rng();
        let scores: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let p = softmax(&scores, lambda)?;
        let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
        debug_assert!(h >= -1e-12 && h <= (n as f64).ln() + 1e-9);
        total += h;
    }
    Ok(total / trials as f64)
}

/// Run the probe over a grid of lengths. The grid must contain the scaling
/// base so drift can be measured relative to it; both policies are sampled
/// from identical score draws.
pub fn entropy_probe(n_grid: &[usize], seed: Seed, trials: usize, base: usize) -> Result<EntropyProbe> {
    if base < 2 {
        return Err(Error::invalid_argument("base must be >= 2"));
    }
    let base_idx = n_grid
        .iter()
        .position(|&n| n == base)
        .ok_or_else(|| Error::invalid_argument(format!("grid must include the base length {base}")))?;
    let mut constant = Vec::with_capacity(n_grid.len());
    let mut logn = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        constant.push(mean_entropy(n, seed, ScalePolicy::Constant, trials, base)?);
        logn.push(mean_entropy(n, seed, ScalePolicy::LogN, trials, base)?);
    }
    let drift = |curve: &[f64]| -> f64 {
        curve.iter().map(|h| (h - curve[base_idx]).abs()).fold(0.0, f64::max)
    };
    Ok(EntropyProbe {
        n_grid: n_grid.to_vec(),
        trials,
        drift_constant: drift(&constant),
        drift_logn: drift(&logn),
        entropies_constant: constant,
        entropies_logn: logn,
    })
}
