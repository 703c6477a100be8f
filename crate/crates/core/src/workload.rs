//! Seeded synthetic decoding workloads.
//!
//! Streams are deterministic functions of their spec. Three kinds:
//!
//! * `uniform` — i.i.d. standard-normal embeddings; attention mass has no
//!   planted structure.
//! * `middle_spike` — one mid-stream token is rebuilt so its key is a large
//!   multiple of the mean direction of all later queries; it soaks up
//!   attention and becomes the heaviest middle token.
//! * `skewed_decay` — every embedding carries a shared direction whose
//!   amplitude decays with position, and the key/query geometry is oriented
//!   so earlier tokens systematically receive more attention mass.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionModel;
use crate::error::{Error, Result};
use crate::numeric::{dot, l2_norm, matvec, solve_linear, standard_normal, Seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Uniform,
    MiddleSpike,
    SkewedDecay,
}

/// Spec for one synthetic decoding stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub kind: WorkloadKind,
    /// Stream length.
    pub n: usize,
    /// Embedding dimension; must match the model.
    pub d: usize,
    pub seed: Seed,
    /// Spike location for `middle_spike`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spike_position: Option<u64>,
    /// Spike key magnitude for `middle_spike`, shared-direction amplitude
    /// for `skewed_decay`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spike_strength: Option<f64>,
}

impl Workload {
    pub fn uniform(n: usize, d: usize, seed: Seed) -> Workload {
        Workload { kind: WorkloadKind::Uniform, n, d, seed, spike_position: None, spike_strength: None }
    }

    pub fn middle_spike(n: usize, d: usize, seed: Seed, position: u64, strength: f64) -> Workload {
        Workload {
            kind: WorkloadKind::MiddleSpike,
            n,
            d,
            seed,
            spike_position: Some(position),
            spike_strength: Some(strength),
        }
    }

    pub fn skewed_decay(n: usize, d: usize, seed: Seed, strength: f64) -> Workload {
        Workload {
            kind: WorkloadKind::SkewedDecay,
            n,
            d,
            seed,
            spike_position: None,
            spike_strength: Some(strength),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 || self.d < 1 {
            return Err(Error::invalid_argument("workload needs n >= 1 and d >= 1"));
        }
        match self.kind {
            WorkloadKind::MiddleSpike => {
                let p = self
                    .spike_position
                    .ok_or_else(|| Error::invalid_argument("middle_spike needs a spike position"))?;
                if p as usize >= self.n {
                    return Err(Error::invalid_argument(format!(
                        "spike position {p} outside stream of length {}",
                        self.n
                    )));
                }
                if p as usize + 1 >= self.n {
                    return Err(Error::invalid_argument("spike needs at least one later query"));
                }
            }
            WorkloadKind::Uniform | WorkloadKind::SkewedDecay => {}
        }
        if let Some(c) = self.spike_strength {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::invalid_argument("strength must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Generate the embedding stream for a workload.
///
/// The model is needed because planted constructions are phrased in terms
/// of projected keys and queries, not raw embeddings.
pub fn generate_workload(spec: &Workload, model: &AttentionModel) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if spec.d != model.dim() {
        return Err(Error::invalid_argument(format!(
            "workload dimension {} does not match model dimension {}",
            spec.d,
            model.dim()
        )));
    }
    let mut rng = spec.seed.derive(100).rng();
    let mut stream: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| (0..spec.d).map(|_| standard_normal(&mut rng)).collect())
        .collect();
    match spec.kind {
        WorkloadKind::Uniform => {}
        WorkloadKind::MiddleSpike => {
            let p = spec.spike_position.unwrap() as usize;
            let strength = spec.spike_strength.unwrap_or(8.0 * (spec.d as f64).sqrt());
            // mean direction of all queries after the spike
            let mut mean = vec![0.0; spec.d];
            for x in &stream[p + 1..] {
                let q = matvec(model.query_weights(), x)?;
                for (m, qi) in mean.iter_mut().zip(&q) {
                    *m += qi;
                }
            }
            let norm = l2_norm(&mean);
            if norm < 1e-12 {
                return Err(Error::invalid_state("future queries have no mean direction"));
            }
            let key: Vec<f64> = mean.iter().map(|m| strength * m / norm).collect();
            stream[p] = solve_linear(model.key_weights(), &key)?;
        }
        WorkloadKind::SkewedDecay => {
            let strength = spec.spike_strength.unwrap_or(4.0);
            // shared direction, flipped if needed so that the induced
            // query-key alignment is positive
            let u: Vec<f64> = {
                let mut r = spec.seed.derive(101).rng();
                let v: Vec<f64> = (0..spec.d).map(|_| standard_normal(&mut r)).collect();
                let norm = l2_norm(&v);
                v.into_iter().map(|x| x / norm).collect()
            };
            let qu = matvec(model.query_weights(), &u)?;
            let ku = matvec(model.key_weights(), &u)?;
            let sign = if dot(&qu, &ku) >= 0.0 { 1.0 } else { -1.0 };
            let tau = spec.n as f64 / 4.0;
            for (t, x) in stream.iter_mut().enumerate() {
                let amp = sign * strength * (-(t as f64) / tau).exp();
                for (xi, ui) in x.iter_mut().zip(&u) {
                    *xi += amp * ui;
                }
            }
        }
    }
    Ok(stream)
}
