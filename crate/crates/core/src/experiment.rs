//! Synchronized policy-versus-oracle decoding runs and their reports.
//!
//! `run_experiment` decodes one stream twice in lockstep — once against a
//! dense cache and once against the policy under test — and records the
//! per-step output error, occupancy, and eviction activity. Queries come
//! from the workload, not from generated outputs, so both decodes see the
//! same query at every step regardless of how far the approximation drifts.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionModel, DEFAULT_LOGN_BASE};
use crate::cache::KvEntry;
use crate::drivers::{build_policy_cache, FullCache, PolicyCache};
use crate::error::{Error, Result};
use crate::numeric::{l2_norm, Seed};
use crate::policy::{EvictionOutcome, Policy};
use crate::workload::{generate_workload, Workload, WorkloadKind};

pub const SCHEMA_VERSION: u32 = 1;

// Sub-seed streams of a run's root seed.
const MODEL_SEED_STREAM: u64 = 11;
const WORKLOAD_SEED_STREAM: u64 = 12;

/// One decoding step of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    /// ‖policy output − dense output‖₂.
    pub err_abs: f64,
    /// err_abs / ‖dense output‖₂.
    pub err_rel: f64,
    /// Policy cache size at decode time.
    pub occupancy: usize,
}

/// Aggregates over a run. `mean_err`/`max_err` are relative errors;
/// absolute counterparts ride along.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_err: f64,
    pub max_err: f64,
    pub mean_err_abs: f64,
    pub max_err_abs: f64,
    /// Mean policy occupancy as a percentage of mean dense occupancy.
    pub budget_pct: f64,
    pub decile_hist: Vec<u64>,
    pub comparisons: u64,
    pub eviction_count: u64,
}

/// One eviction with the dense oracle's view of the middle region at that
/// step, for retention analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvictionRecord {
    /// Step index (token position) at which the eviction ran.
    pub step: u64,
    pub outcome: EvictionOutcome,
    /// Dense accumulated score per pre-eviction middle position.
    pub dense_middle_scores: Vec<PositionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub position: u64,
    pub score: f64,
}

/// Everything a policy run produced besides its configuration echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTrace {
    pub per_step: Vec<StepRecord>,
    pub summary: Summary,
    /// Final kept positions, ascending.
    pub kept_positions: Vec<u64>,
    pub evictions: Vec<EvictionRecord>,
}

/// Fully resolved run description; reports embed it verbatim so any report
/// can be regenerated from its own `config` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Root seed; model and workload use derived sub-streams.
    pub seed: Seed,
    pub n: usize,
    pub d: usize,
    pub policy: Policy,
    pub workload: WorkloadKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike_position: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike_strength: Option<f64>,
    #[serde(default)]
    pub logn: bool,
    #[serde(default = "default_logn_base")]
    pub logn_base: usize,
}

fn default_logn_base() -> usize {
    DEFAULT_LOGN_BASE
}

impl RunSpec {
    pub fn model(&self) -> Result<AttentionModel> {
        AttentionModel::seeded(self.d, self.seed.derive(MODEL_SEED_STREAM))?
            .with_logn(self.logn, self.logn_base)
    }

    pub fn workload(&self) -> Workload {
        Workload {
            kind: self.workload,
            n: self.n,
            d: self.d,
            seed: self.seed.derive(WORKLOAD_SEED_STREAM),
            spike_position: self.spike_position,
            spike_strength: self.spike_strength,
        }
    }

    /// Run the experiment this spec describes.
    pub fn run(&self) -> Result<ApproxReport> {
        let model = self.model()?;
        let workload = self.workload();
        let trace = run_experiment(&model, &self.policy, &workload)?;
        Ok(ApproxReport {
            schema_version: SCHEMA_VERSION,
            policy: self.policy.name().to_string(),
            workload: self.workload,
            config: self.clone(),
            per_step: trace.per_step,
            summary: trace.summary,
            kept_positions: trace.kept_positions,
            evictions: trace.evictions,
        })
    }
}

/// The machine-readable run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub schema_version: u32,
    /// Policy name, e.g. "buzz" or "sink_window".
    pub policy: String,
    pub workload: WorkloadKind,
    pub config: RunSpec,
    pub per_step: Vec<StepRecord>,
    pub summary: Summary,
    pub kept_positions: Vec<u64>,
    pub evictions: Vec<EvictionRecord>,
}

impl ApproxReport {
    /// Flatten the per-step records to CSV. Header is fixed:
    /// `t,err_abs,err_rel,occupancy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,err_abs,err_rel,occupancy\n");
        for s in &self.per_step {
            out.push_str(&format!("{},{},{},{}\n", s.t, s.err_abs, s.err_rel, s.occupancy));
        }
        out
    }
}

/// Decode the workload against the dense oracle and the policy cache in
/// lockstep, recording per-step approximation error.
pub fn run_experiment(
    model: &AttentionModel,
    policy: &Policy,
    workload: &Workload,
) -> Result<ExperimentTrace> {
    if workload.d != model.dim() {
        return Err(Error::invalid_argument("workload and model dimensions differ"));
    }
    let stream = generate_workload(workload, model)?;
    let mut dense = FullCache::new();
    let mut cache = build_policy_cache(policy)?;
    let mut per_step = Vec::with_capacity(stream.len());
    let mut evictions = Vec::new();
    let mut occ_sum = 0u64;
    let mut dense_occ_sum = 0u64;

    for (t, x) in stream.iter().enumerate() {
        let (q, k, v) = model.project_token(x)?;
        let entry = KvEntry::new(k, v, t as u64);
        dense.append(entry.clone())?;
        cache.append(entry)?;

        let (dk, dv) = dense.snapshot();
        let dense_out = model.decode_step(&dk, &dv, &q)?;
        let (pk, pv) = cache.snapshot();
        let policy_out = model.decode_step(&pk, &pv, &q)?;

        let occupancy = cache.len();
        occ_sum += occupancy as u64;
        dense_occ_sum += dense.len() as u64;

        let diff: Vec<f64> =
            policy_out.output.iter().zip(&dense_out.output).map(|(a, b)| a - b).collect();
        let err_abs = l2_norm(&diff);
        let denom = l2_norm(&dense_out.output);
        let err_rel = if denom > 0.0 {
            err_abs / denom
        } else if err_abs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };

        dense.apply_attention(&dense_out.weights)?;
        cache.apply_attention(&policy_out.weights)?;

        if let Some(outcome) = cache.finish_step()? {
            let mut dense_middle_scores: Vec<PositionScore> = outcome
                .kept_positions
                .iter()
                .chain(&outcome.evicted_positions)
                .map(|&p| PositionScore {
                    position: p,
                    score: dense.score_of(p).expect("dense cache holds every position"),
                })
                .collect();
            dense_middle_scores.sort_by_key(|ps| ps.position);
            evictions.push(EvictionRecord { step: t as u64, outcome, dense_middle_scores });
        }

        per_step.push(StepRecord { t: t as u64, err_abs, err_rel, occupancy });
    }

    let kept_positions = cache.kept_positions();
    let decile_hist = positional_coverage(&kept_positions, stream.len() as u64)?;
    let n_steps = per_step.len().max(1) as f64;
    let summary = Summary {
        mean_err: per_step.iter().map(|s| s.err_rel).sum::<f64>() / n_steps,
        max_err: per_step.iter().map(|s| s.err_rel).fold(0.0, f64::max),
        mean_err_abs: per_step.iter().map(|s| s.err_abs).sum::<f64>() / n_steps,
        max_err_abs: per_step.iter().map(|s| s.err_abs).fold(0.0, f64::max),
        budget_pct: 100.0 * occ_sum as f64 / dense_occ_sum.max(1) as f64,
        decile_hist,
        comparisons: cache.comparisons(),
        eviction_count: evictions.len() as u64,
    };
    Ok(ExperimentTrace { per_step, summary, kept_positions, evictions })
}

/// Occupancy and eviction trace of a policy run without the dense twin.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrace {
    pub occupancy: Vec<usize>,
    pub kept_positions: Vec<u64>,
    pub evictions: Vec<EvictionOutcome>,
    pub comparisons: u64,
}

/// Drive only the policy cache over the workload. Scores still come from
/// real attention over the policy's own cache; there is just no oracle to
/// compare against, which makes long streams cheap.
pub fn simulate_policy(
    model: &AttentionModel,
    policy: &Policy,
    workload: &Workload,
) -> Result<PolicyTrace> {
    let stream = generate_workload(workload, model)?;
    let mut cache = build_policy_cache(policy)?;
    let mut occupancy = Vec::with_capacity(stream.len());
    let mut evictions = Vec::new();
    for (t, x) in stream.iter().enumerate() {
        let (q, k, v) = model.project_token(x)?;
        cache.append(KvEntry::new(k, v, t as u64))?;
        let (pk, pv) = cache.snapshot();
        let out = model.decode_step(&pk, &pv, &q)?;
        occupancy.push(cache.len());
        cache.apply_attention(&out.weights)?;
        if let Some(outcome) = cache.finish_step()? {
            evictions.push(outcome);
        }
    }
    Ok(PolicyTrace {
        occupancy,
        kept_positions: cache.kept_positions(),
        comparisons: cache.comparisons(),
        evictions,
    })
}

/// Count kept tokens per tenth of the original stream.
pub fn positional_coverage(kept_positions: &[u64], n: u64) -> Result<Vec<u64>> {
    if n < 1 {
        return Err(Error::invalid_argument("stream length must be >= 1"));
    }
    let mut hist = vec![0u64; 10];
    let mut prev: Option<u64> = None;
    for &p in kept_positions {
        if p >= n {
            return Err(Error::invalid_argument(format!("position {p} outside stream of {n}")));
        }
        if let Some(q) = prev {
            if p < q {
                return Err(Error::invalid_argument("positions must be sorted ascending"));
            }
        }
        prev = Some(p);
        hist[(p * 10 / n) as usize] += 1;
    }
    Ok(hist)
}
