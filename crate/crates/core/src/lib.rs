//! Deterministic desk-scale simulator for KV-cache eviction policies.
//!
//! A tiny single-head attention engine decodes seeded synthetic token
//! streams while a cache policy decides which key/value entries survive.
//! The buzz policy keeps an attention sink and a sliding window, stages
//! middle tokens in a buffer, and on reaching a threshold samples them in
//! stride-sized hives (score argmax for fresh tokens, interval selection
//! for older ones). Baseline policies (dense, local window, sink+window,
//! greedy heavy-hitter top-k) and ablation variants run behind the same
//! driver interface so runs are directly comparable against a dense oracle.
//!
//! The `estimator` module carries the supporting analysis tools: the
//! optimal threshold-to-window ratio rule, the old-region size recursion
//! with its limit bounds, and a softmax entropy probe for log-n scaling.

pub mod attention;
pub mod cache;
pub mod drivers;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod numeric;
pub mod policy;
pub mod workload;

pub use attention::{AttentionModel, ScoreTracker, StepOutput, DEFAULT_LOGN_BASE};
pub use cache::{BuzzConfig, CacheState, KvEntry, Occupancy, RegionDump};
pub use drivers::{build_policy_cache, BuzzCache, FullCache, PolicyCache};
pub use error::{Error, Result};
pub use estimator::{
    check_limsup_bounds, entropy_probe, optimal_ratio, recursion_trace, simulate_recursion,
    BoundCheck, EntropyProbe, Parity, RatioPrediction, RecursionReport, RecursionTrace, Rounding,
    ScalePolicy,
};
pub use experiment::{
    positional_coverage, run_experiment, simulate_policy, ApproxReport, ExperimentTrace,
    PolicyTrace, RunSpec, StepRecord, Summary, SCHEMA_VERSION,
};
pub use numeric::{matvec, seeded_gaussian_matrix, softmax, Matrix, Seed};
pub use policy::{
    buzz_evict, interval_sample, local_max_sample, prefill_compact, BuzzMode, EvictionOutcome,
    Policy, PrefillOutcome,
};
pub use workload::{generate_workload, Workload, WorkloadKind};
