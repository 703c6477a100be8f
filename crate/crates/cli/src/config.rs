//! Config-file loading and flag/file/default resolution.
//!
//! Precedence, highest first: command-line flags, config-file values, the
//! `HIVEKV_SEED` environment variable (seed only), built-in defaults.
//! Unknown keys in a config file are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use hivekv_core::{optimal_ratio, BuzzConfig, BuzzMode, Policy, RunSpec, Seed, WorkloadKind};

use crate::{CliError, CliResult};

pub const DEFAULT_SINK: usize = 4;
pub const DEFAULT_WINDOW: usize = 64;
pub const DEFAULT_STRIDE: usize = 5;
pub const DEFAULT_N: usize = 1024;
pub const DEFAULT_D: usize = 64;
pub const DEFAULT_SEED: u64 = 0;
pub const SEED_ENV: &str = "HIVEKV_SEED";

/// On-disk config. Every field is optional; sections mirror the flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: Option<String>,
    pub k: Option<usize>,
    pub w: Option<usize>,
    pub stride: Option<usize>,
    pub threshold: Option<usize>,
    pub budget: Option<usize>,
    pub logn: Option<bool>,
    pub logn_base: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub spike_position: Option<u64>,
    pub spike_strength: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<FileConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }
}

/// Flag values for `run`, all optional so file/default fallback can apply.
#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub policy: Option<String>,
    pub k: Option<usize>,
    pub w: Option<usize>,
    pub stride: Option<usize>,
    pub threshold: Option<usize>,
    pub budget: Option<usize>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub seed: Option<u64>,
    pub workload: Option<String>,
    pub spike_position: Option<u64>,
    pub spike_strength: Option<f64>,
    pub logn: Option<bool>,
    pub logn_base: Option<usize>,
}

/// Fully resolved `run` invocation.
#[derive(Debug)]
pub struct ResolvedRun {
    pub spec: RunSpec,
    pub json_out: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
}

pub fn seed_from_env() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn parse_workload_kind(name: &str) -> CliResult<WorkloadKind> {
    match name {
        "uniform" => Ok(WorkloadKind::Uniform),
        "middle_spike" => Ok(WorkloadKind::MiddleSpike),
        "skewed_decay" => Ok(WorkloadKind::SkewedDecay),
        other => Err(CliError::config(format!(
            "unknown workload {other:?}; expected uniform, middle_spike, or skewed_decay"
        ))),
    }
}

/// Default threshold for a window/stride pair, from the ratio rule.
pub fn default_threshold(window: usize, stride: usize) -> CliResult<usize> {
    let ratio = optimal_ratio(stride).map_err(CliError::from_core)?.ratio;
    Ok(((window as f64) * ratio).round().max(stride as f64) as usize)
}

/// Merge flags over file values over defaults into a runnable spec.
pub fn resolve_run(overrides: &RunOverrides, file: &FileConfig) -> CliResult<ResolvedRun> {
    let seed = match overrides.seed.or(file.seed) {
        Some(s) => s,
        None => seed_from_env()?.unwrap_or(DEFAULT_SEED),
    };
    let kind_name = overrides
        .policy
        .clone()
        .or_else(|| file.policy.kind.clone())
        .unwrap_or_else(|| "buzz".to_string());
    let k = overrides.k.or(file.policy.k).unwrap_or(DEFAULT_SINK);
    let w = overrides.w.or(file.policy.w).unwrap_or(DEFAULT_WINDOW);
    let stride = overrides.stride.or(file.policy.stride).unwrap_or(DEFAULT_STRIDE);
    let threshold = match overrides.threshold.or(file.policy.threshold) {
        Some(t) => t,
        None => default_threshold(w, stride)?,
    };

    let policy = match kind_name.as_str() {
        "full" => Policy::Full,
        "local_window" => Policy::LocalWindow { window: w },
        "sink_window" => Policy::SinkWindow { sink: k, window: w },
        "heavy_hitter_topk" => {
            let budget = overrides.budget.or(file.policy.budget).unwrap_or(2 * w);
            Policy::HeavyHitterTopK { budget, window: w }
        }
        "buzz" | "buzz_swapped_strides" | "buzz_no_local_max" => {
            let config = BuzzConfig::new(k, w, stride, threshold).map_err(CliError::from_core)?;
            let mode = match kind_name.as_str() {
                "buzz_swapped_strides" => BuzzMode::SwappedStrides,
                "buzz_no_local_max" => BuzzMode::NoLocalMax,
                _ => BuzzMode::Standard,
            };
            Policy::Buzz { config, mode }
        }
        other => {
            return Err(CliError::config(format!(
                "unknown policy {other:?}; expected full, local_window, sink_window, \
                 heavy_hitter_topk, buzz, buzz_swapped_strides, or buzz_no_local_max"
            )))
        }
    };
    policy.validate().map_err(CliError::from_core)?;

    let n = overrides.n.or(file.workload.n).unwrap_or(DEFAULT_N);
    let d = overrides.d.or(file.workload.d).unwrap_or(DEFAULT_D);
    let workload_kind = match overrides.workload.clone().or_else(|| file.workload.kind.clone()) {
        Some(name) => parse_workload_kind(&name)?,
        None => WorkloadKind::Uniform,
    };
    let spike_position = overrides.spike_position.or(file.workload.spike_position).or(
        if workload_kind == WorkloadKind::MiddleSpike { Some(n as u64 / 2) } else { None },
    );
    let spike_strength = overrides.spike_strength.or(file.workload.spike_strength).or(
        match workload_kind {
            WorkloadKind::MiddleSpike => Some(8.0 * (d as f64).sqrt()),
            WorkloadKind::SkewedDecay => Some(4.0),
            WorkloadKind::Uniform => None,
        },
    );

    let spec = RunSpec {
        seed: Seed(seed),
        n,
        d,
        policy,
        workload: workload_kind,
        spike_position,
        spike_strength,
        logn: overrides.logn.or(file.policy.logn).unwrap_or(false),
        logn_base: overrides.logn_base.or(file.policy.logn_base).unwrap_or(512),
    };
    spec.workload().validate().map_err(CliError::from_core)?;
    if spec.logn_base < 2 {
        return Err(CliError::config("logn base must be >= 2"));
    }
    Ok(ResolvedRun {
        spec,
        json_out: file.output.json.clone(),
        csv_out: file.output.csv.clone(),
    })
}
