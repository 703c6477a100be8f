//! `hivekv` — batch experiment runner for the cache policy simulator.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 internal
//! invariant violation, 1 I/O failure. Any nonzero exit also writes a
//! single-line JSON error object to stderr.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use hivekv_core::{
    check_limsup_bounds, entropy_probe, optimal_ratio, simulate_recursion, BuzzConfig, Error as CoreError,
    Policy, RunSpec, Seed, WorkloadKind, SCHEMA_VERSION,
};

use config::{FileConfig, ResolvedRun, RunOverrides};

/// Errors carrying their process exit code.
#[derive(Debug)]
pub struct CliError {
    message: String,
    exit: u8,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    fn new(message: impl Into<String>, exit: u8) -> CliError {
        CliError { message: message.into(), exit }
    }

    pub fn config(message: impl Into<String>) -> CliError {
        CliError::new(message, 2)
    }

    pub fn io(message: impl Into<String>) -> CliError {
        CliError::new(message, 1)
    }

    pub fn from_core(err: CoreError) -> CliError {
        match err {
            CoreError::InvalidArgument(_) => CliError::new(err.to_string(), 2),
            CoreError::Precondition(_) | CoreError::InvalidState(_) => {
                CliError::new(err.to_string(), 3)
            }
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.exit
    }
}

#[derive(Parser)]
#[command(
    name = "hivekv",
    version,
    about = "Deterministic KV-cache eviction policy simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode one workload under a policy and write the run report
    Run(RunArgs),
    /// One run per threshold/window ratio at a fixed cache size
    Sweep(SweepArgs),
    /// Optimal threshold-to-window ratio for a stride
    Estimate(EstimateArgs),
    /// Old-region size recursion trace and its limit bounds
    Recursion(RecursionArgs),
    /// Softmax entropy drift under constant and log-n scaling
    Entropy(EntropyArgs),
    /// Parse and validate a config file without running anything
    ValidateConfig(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// full | local_window | sink_window | heavy_hitter_topk | buzz |
    /// buzz_swapped_strides | buzz_no_local_max
    #[arg(long)]
    policy: Option<String>,
    /// Sink size
    #[arg(long)]
    k: Option<usize>,
    /// Window size
    #[arg(long)]
    w: Option<usize>,
    /// Sampling stride for buffered tokens
    #[arg(long)]
    stride: Option<usize>,
    /// Middle-region eviction threshold
    #[arg(long)]
    threshold: Option<usize>,
    /// Token budget (heavy_hitter_topk only)
    #[arg(long)]
    budget: Option<usize>,
    /// Stream length
    #[arg(long)]
    n: Option<usize>,
    /// Hidden dimension
    #[arg(long)]
    d: Option<usize>,
    /// Root seed; HIVEKV_SEED is the fallback
    #[arg(long)]
    seed: Option<u64>,
    /// uniform | middle_spike | skewed_decay
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    spike_position: Option<u64>,
    #[arg(long)]
    spike_strength: Option<f64>,
    /// Scale attention logits by log_base(cache length)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    logn: Option<bool>,
    #[arg(long)]
    logn_base: Option<usize>,
    /// Report path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-step rows as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Threshold/window ratios to visit
    #[arg(long, value_delimiter = ',', default_value = "1.5,2.5,3.5,4.5,5.5,6.5")]
    ratios: Vec<f64>,
    /// Total cache size k + T + w held constant across the grid
    #[arg(long, default_value_t = 200)]
    cache_size: usize,
    #[arg(long, default_value_t = config::DEFAULT_SINK)]
    k: usize,
    #[arg(long, default_value_t = config::DEFAULT_STRIDE)]
    stride: usize,
    #[arg(long, default_value_t = config::DEFAULT_N)]
    n: usize,
    #[arg(long, default_value_t = config::DEFAULT_D)]
    d: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// uniform | middle_spike | skewed_decay
    #[arg(long, default_value = "uniform")]
    workload: String,
    /// Concurrent grid points
    #[arg(long)]
    jobs: Option<usize>,
    /// Report path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    stride: usize,
}

#[derive(Args)]
struct RecursionArgs {
    #[arg(long)]
    stride: usize,
    #[arg(long)]
    threshold: usize,
    #[arg(long, default_value_t = 50)]
    max_steps: usize,
}

#[derive(Args)]
struct EntropyArgs {
    /// Context lengths; must include the base
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024,2048,4096,8192")]
    grid: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 512)]
    base: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Recursion(args) => cmd_recursion(args),
        Command::Entropy(args) => cmd_entropy(args),
        Command::ValidateConfig(args) => cmd_validate_config(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let obj = serde_json::json!({
                "error": { "exit": err.exit_code(), "message": err.message }
            });
            eprintln!("{obj}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    match flag {
        Some(s) => Ok(s),
        None => Ok(config::seed_from_env()?.unwrap_or(config::DEFAULT_SEED)),
    }
}

fn write_or_print(path: &Option<PathBuf>, contents: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, contents)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{contents}");
            Ok(())
        }
    }
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let overrides = RunOverrides {
        policy: args.policy,
        k: args.k,
        w: args.w,
        stride: args.stride,
        threshold: args.threshold,
        budget: args.budget,
        n: args.n,
        d: args.d,
        seed: args.seed,
        workload: args.workload,
        spike_position: args.spike_position,
        spike_strength: args.spike_strength,
        logn: args.logn,
        logn_base: args.logn_base,
    };
    let ResolvedRun { spec, json_out, csv_out } = config::resolve_run(&overrides, &file)?;
    let json_out = args.out.or(json_out);
    let csv_out = args.csv.or(csv_out);

    let report = spec.run().map_err(CliError::from_core)?;
    eprintln!(
        "{}: n={} d={} seed={} mean_err={:.6} max_err={:.6} budget={:.1}% evictions={}",
        report.policy,
        spec.n,
        spec.d,
        spec.seed.0,
        report.summary.mean_err,
        report.summary.max_err,
        report.summary.budget_pct,
        report.summary.eviction_count
    );
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::io(format!("report serialization failed: {e}")))?;
    write_or_print(&json_out, &json)?;
    if let Some(path) = &csv_out {
        std::fs::write(path, report.to_csv())
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    requested_ratio: f64,
    actual_ratio: f64,
    k: usize,
    w: usize,
    threshold: usize,
    mean_err: f64,
    max_err: f64,
    budget_pct: f64,
}

#[derive(Debug, Serialize)]
struct SweepReport {
    schema_version: u32,
    seed: u64,
    stride: usize,
    cache_size: usize,
    k: usize,
    n: usize,
    d: usize,
    workload: WorkloadKind,
    rows: Vec<SweepRow>,
    warnings: Vec<String>,
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let seed = resolve_seed(args.seed)?;
    let workload_kind = config::parse_workload_kind(&args.workload)?;
    if args.cache_size <= args.k {
        return Err(CliError::config("cache size must exceed the sink size"));
    }

    // Grid points at constant k + T + w: w from the ratio, T the remainder.
    let mut warnings = Vec::new();
    let mut points = Vec::new();
    for &ratio in &args.ratios {
        if ratio.is_nan() || ratio <= 0.0 {
            warnings.push(format!("ratio {ratio} skipped: not positive"));
            continue;
        }
        let body = args.cache_size - args.k;
        let w = ((body as f64) / (1.0 + ratio)).round() as usize;
        if w < 1 {
            warnings.push(format!("ratio {ratio} skipped: window rounds to zero"));
            continue;
        }
        let threshold = body - w;
        if threshold < args.stride {
            warnings.push(format!(
                "ratio {ratio} skipped: threshold {threshold} below stride {}",
                args.stride
            ));
            continue;
        }
        points.push((ratio, w, threshold));
    }

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |p| p.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::io(format!("cannot build thread pool: {e}")))?;

    let rows: Vec<CliResult<SweepRow>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(ratio, w, threshold)| {
                let buzz = BuzzConfig::new(args.k, w, args.stride, threshold)
                    .map_err(CliError::from_core)?;
                let spec = RunSpec {
                    seed: Seed(seed),
                    n: args.n,
                    d: args.d,
                    policy: Policy::buzz(buzz),
                    workload: workload_kind,
                    spike_position: match workload_kind {
                        WorkloadKind::MiddleSpike => Some(args.n as u64 / 2),
                        _ => None,
                    },
                    spike_strength: match workload_kind {
                        WorkloadKind::MiddleSpike => Some(8.0 * (args.d as f64).sqrt()),
                        WorkloadKind::SkewedDecay => Some(4.0),
                        WorkloadKind::Uniform => None,
                    },
                    logn: false,
                    logn_base: 512,
                };
                let report = spec.run().map_err(CliError::from_core)?;
                Ok(SweepRow {
                    requested_ratio: ratio,
                    actual_ratio: threshold as f64 / w as f64,
                    k: args.k,
                    w,
                    threshold,
                    mean_err: report.summary.mean_err,
                    max_err: report.summary.max_err,
                    budget_pct: report.summary.budget_pct,
                })
            })
            .collect()
    });
    let rows: Vec<SweepRow> = rows.into_iter().collect::<CliResult<_>>()?;

    for row in &rows {
        eprintln!(
            "T/w {:>5.2} (w={:>3} T={:>3}): mean_err={:.6} max_err={:.6} budget={:.1}%",
            row.actual_ratio, row.w, row.threshold, row.mean_err, row.max_err, row.budget_pct
        );
    }
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    let report = SweepReport {
        schema_version: SCHEMA_VERSION,
        seed,
        stride: args.stride,
        cache_size: args.cache_size,
        k: args.k,
        n: args.n,
        d: args.d,
        workload: workload_kind,
        rows,
        warnings,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::io(format!("report serialization failed: {e}")))?;
    write_or_print(&args.out, &json)
}

fn cmd_estimate(args: EstimateArgs) -> CliResult<()> {
    let prediction = optimal_ratio(args.stride).map_err(CliError::from_core)?;
    eprintln!(
        "stride {} ({:?}): optimal T/w = {:.4}",
        prediction.stride, prediction.parity, prediction.ratio
    );
    let json = serde_json::to_string_pretty(&prediction)
        .map_err(|e| CliError::io(e.to_string()))?;
    println!("{json}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct RecursionReportOut {
    schema_version: u32,
    report: hivekv_core::RecursionReport,
    ceil_bound: hivekv_core::BoundCheck,
    floor_bound: hivekv_core::BoundCheck,
}

fn cmd_recursion(args: RecursionArgs) -> CliResult<()> {
    let report = simulate_recursion(args.stride, args.threshold, args.max_steps)
        .map_err(CliError::from_core)?;
    let ceil_bound = check_limsup_bounds(&report.ceil).map_err(CliError::from_core)?;
    let floor_bound = check_limsup_bounds(&report.floor).map_err(CliError::from_core)?;
    eprintln!(
        "ceil variant:  a* = {:?} after {} terms (bound holds: {})",
        report.ceil.converged_value(),
        report.ceil.values.len(),
        ceil_bound.holds
    );
    eprintln!(
        "floor variant: a* = {:?} after {} terms (bound holds: {})",
        report.floor.converged_value(),
        report.floor.values.len(),
        floor_bound.holds
    );
    let out = RecursionReportOut { schema_version: SCHEMA_VERSION, report, ceil_bound, floor_bound };
    let json = serde_json::to_string_pretty(&out).map_err(|e| CliError::io(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn cmd_entropy(args: EntropyArgs) -> CliResult<()> {
    let seed = resolve_seed(args.seed)?;
    let probe = entropy_probe(&args.grid, Seed(seed), args.trials, args.base)
        .map_err(CliError::from_core)?;
    for (i, &n) in probe.n_grid.iter().enumerate() {
        eprintln!(
            "n={:>6}: H_constant={:.4} H_logn={:.4}",
            n, probe.entropies_constant[i], probe.entropies_logn[i]
        );
    }
    eprintln!(
        "drift vs n={}: constant {:.4}, logn {:.4}",
        args.base, probe.drift_constant, probe.drift_logn
    );
    let json = serde_json::to_string_pretty(&probe).map_err(|e| CliError::io(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn cmd_validate_config(args: ValidateArgs) -> CliResult<()> {
    let file = FileConfig::load(&args.config)?;
    let resolved = config::resolve_run(&RunOverrides::default(), &file)?;
    let summary = serde_json::json!({
        "ok": true,
        "config": resolved.spec,
        "output": {
            "json": resolved.json_out,
            "csv": resolved.csv_out,
        }
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::io(e.to_string()))?);
    Ok(())
}
