//! Command-line interface: `run`, `sweep`, `check`, `report` and `gen`.
//!
//! Exit codes: 0 success, 1 failure (including failed checks), 2 usage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checks::run_checks;
use crate::config::{config_hash, load_settings, parse_settings, RunManifest, Settings};
use crate::envs::{gen_surrogate_dataset, EnvKind};
use crate::error::{Error, Result};
use crate::harness::{aggregate, lambda_sweep, metrics, run_seeds, write_trajectory_file, AggregateRow, MetricsReport};
use crate::model::CiMethod;
use crate::policy::PolicyKind;

// Like print!/println!, but a closed stdout (e.g. piped into `head`) is not
// a panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "ot-orch", version, about = "Simulate OT-penalized bandit routing across agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured policy over every seed.
    Run(RunArgs),
    /// Sweep the alignment penalty and evaluate the baselines once.
    Sweep(SweepArgs),
    /// Run verification checks.
    Check(CheckArgs),
    /// Pool summaries from several run directories.
    Report(ReportArgs),
    /// Write a surrogate classification dataset.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override `key=value` or `section.key=value` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Use seeds 1..=N.
    #[arg(long, conflicts_with = "seed_list")]
    pub seeds: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Worker threads for seed-parallel execution.
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated λ values; the config's `lambda_grid` when omitted.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Selector {
    All,
    Regret,
    Structural,
    Margin,
    Convergence,
    Consistency,
    Ot,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(value_enum, default_value = "all")]
    pub selector: Selector,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories (or summary files).
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the pooled table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 569)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub seeds: Vec<SeedReport>,
    /// Empty with fewer than two seeds.
    pub aggregate: Vec<AggregateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub manifest: RunManifest,
    pub environment: EnvKind,
    pub lambda: f64,
    pub lambda_eval: f64,
    pub policies: Vec<PolicySummary>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Run(a) => cmd_run(a).map(|_| 0),
        Command::Sweep(a) => cmd_sweep(a).map(|_| 0),
        Command::Check(a) => cmd_check(a),
        Command::Report(a) => cmd_report(&a.runs, a.out.as_deref()).map(|_| 0),
        Command::Gen(a) => cmd_gen(a.n, a.d, a.seed, &a.out).map(|_| 0),
    }
}

fn resolve(args: &ConfigArgs) -> Result<(Settings, String)> {
    match &args.config {
        Some(path) => {
            let (s, bytes) = load_settings(path, &args.overrides)?;
            Ok((s, config_hash(&bytes)))
        }
        None => Ok((parse_settings("", &args.overrides)?, config_hash(b""))),
    }
}

fn resolve_run(args: &RunArgs) -> Result<(Settings, RunManifest)> {
    let (mut settings, hash) = resolve(&args.config)?;
    if let Some(n) = args.seeds {
        settings.run.seeds = (1..=n).collect();
    }
    if let Some(list) = &args.seed_list {
        settings.run.seeds = list.clone();
    }
    if let Some(p) = args.parallel {
        settings.run.parallel = p;
    }
    settings.experiment().validate()?;
    let manifest = RunManifest {
        config_path: args.config.config.clone(),
        config_hash: hash,
        overrides: args.config.overrides.clone(),
        out_dir: args.out.clone(),
        seeds: settings.run.seeds.clone(),
        config: settings.clone(),
    };
    Ok((settings, manifest))
}

/// Runs all (policy, seed) episodes, writes one CSV per episode and
/// `summary.json`, and prints the aggregate table.
pub fn cmd_run(args: &RunArgs) -> Result<Summary> {
    let (settings, manifest) = resolve_run(args)?;
    let cfg = settings.experiment();
    fs::create_dir_all(&args.out)?;
    let mut policies = Vec::new();
    for kind in settings.policies()? {
        let trajs = run_seeds(kind, &cfg, &cfg.seeds, settings.run.parallel)?;
        let mut seeds = Vec::with_capacity(trajs.len());
        for t in &trajs {
            write_trajectory_file(t, &args.out.join(format!("{kind}_seed{}.csv", t.seed)))?;
            seeds.push(SeedReport { seed: t.seed, metrics: metrics(t, cfg.eval_lambda()) });
        }
        let reports: Vec<MetricsReport> = seeds.iter().map(|s| s.metrics.clone()).collect();
        let aggregate = if reports.len() >= 2 { aggregate(&reports, cfg.ci_method)? } else { Vec::new() };
        policies.push(PolicySummary { policy: kind, seeds, aggregate });
    }
    let summary = Summary {
        manifest,
        environment: cfg.environment.kind,
        lambda: cfg.lambda,
        lambda_eval: cfg.eval_lambda(),
        policies,
    };
    fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    for p in &summary.policies {
        outln!("{} ({})", p.policy, summary.environment);
        if p.aggregate.is_empty() {
            for s in &p.seeds {
                outln!(
                    "  seed {}: net_utility={:.4} alignment_cost={:.4} oracle_regret={:.4}",
                    s.seed, s.metrics.cum_net_utility, s.metrics.cum_alignment_cost, s.metrics.oracle_regret
                );
            }
        }
        for row in &p.aggregate {
            outln!("  {:<26} {:>12.4} ± {:.4}", row.metric, row.mean, row.ci_halfwidth);
        }
    }
    Ok(summary)
}

/// Runs the λ sweep and writes `sweep.csv` (one row per λ per metric plus
/// baseline rows) and `sweep.json`.
pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let (settings, manifest) = resolve_run(&args.run)?;
    let cfg = settings.experiment();
    let grid = args.grid.clone().unwrap_or_else(|| settings.run.lambda_grid.clone());
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidConfig("lambda grid must hold nonnegative reals".into()));
    }
    let rows = lambda_sweep(&grid, &cfg, &cfg.seeds, settings.run.parallel)?;
    fs::create_dir_all(&args.run.out)?;
    let mut w = csv::Writer::from_path(args.run.out.join("sweep.csv"))?;
    w.write_record(["row", "policy", "lambda", "metric", "mean", "ci_halfwidth", "n_seeds"])?;
    for r in &rows {
        for a in &r.aggregates {
            w.write_record([
                r.label.clone(),
                r.policy.to_string(),
                r.lambda.map_or(String::new(), |l| l.to_string()),
                a.metric.clone(),
                a.mean.to_string(),
                a.ci_halfwidth.to_string(),
                a.n_seeds.to_string(),
            ])?;
        }
    }
    w.flush()?;
    fs::write(
        args.run.out.join("sweep.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "manifest": manifest, "rows": rows }))?,
    )?;
    outln!("{:<16} {:>24} {:>24} {:>24}", "row", "net_utility", "alignment_cost", "oracle_regret");
    for r in &rows {
        let cell = |m: &str| {
            r.aggregates
                .iter()
                .find(|a| a.metric == m)
                .map_or(String::from("-"), |a| format!("{:.3} ± {:.3}", a.mean, a.ci_halfwidth))
        };
        outln!(
            "{:<16} {:>24} {:>24} {:>24}",
            r.label,
            cell("cum_net_utility"),
            cell("cum_alignment_cost"),
            cell("oracle_regret")
        );
    }
    Ok(())
}

/// Prints one line per check; returns 1 if any failed.
pub fn cmd_check(args: &CheckArgs) -> Result<i32> {
    let (settings, _) = resolve(&args.config)?;
    let selector = args
        .selector
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_else(|| "all".into());
    let results = run_checks(&selector, &settings.checks)?;
    for r in &results {
        outln!("{r}");
    }
    Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
}

fn summary_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("summary.json")
    } else {
        p.to_path_buf()
    }
}

/// A pooled table row: one environment and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub environment: EnvKind,
    pub policy: PolicyKind,
    pub aggregates: Vec<AggregateRow>,
}

/// Pools per-seed reports across summaries and aggregates per
/// (environment, policy). Input order does not matter.
pub fn pool_summaries(summaries: &[Summary]) -> Result<Vec<ReportRow>> {
    let mut groups: BTreeMap<(EnvKind, PolicyKind), Vec<(u64, String, MetricsReport)>> = BTreeMap::new();
    let mut method = None;
    for s in summaries {
        method.get_or_insert(s.manifest.config.run.ci_method);
        for p in &s.policies {
            for r in &p.seeds {
                // Serialized form breaks ties between equal seeds deterministically.
                let key = serde_json::to_string(&r.metrics)?;
                groups
                    .entry((s.environment, p.policy))
                    .or_default()
                    .push((r.seed, key, r.metrics.clone()));
            }
        }
    }
    let method = method.unwrap_or(CiMethod::StudentT);
    groups
        .into_iter()
        .map(|((environment, policy), mut entries)| {
            entries.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            let reports: Vec<MetricsReport> = entries.into_iter().map(|e| e.2).collect();
            Ok(ReportRow { environment, policy, aggregates: aggregate(&reports, method)? })
        })
        .collect()
}

pub fn cmd_report(runs: &[PathBuf], out: Option<&Path>) -> Result<Vec<ReportRow>> {
    let summaries = runs
        .iter()
        .map(|p| {
            let path = summary_path(p);
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(serde_json::from_str::<Summary>(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = pool_summaries(&summaries)?;
    let metrics = ["cum_net_utility", "cum_alignment_cost", "oracle_regret", "team_accuracy", "escalation_rate"];
    let mut env = None;
    for r in &rows {
        if env != Some(r.environment) {
            env = Some(r.environment);
            out!("\n{:<18}", r.environment.as_str());
            for m in metrics {
                out!(" {m:>24}");
            }
            outln!();
        }
        out!("{:<18}", r.policy.as_str());
        for m in metrics {
            let cell = r
                .aggregates
                .iter()
                .find(|a| a.metric == m)
                .map_or("-".to_string(), |a| format!("{:.3} ± {:.3}", a.mean, a.ci_halfwidth));
            out!(" {cell:>24}");
        }
        outln!();
    }
    if let Some(path) = out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["environment", "policy", "metric", "mean", "ci_halfwidth", "n_seeds"])?;
        for r in &rows {
            for a in &r.aggregates {
                w.write_record([
                    r.environment.to_string(),
                    r.policy.to_string(),
                    a.metric.clone(),
                    a.mean.to_string(),
                    a.ci_halfwidth.to_string(),
                    a.n_seeds.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(rows)
}

pub fn cmd_gen(n: usize, d: usize, seed: u64, path: &Path) -> Result<()> {
    gen_surrogate_dataset(n, d, seed, path)?;
    outln!("wrote {} ({n} rows, {d} features)", path.display());
    Ok(())
}
