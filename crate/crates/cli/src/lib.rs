//! Command-line front end: `solve`, `compare` and `trace`.
//!
//! Settings are resolved as built-in per-problem defaults, then the JSON
//! config file, then command-line flags.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use advpinn::evaluation::LossType;
use advpinn::evaluation::{self, ComparisonSummary, RunReport, StopReason, TraceSnapshot};
use advpinn::neural::{Activation, AdamConfig};
use advpinn::problems::{Problem, ProblemOverrides};
use advpinn::sampling::Scheme;
use advpinn::training::{self, TrainConfig};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "advpinn",
    version,
    about = "Neural ODE/PDE solvers trained on adversarially sampled collocation points"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one solver and write report.json, solver.json and metrics.csv.
    Solve(SolveArgs),
    /// Run several schemes over seeded trials; writes compare.json and compare.csv.
    Compare(CompareArgs),
    /// Record per-iteration samples, predictions and residuals (1-D problems); writes trace.csv.
    Trace(TraceArgs),
}

/// Flags shared by every command. Unset flags fall back to the config file,
/// then to the problem's defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// expdecay, logistic, hatom-n1, hatom-n2, laplace or expdecay-ode.
    #[arg(long)]
    pub problem: Option<String>,
    /// adversarial, uniform, linspace or noisy-linspace [default: adversarial].
    #[arg(long)]
    pub scheme: Option<String>,
    /// Collocation points per batch [default: 30; logistic 20; laplace 256].
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Stop once the evaluation loss is at or below this; "none" disables
    /// [default: 1e-6; hatom and laplace 1e-4].
    #[arg(long)]
    pub target_loss: Option<String>,
    /// Iteration budget [default: 20000; hatom and laplace 30000].
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Base seed; trial i of a comparison uses seed + i [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Iterations between evaluations of the stopping loss [default: 50].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Weight of the nearest-neighbour spread penalty; losses are sums over
    /// points, so it scales with n [default: per problem].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Neighbours per point in the spread penalty [default: 2].
    #[arg(long)]
    pub k: Option<usize>,
    /// Solver Adam learning rate [default: per problem].
    #[arg(long)]
    pub solver_lr: Option<f64>,
    /// Sampler Adam learning rate [default: per problem].
    #[arg(long)]
    pub sampler_lr: Option<f64>,
    /// Report every wall time as 0 so outputs are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    /// JSON config file; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: .].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated schemes [default: adversarial,noisy-linspace].
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<String>>,
    /// Trials per scheme [default: 10].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Parallel runs [default: available cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Iterations between snapshots [default: 1].
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Points of the plotting grid [default: 512].
    #[arg(long)]
    pub grid_n: Option<usize>,
}

/// `target_loss` in a config file: a positive number, or `"none"`/`null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSetting {
    Value(f64),
    Word(String),
}

/// The JSON config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Option<String>,
    pub overrides: Option<ProblemOverrides>,
    pub scheme: Option<String>,
    pub schemes: Option<Vec<String>>,
    pub trials: Option<usize>,
    pub jobs: Option<usize>,
    pub n_points: Option<usize>,
    pub max_iters: Option<usize>,
    #[serde(default, with = "double_option")]
    pub target_loss: Option<Option<TargetSetting>>,
    pub loss_type: Option<LossType>,
    pub eval_every: Option<usize>,
    pub seed: Option<u64>,
    pub mse_grid: Option<usize>,
    pub solver_hidden: Option<Vec<usize>>,
    pub solver_activation: Option<Activation>,
    pub solver_adam: Option<AdamConfig>,
    pub sampler_adam: Option<AdamConfig>,
    pub sampler_hidden: Option<Vec<usize>>,
    pub z_dim: Option<usize>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub eps_dist: Option<f64>,
    pub record_wall_time: Option<bool>,
    pub out: Option<PathBuf>,
    pub snapshot_every: Option<usize>,
    pub grid_n: Option<usize>,
}

/// Distinguishes an absent key from an explicit `null`.
mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Option<Option<T>>, D::Error> {
        Option::<T>::deserialize(d).map(Some)
    }

    pub fn serialize<T: Serialize, S: Serializer>(v: &Option<Option<T>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(inner) => inner.serialize(s),
            None => s.serialize_none(),
        }
    }
}

fn parse_target(text: &str) -> Result<Option<f64>> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("inf") {
        return Ok(None);
    }
    let v: f64 = t.parse().with_context(|| format!("invalid target loss '{text}'"))?;
    if v.is_infinite() {
        return Ok(None);
    }
    Ok(Some(v))
}

fn target_from_file(t: &Option<TargetSetting>) -> Result<Option<f64>> {
    match t {
        None => Ok(None),
        Some(TargetSetting::Value(v)) => Ok(Some(*v)),
        Some(TargetSetting::Word(w)) => parse_target(w),
    }
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: Problem,
    pub train: TrainConfig,
    pub file: FileConfig,
    pub out: PathBuf,
}

pub fn resolve(common: &CommonArgs) -> Result<Resolved> {
    let file = match &common.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };
    let name = common
        .problem
        .clone()
        .or_else(|| file.problem.clone())
        .context("no problem given; use --problem or the config key \"problem\"")?;
    let mut problem = Problem::by_name(&name)?;
    if let Some(o) = &file.overrides {
        problem.apply_overrides(o)?;
    }
    let mut t = TrainConfig::for_problem(&problem);

    if let Some(s) = &file.scheme {
        t.scheme = s.parse()?;
    }
    macro_rules! take {
        ($($field:ident),*) => {$(
            if let Some(v) = file.$field.clone() {
                t.$field = v;
            }
        )*};
    }
    take!(
        n_points,
        max_iters,
        loss_type,
        eval_every,
        seed,
        mse_grid,
        solver_hidden,
        solver_activation,
        solver_adam,
        sampler_adam,
        sampler_hidden,
        z_dim,
        k,
        lambda,
        eps_dist,
        record_wall_time
    );
    if let Some(target) = &file.target_loss {
        t.target_loss = target_from_file(target)?;
    }

    if let Some(s) = &common.scheme {
        t.scheme = s.parse()?;
    }
    if let Some(v) = common.n_points {
        t.n_points = v;
    }
    if let Some(v) = &common.target_loss {
        t.target_loss = parse_target(v)?;
    }
    if let Some(v) = common.max_iters {
        t.max_iters = v;
    }
    if let Some(v) = common.seed {
        t.seed = v;
    }
    if let Some(v) = common.eval_every {
        t.eval_every = v;
    }
    if let Some(v) = common.lambda {
        t.lambda = v;
    }
    if let Some(v) = common.k {
        t.k = v;
    }
    if let Some(v) = common.solver_lr {
        t.solver_adam.lr = v;
    }
    if let Some(v) = common.sampler_lr {
        t.sampler_adam.lr = v;
    }
    if common.no_timing {
        t.record_wall_time = false;
    }
    t.validate(&problem)?;
    let out = common
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Resolved {
        problem,
        train: t,
        file,
        out,
    })
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `metrics.csv`: one row per iteration, wall time omitted.
pub fn metrics_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "iteration",
        "solver_loss",
        "sampler_loss",
        "entropy",
        "spread",
        "eval_loss",
    ])?;
    for m in &report.trace {
        w.write_record([
            m.iteration.to_string(),
            m.solver_loss.to_string(),
            opt(m.sampler_loss),
            opt(m.entropy),
            m.spread.to_string(),
            opt(m.eval_loss),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn compare_csv(summary: &ComparisonSummary) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "scheme",
        "trial",
        "seed",
        "iterations",
        "stop_reason",
        "time_s",
        "final_loss",
    ])?;
    for s in &summary.schemes {
        for t in &s.trials {
            w.write_record([
                s.scheme.clone(),
                t.trial.to_string(),
                t.seed.to_string(),
                t.iterations.to_string(),
                t.stop_reason.to_string(),
                t.time_s.to_string(),
                t.final_loss.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn trace_csv(snapshots: &[TraceSnapshot]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["iteration", "kind", "x", "value"])?;
    for s in snapshots {
        let it = s.iteration.to_string();
        let mut row = |kind: &str, x: f64, v: f64| w.write_record([it.as_str(), kind, &x.to_string(), &v.to_string()]);
        for (&x, &v) in s.samples.iter().zip(&s.sample_values) {
            row("sample", x, v)?;
        }
        for (&x, &v) in s.grid.iter().zip(&s.prediction) {
            row("prediction", x, v)?;
        }
        if let Some(a) = &s.analytic {
            for (&x, &v) in s.grid.iter().zip(a) {
                row("analytic", x, v)?;
            }
        }
        for (&x, &v) in s.grid.iter().zip(&s.residual) {
            row("residual", x, v)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Text table with one row per scheme.
pub fn compare_table(summary: &ComparisonSummary) -> String {
    let fmt = |v: Option<f64>, e: bool| match v {
        Some(x) if e => format!("{x:.3e}"),
        Some(x) => format!("{x:.3}"),
        None => "n/a".to_string(),
    };
    let mut out = format!(
        "problem: {} ({}, target {})\n{:<16} {:>12} {:>12} {:>8}\n",
        summary.problem,
        summary.loss_type,
        summary.target_loss.map_or("none".to_string(), |t| format!("{t:e}")),
        "scheme",
        "avg time (s)",
        "avg loss",
        "aborted"
    );
    for s in &summary.schemes {
        out += &format!(
            "{:<16} {:>12} {:>12} {:>8}\n",
            s.scheme,
            fmt(s.avg_time_s, false),
            fmt(s.avg_loss, true),
            s.aborted.len()
        );
    }
    out
}

fn exit_for(reason: StopReason) -> i32 {
    match reason {
        StopReason::Target => EXIT_CONVERGED,
        StopReason::MaxIters => EXIT_NOT_CONVERGED,
        StopReason::Aborted => EXIT_ERROR,
    }
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    let r = resolve(&args.common)?;
    create_out(&r.out)?;
    let outcome = training::run(&r.problem, &r.train)?;
    let report = &outcome.report;
    write_json(&r.out.join("report.json"), report)?;
    write_json(&r.out.join("solver.json"), &outcome.solver.to_file())?;
    fs::write(r.out.join("metrics.csv"), metrics_csv(report)?)?;
    println!(
        "{} {} iterations={} stop={} final_loss={:e} time_s={:.3}",
        report.problem, report.scheme, report.iterations, report.stop_reason, report.final_loss, report.wall_time_s
    );
    if let Some(msg) = &report.abort_message {
        eprintln!("run aborted: {msg}");
    }
    Ok(exit_for(report.stop_reason))
}

pub fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let r = resolve(&args.common)?;
    let names = args
        .schemes
        .clone()
        .or_else(|| r.file.schemes.clone())
        .unwrap_or_else(|| vec!["adversarial".into(), "noisy-linspace".into()]);
    let schemes = names
        .iter()
        .map(|s| s.trim().parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    if schemes.is_empty() {
        bail!("no schemes given");
    }
    let trials = args.trials.or(r.file.trials).unwrap_or(10);
    let jobs = args
        .jobs
        .or(r.file.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    for s in &schemes {
        TrainConfig {
            scheme: *s,
            ..r.train.clone()
        }
        .validate(&r.problem)?;
    }
    create_out(&r.out)?;
    let summary = evaluation::compare(&r.problem, &schemes, &r.train, trials, jobs)?;
    write_json(&r.out.join("compare.json"), &summary)?;
    fs::write(r.out.join("compare.csv"), compare_csv(&summary)?)?;
    print!("{}", compare_table(&summary));
    std::io::stdout().flush()?;
    if summary.schemes.iter().any(|s| !s.aborted.is_empty()) {
        eprintln!("some trials aborted; they are excluded from the averages");
    }
    let all_converged = summary
        .schemes
        .iter()
        .all(|s| s.trials.iter().all(|t| t.stop_reason == StopReason::Target));
    Ok(if all_converged {
        EXIT_CONVERGED
    } else {
        EXIT_NOT_CONVERGED
    })
}

pub fn cmd_trace(args: &TraceArgs) -> Result<i32> {
    let r = resolve(&args.common)?;
    if r.problem.dim() != 1 {
        bail!(
            "trace supports 1-D problems only; '{}' is {}-D",
            r.problem.name,
            r.problem.dim()
        );
    }
    let every = args.snapshot_every.or(r.file.snapshot_every).unwrap_or(1);
    let grid_n = args.grid_n.or(r.file.grid_n).unwrap_or(512);
    if every == 0 || grid_n < 2 {
        bail!("--snapshot-every must be ≥ 1 and --grid-n ≥ 2");
    }
    create_out(&r.out)?;
    let grid = evaluation::plot_grid(&r.problem, grid_n);
    let mut snapshots = Vec::new();
    let mut failure = None;
    let outcome = training::run_observed(&r.problem, &r.train, |state, m| {
        if failure.is_none() && m.iteration % every == 0 {
            match TraceSnapshot::capture(m.iteration, &state.solver, &r.problem, &state.last_batch, &grid) {
                Ok(s) => snapshots.push(s),
                Err(e) => failure = Some(e),
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    fs::write(r.out.join("trace.csv"), trace_csv(&snapshots)?)?;
    let report = &outcome.report;
    println!(
        "{} {} iterations={} snapshots={} stop={} final_loss={:e}",
        report.problem,
        report.scheme,
        report.iterations,
        snapshots.len(),
        report.stop_reason,
        report.final_loss
    );
    Ok(exit_for(report.stop_reason))
}

/// Runs a parsed command line and maps the outcome to an exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Trace(a) => cmd_trace(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
