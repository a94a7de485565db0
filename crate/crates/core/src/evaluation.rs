//! Solution-quality metrics, run reports and seeded scheme comparisons.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::neural::Mlp;
use crate::problems::{linspace, NetworkTrial, Problem, ProblemError, TrialFunction, TrialMode};
use crate::sampling::{grid_side, Scheme};
use crate::training::{self, IterationMetrics, TrainConfig, TrainError};

/// Points per axis of the validation grid.
pub const VALIDATION_GRID: usize = 32;

/// Default number of points for the analytic-MSE grid.
pub const MSE_GRID: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("validation residual needs a 2-D problem, '{name}' is {dim}-D")]
    NotTwoDimensional { name: String, dim: usize },
    #[error("traces need a 1-D problem, '{name}' is {dim}-D")]
    NotOneDimensional { name: String, dim: usize },
    #[error("need at least one trial")]
    NoTrials,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossType {
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "VAL")]
    Val,
}

impl std::fmt::Display for LossType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossType::Mse => "MSE",
            LossType::Val => "VAL",
        })
    }
}

/// Evaluation points: `grid_n` along a 1-D domain, or a square grid with
/// `grid_side(grid_n, d)` points per axis otherwise. Endpoints included.
pub fn evaluation_grid(problem: &Problem, grid_n: usize) -> Vec<Vec<f64>> {
    let d = problem.dim();
    let side = if d == 1 { grid_n } else { grid_side(grid_n, d) };
    tensor_grid(problem, side)
}

/// `side^d` points, row-major with the first coordinate slowest.
pub fn tensor_grid(problem: &Problem, side: usize) -> Vec<Vec<f64>> {
    let d = problem.dim();
    let axes: Vec<Vec<f64>> = (0..d).map(|j| problem.domain.axis_grid(j, side)).collect();
    let total = side.pow(d as u32);
    (0..total)
        .map(|mut i| {
            let mut p = vec![0.0; d];
            for j in (0..d).rev() {
                p[j] = axes[j][i % side];
                i /= side;
            }
            p
        })
        .collect()
}

/// Mean of `(ŷ − u)²` over the evaluation grid for any trial function.
pub fn mse_with(
    trial: &dyn TrialFunction,
    tape: &mut Tape,
    problem: &Problem,
    grid_n: usize,
) -> Result<f64, EvalError> {
    let grid = evaluation_grid(problem, grid_n);
    let mark = tape.len();
    let mut total = 0.0;
    for p in &grid {
        let exact = problem.analytic(p)?;
        let nodes: Vec<_> = p.iter().map(|&v| tape.constant(v)).collect();
        let jets = trial.trial_jets(tape, &nodes, 0)?;
        let diff = tape.value(jets[0].value()) - exact;
        total += diff * diff;
        tape.truncate(mark);
    }
    Ok(total / grid.len() as f64)
}

/// Mean squared error of the trained solution against the closed form.
pub fn mse_vs_analytic(solver: &Mlp, problem: &Problem, grid_n: usize) -> Result<f64, EvalError> {
    if !problem.has_analytic() {
        return Err(ProblemError::NoAnalytic(problem.name.clone()).into());
    }
    let mut tape = Tape::new();
    let trial = NetworkTrial {
        problem,
        solver: solver.bind(&mut tape, false),
    };
    mse_with(&trial, &mut tape, problem, grid_n)
}

/// Mean `F²` on the 32 × 32 inclusive grid, plus the weighted boundary
/// error on the grid's edge points under soft enforcement.
pub fn validation_with(trial: &dyn TrialFunction, tape: &mut Tape, problem: &Problem) -> Result<f64, EvalError> {
    if problem.dim() != 2 {
        return Err(EvalError::NotTwoDimensional {
            name: problem.name.clone(),
            dim: problem.dim(),
        });
    }
    let grid = tensor_grid(problem, VALIDATION_GRID);
    let order = problem.residual_order();
    let mark = tape.len();
    let mut total = 0.0;
    for p in &grid {
        let nodes: Vec<_> = p.iter().map(|&v| tape.constant(v)).collect();
        let at = problem.residual_point(tape, &nodes);
        let jets = trial.trial_jets(tape, &at, order)?;
        let f = problem.residual(tape, &at, &jets)?;
        let v = tape.value(f);
        total += v * v;
        tape.truncate(mark);
    }
    let mut loss = total / grid.len() as f64;
    if let TrialMode::PdeSoft { beta, .. } = problem.trial {
        let edge = boundary_grid(problem, VALIDATION_GRID);
        let mut b = 0.0;
        for p in &edge {
            let nodes: Vec<_> = p.iter().map(|&v| tape.constant(v)).collect();
            let jets = trial.trial_jets(tape, &nodes, 0)?;
            let diff = tape.value(jets[0].value()) - problem.boundary_value(p);
            b += diff * diff;
            tape.truncate(mark);
        }
        loss += beta * b / edge.len() as f64;
    }
    Ok(loss)
}

/// Grid points lying on the boundary of a 2-D domain.
pub fn boundary_grid(problem: &Problem, side: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = (problem.domain.lo(), problem.domain.hi());
    tensor_grid(problem, side)
        .into_iter()
        .filter(|p| p.iter().enumerate().any(|(j, &v)| v == lo[j] || v == hi[j]))
        .collect()
}

pub fn validation_residual(solver: &Mlp, problem: &Problem) -> Result<f64, EvalError> {
    let mut tape = Tape::new();
    let trial = NetworkTrial {
        problem,
        solver: solver.bind(&mut tape, false),
    };
    validation_with(&trial, &mut tape, problem)
}

/// The configured stopping metric.
pub fn evaluate(solver: &Mlp, problem: &Problem, loss_type: LossType, grid_n: usize) -> Result<f64, EvalError> {
    match loss_type {
        LossType::Mse => mse_vs_analytic(solver, problem, grid_n),
        LossType::Val => validation_residual(solver, problem),
    }
}

/// Equally spaced values along a 1-D domain, for plotting.
pub fn plot_grid(problem: &Problem, n: usize) -> Vec<f64> {
    linspace(problem.domain.lo()[0], problem.domain.hi()[0], n)
}

/// Trial values `ŷ` at row-major points.
pub fn predict(solver: &Mlp, problem: &Problem, points: &[f64]) -> Result<Vec<f64>, EvalError> {
    let mut tape = Tape::new();
    let trial = NetworkTrial {
        problem,
        solver: solver.bind(&mut tape, false),
    };
    let mark = tape.len();
    let mut out = Vec::with_capacity(points.len() / problem.dim());
    for p in points.chunks(problem.dim()) {
        let nodes: Vec<_> = p.iter().map(|&v| tape.constant(v)).collect();
        let jets = trial.trial_jets(&mut tape, &nodes, 0)?;
        out.push(tape.value(jets[0].value()));
        tape.truncate(mark);
    }
    Ok(out)
}

/// `|F|` of the trained trial solution at each point.
pub fn abs_residuals(solver: &Mlp, problem: &Problem, points: &[f64]) -> Result<Vec<f64>, EvalError> {
    let mut tape = Tape::new();
    let trial = NetworkTrial {
        problem,
        solver: solver.bind(&mut tape, false),
    };
    let order = problem.residual_order();
    let mark = tape.len();
    let mut out = Vec::with_capacity(points.len() / problem.dim());
    for p in points.chunks(problem.dim()) {
        let nodes: Vec<_> = p.iter().map(|&v| tape.constant(v)).collect();
        let at = problem.residual_point(&mut tape, &nodes);
        let jets = trial.trial_jets(&mut tape, &at, order)?;
        let f = problem.residual(&mut tape, &at, &jets)?;
        out.push(tape.value(f).abs());
        tape.truncate(mark);
    }
    Ok(out)
}

/// Solver state at one iteration on a fixed 1-D plotting grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSnapshot {
    pub iteration: usize,
    pub samples: Vec<f64>,
    /// `ŷ` at each sample.
    pub sample_values: Vec<f64>,
    pub grid: Vec<f64>,
    pub prediction: Vec<f64>,
    pub analytic: Option<Vec<f64>>,
    pub residual: Vec<f64>,
}

impl TraceSnapshot {
    pub fn capture(
        iteration: usize,
        solver: &Mlp,
        problem: &Problem,
        samples: &[f64],
        grid: &[f64],
    ) -> Result<Self, EvalError> {
        if problem.dim() != 1 {
            return Err(EvalError::NotOneDimensional {
                name: problem.name.clone(),
                dim: problem.dim(),
            });
        }
        let analytic = if problem.has_analytic() {
            Some(
                grid.iter()
                    .map(|&x| problem.analytic(&[x]))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        Ok(Self {
            iteration,
            samples: samples.to_vec(),
            sample_values: predict(solver, problem, samples)?,
            grid: grid.to_vec(),
            prediction: predict(solver, problem, grid)?,
            analytic,
            residual: abs_residuals(solver, problem, grid)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Target,
    MaxIters,
    Aborted,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Target => "target",
            StopReason::MaxIters => "max_iters",
            StopReason::Aborted => "aborted",
        })
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub scheme: String,
    pub seed: u64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub abort_message: Option<String>,
    pub wall_time_s: f64,
    pub final_loss: f64,
    pub loss_type: LossType,
    pub target_loss: Option<f64>,
    pub trace: Vec<IterationMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub time_s: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    /// Mean over non-aborted trials; `NaN` serializes as `null`.
    pub avg_time_s: Option<f64>,
    pub avg_loss: Option<f64>,
    pub aborted: Vec<usize>,
    pub trials: Vec<TrialRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub problem: String,
    pub loss_type: LossType,
    pub target_loss: Option<f64>,
    pub max_iters: usize,
    pub n_points: usize,
    pub schemes: Vec<SchemeSummary>,
}

impl SchemeSummary {
    pub fn from_trials(scheme: String, trials: Vec<TrialRecord>) -> Self {
        let kept: Vec<&TrialRecord> = trials.iter().filter(|t| t.stop_reason != StopReason::Aborted).collect();
        let mean = |f: fn(&TrialRecord) -> f64| {
            if kept.is_empty() {
                None
            } else {
                Some(kept.iter().map(|t| f(t)).sum::<f64>() / kept.len() as f64)
            }
        };
        Self {
            avg_time_s: mean(|t| t.time_s),
            avg_loss: mean(|t| t.final_loss),
            aborted: trials
                .iter()
                .filter(|t| t.stop_reason == StopReason::Aborted)
                .map(|t| t.trial)
                .collect(),
            scheme,
            trials,
        }
    }
}

/// Runs every `(scheme, trial)` pair with seeds `config.seed + trial` and
/// averages time and final loss per scheme. Non-converged runs count;
/// aborted runs are listed and left out of the averages.
///
/// `jobs` bounds the worker threads (0 = one per core).
pub fn compare(
    problem: &Problem,
    schemes: &[Scheme],
    config: &TrainConfig,
    trials: usize,
    jobs: usize,
) -> Result<ComparisonSummary, EvalError> {
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    config.validate(problem)?;
    let tasks: Vec<(usize, usize)> = (0..schemes.len())
        .flat_map(|s| (0..trials).map(move |t| (s, t)))
        .collect();
    let run_one = |&(s, t): &(usize, usize)| -> Result<TrialRecord, EvalError> {
        let cfg = TrainConfig {
            scheme: schemes[s],
            seed: config.seed + t as u64,
            ..config.clone()
        };
        let report = training::run(problem, &cfg)?.report;
        Ok(TrialRecord {
            trial: t,
            seed: cfg.seed,
            iterations: report.iterations,
            stop_reason: report.stop_reason,
            time_s: report.wall_time_s,
            final_loss: report.final_loss,
        })
    };
    let records: Vec<Result<TrialRecord, EvalError>> = if jobs == 1 {
        tasks.iter().map(run_one).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| tasks.par_iter().map(run_one).collect())
    };
    let mut per_scheme: Vec<Vec<TrialRecord>> = vec![Vec::new(); schemes.len()];
    for (&(s, _), rec) in tasks.iter().zip(records) {
        per_scheme[s].push(rec?);
    }
    Ok(ComparisonSummary {
        problem: problem.name.clone(),
        loss_type: config.loss_type,
        target_loss: config.target_loss,
        max_iters: config.max_iters,
        n_points: config.n_points,
        schemes: schemes
            .iter()
            .zip(per_scheme)
            .map(|(s, recs)| SchemeSummary::from_trials(s.to_string(), recs))
            .collect(),
    })
}

/// Seconds since `start`, or zero when timing is disabled.
pub(crate) fn elapsed_s(start: Instant, record: bool) -> f64 {
    if record {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}
