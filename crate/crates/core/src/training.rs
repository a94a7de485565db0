//! Alternating solver/sampler training and the stopping protocol.
//!
//! Each iteration draws a batch, takes one Adam step on the solver loss
//! `Σ F(x_i)²`, and for the adversarial scheme then takes one Adam step on
//! the sampler loss `−Σ F(x_i)² + λ·D_k`, evaluated against the freshly
//! updated solver at the same points. Losses are sums over points, so the
//! useful range of `λ` grows with `n`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeRef, Tape};
use crate::evaluation::{self, elapsed_s, EvalError, LossType, RunReport, StopReason, MSE_GRID};
use crate::neural::{Activation, AdamConfig, AdamState, Mlp, MlpConfig, NeuralError};
use crate::problems::{Equation, Problem, ProblemError, TrialMode};
use crate::sampling::{
    entropy_penalty, entropy_value, mean_pairwise_distance, sample_adversarial, sample_baseline, KdTree, SampleBatch,
    SamplerConfig, SamplingError, Scheme,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {quantity} at iteration {iteration}; batch points: {points:?}")]
    NonFinite {
        iteration: usize,
        quantity: String,
        points: Vec<f64>,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Eval(Box<EvalError>),
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(Box::new(e))
    }
}

/// Everything that shapes one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub n_points: usize,
    pub max_iters: usize,
    /// `None` never stops early.
    pub target_loss: Option<f64>,
    pub loss_type: LossType,
    pub eval_every: usize,
    pub seed: u64,
    /// Points of the analytic-MSE grid.
    pub mse_grid: usize,
    pub solver_hidden: Vec<usize>,
    pub solver_activation: Activation,
    pub solver_adam: AdamConfig,
    pub sampler_adam: AdamConfig,
    pub sampler_hidden: Vec<usize>,
    pub z_dim: usize,
    pub k: usize,
    /// Weight of `D_k` in the sampler loss.
    pub lambda: f64,
    pub eps_dist: f64,
    /// When false every reported wall time is zero, which makes reports
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

impl TrainConfig {
    /// Tuned defaults for a library problem; unknown names get the generic set.
    pub fn for_problem(problem: &Problem) -> Self {
        let mut c = Self {
            scheme: Scheme::Adversarial,
            n_points: 30,
            max_iters: 20_000,
            target_loss: Some(1e-6),
            loss_type: LossType::Mse,
            eval_every: 50,
            seed: 0,
            mse_grid: MSE_GRID,
            solver_hidden: vec![32, 32],
            solver_activation: Activation::Tanh,
            solver_adam: AdamConfig::default(),
            sampler_adam: AdamConfig::default(),
            sampler_hidden: vec![32, 32],
            z_dim: 8,
            k: 2,
            lambda: 0.01,
            eps_dist: 1e-12,
            record_wall_time: true,
        };
        match (&problem.equation, &problem.trial) {
            (Equation::ExpDecay { .. }, _) => {}
            (Equation::Logistic { .. }, _) => {
                c.n_points = 20;
            }
            (Equation::HAtom { .. }, _) => {
                c.target_loss = Some(1e-4);
                c.max_iters = 30_000;
            }
            (Equation::Laplace { .. }, mode) => {
                c.n_points = 256;
                c.solver_hidden = vec![16, 16];
                c.solver_adam.lr = 5e-3;
                c.lambda = 1.0;
                c.target_loss = Some(1e-4);
                c.max_iters = 30_000;
                c.loss_type = LossType::Val;
                if matches!(mode, TrialMode::PdeSoft { .. }) {
                    c.target_loss = None;
                }
            }
            (Equation::DecayOde { .. }, _) => {
                c.target_loss = Some(1e-6);
            }
        }
        c
    }

    pub fn sampler_config(&self, dim: usize) -> SamplerConfig {
        SamplerConfig {
            z_dim: self.z_dim,
            n_points: self.n_points,
            dim,
            k: self.k,
            lambda: self.lambda,
            eps_dist: self.eps_dist,
            hidden: self.sampler_hidden.clone(),
        }
    }

    pub fn solver_config(&self, dim: usize) -> Result<MlpConfig, TrainError> {
        let mut sizes = vec![dim];
        sizes.extend(&self.solver_hidden);
        sizes.push(1);
        Ok(MlpConfig::new(sizes, self.solver_activation, Activation::Identity)?)
    }

    pub fn validate(&self, problem: &Problem) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if let Some(t) = self.target_loss {
            if !(t > 0.0) {
                return bad(format!("target_loss must be positive, got {t}"));
            }
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.mse_grid < 2 {
            return bad("mse_grid must be at least 2".into());
        }
        if self.loss_type == LossType::Mse && !problem.has_analytic() {
            return bad(format!("problem '{}' has no analytic solution; use VAL", problem.name));
        }
        if self.loss_type == LossType::Val && problem.dim() != 2 {
            return bad(format!(
                "VAL needs a 2-D problem, '{}' is {}-D",
                problem.name,
                problem.dim()
            ));
        }
        for (name, a) in [("solver_adam", &self.solver_adam), ("sampler_adam", &self.sampler_adam)] {
            if !(a.lr >= 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
                return bad(format!("{name}: need lr ≥ 0, β₁ and β₂ in [0, 1), eps > 0"));
            }
        }
        problem.validate()?;
        self.solver_config(problem.dim())?;
        if self.scheme.is_adversarial() {
            self.sampler_config(problem.dim()).validate()?;
        } else if self.n_points == 0 {
            return bad("n_points must be positive".into());
        }
        Ok(())
    }
}

/// Per-iteration record. Optional fields are `None` where they do not apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub solver_loss: f64,
    pub sampler_loss: Option<f64>,
    /// `D_k` of the batch (ε = 0), adversarial only.
    pub entropy: Option<f64>,
    /// Mean pairwise distance of the batch.
    pub spread: f64,
    pub wall_ms: f64,
    pub eval_loss: Option<f64>,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mutable state of one run.
pub struct TrainState {
    pub solver: Mlp,
    pub solver_opt: AdamState,
    pub sampler: Option<Mlp>,
    pub sampler_opt: Option<AdamState>,
    pub iteration: usize,
    pub best_eval: Option<f64>,
    /// Points of the latest batch, row-major.
    pub last_batch: Vec<f64>,
    z_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    solver_tape: Tape,
    sampler_tape: Tape,
}

impl TrainState {
    /// Fresh networks and streams derived from `config.seed`. The solver
    /// initialization depends only on the seed, so different schemes with
    /// the same seed start from the same solver.
    pub fn new(problem: &Problem, config: &TrainConfig) -> Result<Self, TrainError> {
        config.validate(problem)?;
        let d = problem.dim();
        let solver = Mlp::init(config.solver_config(d)?, mix(config.seed, 1));
        let solver_opt = AdamState::for_net(config.solver_adam, &solver);
        let (sampler, sampler_opt) = if config.scheme.is_adversarial() {
            let net = Mlp::init(config.sampler_config(d).network_config(), mix(config.seed, 2));
            let opt = AdamState::for_net(config.sampler_adam, &net);
            (Some(net), Some(opt))
        } else {
            (None, None)
        };
        Ok(Self {
            solver,
            solver_opt,
            sampler,
            sampler_opt,
            iteration: 0,
            best_eval: None,
            last_batch: Vec::new(),
            z_rng: ChaCha8Rng::seed_from_u64(mix(config.seed, 3)),
            batch_rng: ChaCha8Rng::seed_from_u64(mix(config.seed, 4)),
            solver_tape: Tape::new(),
            sampler_tape: Tape::new(),
        })
    }
}

/// Records `Σ_i F(x_i)²` for points given as tape nodes, with the solver
/// already bound on `tape`.
fn residual_sum(
    tape: &mut Tape,
    problem: &Problem,
    solver: &crate::neural::BoundMlp<'_>,
    points: &[NodeRef],
) -> Result<NodeRef, TrainError> {
    let d = problem.dim();
    let order = problem.residual_order();
    let mut terms = Vec::with_capacity(points.len() / d);
    for p in points.chunks(d) {
        let at = problem.residual_point(tape, p);
        let jets = problem.network_jets(tape, solver, &at, order)?;
        terms.push(problem.pointwise_loss(tape, &at, &jets)?);
    }
    Ok(tape.sum(&terms))
}

/// `β/n_b · Σ (ŷ − g)²` over the given boundary points.
fn boundary_penalty(
    tape: &mut Tape,
    problem: &Problem,
    solver: &crate::neural::BoundMlp<'_>,
    boundary: &[f64],
    beta: f64,
) -> Result<NodeRef, TrainError> {
    let d = problem.dim();
    let mut terms = Vec::with_capacity(boundary.len() / d);
    for p in boundary.chunks(d) {
        let nodes: Vec<_> = p.iter().map(|&v| tape.constant(v)).collect();
        let jets = problem.network_jets(tape, solver, &nodes, 0)?;
        let diff = tape.add_const(jets[0].value(), -problem.boundary_value(p));
        terms.push(tape.square(diff));
    }
    let total = tape.sum(&terms);
    Ok(tape.mul_const(total, beta / (boundary.len() / d).max(1) as f64))
}

/// Uniform points on the boundary of the domain box, each on a face
/// chosen with probability proportional to its area.
pub fn sample_boundary<R: Rng + ?Sized>(problem: &Problem, n: usize, rng: &mut R) -> Vec<f64> {
    let dom = &problem.domain;
    let d = dom.dim();
    let (lo, hi) = (dom.lo(), dom.hi());
    if d == 1 {
        return (0..n)
            .map(|_| if rng.random::<bool>() { lo[0] } else { hi[0] })
            .collect();
    }
    // face areas: fixing axis j leaves the product of the other widths
    let areas: Vec<f64> = (0..d)
        .map(|j| (0..d).filter(|&i| i != j).map(|i| dom.width(i)).product())
        .collect();
    let total: f64 = areas.iter().sum::<f64>() * 2.0;
    let mut pts = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut r = rng.random::<f64>() * total;
        let mut face = (0, false);
        'pick: for (j, &a) in areas.iter().enumerate() {
            for upper in [false, true] {
                if r < a {
                    face = (j, upper);
                    break 'pick;
                }
                r -= a;
            }
            face = (j, true);
        }
        for i in 0..d {
            pts.push(if i == face.0 {
                if face.1 {
                    hi[i]
                } else {
                    lo[i]
                }
            } else {
                lo[i] + rng.random::<f64>() * dom.width(i)
            });
        }
    }
    pts
}

/// Solver loss at fixed points and its gradient w.r.t. the solver
/// parameters. Includes the boundary penalty under soft enforcement.
pub fn solver_loss_and_grad(
    tape: &mut Tape,
    problem: &Problem,
    solver: &Mlp,
    points: &[f64],
    boundary: &[f64],
) -> Result<(f64, Vec<f64>), TrainError> {
    tape.clear();
    let bound = solver.bind(tape, true);
    let nodes: Vec<_> = points.iter().map(|&v| tape.constant(v)).collect();
    let mut loss = residual_sum(tape, problem, &bound, &nodes)?;
    if let TrialMode::PdeSoft { beta, .. } = problem.trial {
        let b = boundary_penalty(tape, problem, &bound, boundary, beta)?;
        loss = tape.add(loss, b);
    }
    let value = tape.value(loss);
    let grads = tape.backward(loss)?;
    Ok((value, bound.gradient(&grads)))
}

/// Appends `−Σ F(x_i)² + λ·D_k` to a tape that already holds the sampler
/// forward pass producing `batch`. The solver enters as constants.
pub fn sampler_objective(
    tape: &mut Tape,
    problem: &Problem,
    solver: &Mlp,
    batch: &SampleBatch,
    config: &TrainConfig,
) -> Result<NodeRef, TrainError> {
    let bound = solver.bind(tape, false);
    let nodes = batch
        .nodes
        .as_ref()
        .ok_or_else(|| TrainError::InvalidConfig("sampler objective needs an adversarial batch".into()))?;
    let residual = residual_sum(tape, problem, &bound, nodes)?;
    let tree = KdTree::build(&batch.points, problem.dim());
    let dk = entropy_penalty(tape, batch, &tree, config.k, config.eps_dist)?;
    let neg = tape.neg(residual);
    let weighted = tape.mul_const(dk, config.lambda);
    Ok(tape.add(neg, weighted))
}

/// One iteration: draw, solver step, then the sampler step when adversarial.
pub fn train_step(
    state: &mut TrainState,
    problem: &Problem,
    config: &TrainConfig,
) -> Result<IterationMetrics, TrainError> {
    let start = Instant::now();
    let it = state.iteration + 1;
    let n = config.n_points;
    let d = problem.dim();

    // (1) batch
    let mut sampler_nodes = Vec::new();
    let batch: SampleBatch = match (&state.sampler, config.scheme) {
        (Some(sampler), Scheme::Adversarial) => {
            let z: Vec<f64> = (0..config.z_dim).map(|_| state.z_rng.sample(StandardNormal)).collect();
            let tape = &mut state.sampler_tape;
            tape.clear();
            let bound = sampler.bind(tape, true);
            sampler_nodes = bound.param_nodes().to_vec();
            sample_adversarial(&bound, tape, &z, &problem.domain, n)?
        }
        (_, Scheme::Baseline(b)) => sample_baseline(b, n, &problem.domain, &mut state.batch_rng),
        (None, Scheme::Adversarial) => {
            return Err(TrainError::InvalidConfig(
                "adversarial scheme without a sampler network".into(),
            ))
        }
    };
    let boundary = match problem.trial {
        TrialMode::PdeSoft { n_boundary, .. } => sample_boundary(problem, n_boundary, &mut state.batch_rng),
        _ => Vec::new(),
    };
    let non_finite = |quantity: &str, points: &[f64]| TrainError::NonFinite {
        iteration: it,
        quantity: quantity.to_string(),
        points: points.to_vec(),
    };
    if batch.points.iter().any(|v| !v.is_finite()) {
        return Err(non_finite("sample", &batch.points));
    }

    // (2)–(3) solver
    let (solver_loss, grads) =
        solver_loss_and_grad(&mut state.solver_tape, problem, &state.solver, &batch.points, &boundary).map_err(
            |e| match e {
                TrainError::Autodiff(AutodiffError::NonFinite { .. }) => non_finite("solver gradient", &batch.points),
                e => e,
            },
        )?;
    if !solver_loss.is_finite() {
        return Err(non_finite("solver loss", &batch.points));
    }
    state
        .solver_opt
        .step(&mut state.solver, &grads)
        .map_err(|_| non_finite("solver gradient", &batch.points))?;

    // (4) sampler, against the updated solver at the same points
    let mut sampler_loss = None;
    let mut entropy = None;
    if let (Some(sampler), Some(opt)) = (state.sampler.as_mut(), state.sampler_opt.as_mut()) {
        let tape = &mut state.sampler_tape;
        let loss = sampler_objective(tape, problem, &state.solver, &batch, config)?;
        let value = tape.value(loss);
        if !value.is_finite() {
            return Err(non_finite("sampler loss", &batch.points));
        }
        let g = tape
            .backward(loss)
            .map_err(|_| non_finite("sampler gradient", &batch.points))?;
        let sg: Vec<f64> = sampler_nodes.iter().map(|&node| g.get(node)).collect();
        opt.step(sampler, &sg)
            .map_err(|_| non_finite("sampler gradient", &batch.points))?;
        sampler_loss = Some(value);
        entropy = Some(entropy_value(&batch.points, d, config.k)?);
    }

    state.iteration = it;
    state.last_batch = batch.points;
    Ok(IterationMetrics {
        iteration: it,
        solver_loss,
        sampler_loss,
        entropy,
        spread: mean_pairwise_distance(&state.last_batch, d),
        wall_ms: if config.record_wall_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
        eval_loss: None,
    })
}

/// Result of [`run`]: the report plus the trained networks.
pub struct RunOutcome {
    pub report: RunReport,
    pub solver: Mlp,
    pub sampler: Option<Mlp>,
}

pub fn run(problem: &Problem, config: &TrainConfig) -> Result<RunOutcome, TrainError> {
    run_observed(problem, config, |_, _| {})
}

/// [`run`] with a callback after every iteration, given the state (solver
/// already updated, `last_batch` the points used) and that iteration's
/// metrics.
pub fn run_observed<F>(problem: &Problem, config: &TrainConfig, mut observe: F) -> Result<RunOutcome, TrainError>
where
    F: FnMut(&TrainState, &IterationMetrics),
{
    let start = Instant::now();
    let mut state = TrainState::new(problem, config)?;
    let eval = |solver: &Mlp| evaluation::evaluate(solver, problem, config.loss_type, config.mse_grid);
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIters;
    let mut abort_message = None;
    let mut final_loss = None;
    while state.iteration < config.max_iters {
        let mut m = match train_step(&mut state, problem, config) {
            Ok(m) => m,
            Err(e) => {
                stop = StopReason::Aborted;
                abort_message = Some(e.to_string());
                break;
            }
        };
        let due = m.iteration % config.eval_every == 0 || m.iteration == config.max_iters;
        if due {
            let loss = eval(&state.solver)?;
            m.eval_loss = Some(loss);
            final_loss = Some(loss);
            state.best_eval = Some(state.best_eval.map_or(loss, |b: f64| b.min(loss)));
            if !loss.is_finite() {
                stop = StopReason::Aborted;
                abort_message = Some(format!("non-finite evaluation loss at iteration {}", m.iteration));
            } else if config.target_loss.is_some_and(|t| loss <= t) {
                stop = StopReason::Target;
            }
        } else {
            final_loss = None;
        }
        observe(&state, &m);
        trace.push(m);
        if stop != StopReason::MaxIters {
            break;
        }
    }
    let final_loss = match final_loss {
        Some(l) => l,
        None => eval(&state.solver)?,
    };
    Ok(RunOutcome {
        report: RunReport {
            problem: problem.name.clone(),
            scheme: config.scheme.to_string(),
            seed: config.seed,
            iterations: state.iteration,
            stop_reason: stop,
            abort_message,
            wall_time_s: elapsed_s(start, config.record_wall_time),
            final_loss,
            loss_type: config.loss_type,
            target_loss: config.target_loss,
            trace,
        },
        solver: state.solver,
        sampler: state.sampler,
    })
}
