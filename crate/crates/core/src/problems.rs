//! Benchmark equations, their trial-function reparameterizations and
//! closed-form reference solutions.
//!
//! A trial function turns a raw network output `N` into a candidate
//! solution `ŷ` that satisfies the problem's conditions by construction
//! (hard modes) or leaves them to a penalty term (soft mode). Every
//! quantity is built from jets so that `ŷ'`, `ŷ''` stay differentiable.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Jet, NodeRef, Tape};
use crate::neural::{BoundMlp, NeuralError};

/// Problem names accepted by [`Problem::by_name`].
pub const PROBLEM_NAMES: [&str; 6] = [
    "expdecay",
    "logistic",
    "hatom-n1",
    "hatom-n2",
    "laplace",
    "expdecay-ode",
];

/// Sampled radial coordinates are clamped to at least this value before the
/// H-atom residual (which has `1/x` terms) is evaluated.
pub const HATOM_MIN_RADIUS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown problem '{name}'; valid names: {}", PROBLEM_NAMES.join(", "))]
    UnknownProblem { name: String },
    #[error("problem '{0}' has no analytic solution")]
    NoAnalytic(String),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("point has {got} coordinates, problem '{name}' is {expected}-dimensional")]
    DimensionMismatch { name: String, expected: usize, got: usize },
    #[error("trial mode {mode:?} does not fit problem '{name}'")]
    ModeMismatch { name: String, mode: TrialMode },
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Axis-aligned box `[lo_0, hi_0] × … × [lo_{d-1}, hi_{d-1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProblemError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(ProblemError::InvalidDomain(format!(
                "bounds of length {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
        {
            return Err(ProblemError::InvalidDomain(
                "need finite lo < hi in every dimension".into(),
            ));
        }
        Ok(Self { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(vec![lo], vec![hi]).expect("valid interval")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    /// `n` equally spaced values per axis, both endpoints included.
    pub fn axis_grid(&self, axis: usize, n: usize) -> Vec<f64> {
        linspace(self.lo[axis], self.hi[axis], n)
    }
}

/// `n` equally spaced values from `lo` to `hi` inclusive; `[lo]` for `n = 1`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// Left-edge boundary function of the Laplace problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplaceBoundary {
    /// `u(0, y) = sin(πy)`: consistent with the zero edges at both corners.
    SinPiY,
    /// `u(0, y) = sin(y)`: clashes with `u(x, 1) = 0` at the corner (0, 1).
    SinY,
}

impl LaplaceBoundary {
    pub fn eval(self, y: f64) -> f64 {
        match self {
            LaplaceBoundary::SinPiY => (PI * y).sin(),
            LaplaceBoundary::SinY => y.sin(),
        }
    }

    fn jet(self, tape: &mut Tape, y: &Jet) -> Result<Jet, AutodiffError> {
        match self {
            LaplaceBoundary::SinPiY => {
                let s = tape.jet_scale(y, PI);
                tape.jet_sin(&s)
            }
            LaplaceBoundary::SinY => tape.jet_sin(y),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equation {
    /// `u_x − e^{γx} = 0`.
    ExpDecay { gamma: f64 },
    /// `u_x − γ u (M − u) = 0`.
    Logistic { gamma: f64, m: f64 },
    /// `u_xx − 2 (1/(2n²) − 1/x + l(l+1)/(2x²)) u = 0`.
    HAtom { n: u32, l: u32 },
    /// `u_xx + u_yy = 0`.
    Laplace { boundary: LaplaceBoundary },
    /// `u_x + λ u = 0`.
    DecayOde { lambda: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialMode {
    /// `ŷ = y0 + (1 − e^{−(x−x0)}) N(x)`.
    OdeIc { x0: f64, y0: f64 },
    /// `ŷ = e^{−x/n} (1 − e^{−(L−x)}) (s0 x + x² N(x))`, `L` the right edge.
    HAtom { n: u32, slope: f64 },
    /// `ŷ = (1−x) g(y) + x(1−x) y(1−y) N(x, y)` on the unit square.
    PdeHard,
    /// `ŷ = N(x, y)` plus `β ·` boundary mean squared error in the loss.
    PdeSoft { beta: f64, n_boundary: usize },
}

impl TrialMode {
    pub fn is_soft(&self) -> bool {
        matches!(self, TrialMode::PdeSoft { .. })
    }
}

/// Field overrides accepted from configuration files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemOverrides {
    pub gamma: Option<f64>,
    pub m: Option<f64>,
    pub u0: Option<f64>,
    pub lambda: Option<f64>,
    pub laplace_boundary: Option<LaplaceBoundary>,
    /// Switch the Laplace problem to soft boundary enforcement.
    pub soft_boundary: Option<bool>,
    pub beta: Option<f64>,
    pub n_boundary: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub domain: Domain,
    pub equation: Equation,
    pub trial: TrialMode,
}

impl Problem {
    pub fn by_name(name: &str) -> Result<Self, ProblemError> {
        Ok(match name {
            "expdecay" => Self::expdecay(),
            "logistic" => Self::logistic(),
            "hatom-n1" => Self::hatom(1),
            "hatom-n2" => Self::hatom(2),
            "laplace" => Self::laplace(),
            "expdecay-ode" => Self::expdecay_ode(),
            _ => {
                return Err(ProblemError::UnknownProblem { name: name.to_string() });
            }
        })
    }

    /// `u_x = e^{−5x}` on `[0, 30]`, `u(0) = 0.1`.
    pub fn expdecay() -> Self {
        Self {
            name: "expdecay".into(),
            domain: Domain::interval(0.0, 30.0),
            equation: Equation::ExpDecay { gamma: -5.0 },
            trial: TrialMode::OdeIc { x0: 0.0, y0: 0.1 },
        }
    }

    /// `u_x = −u(1 − u)` on `[0, 10]`, `u(0) = 0.7`.
    pub fn logistic() -> Self {
        Self {
            name: "logistic".into(),
            domain: Domain::interval(0.0, 10.0),
            equation: Equation::Logistic { gamma: -1.0, m: 1.0 },
            trial: TrialMode::OdeIc { x0: 0.0, y0: 0.7 },
        }
    }

    /// Radial hydrogen equation for `l = 0` on `[0, 30]`.
    ///
    /// # Panics
    ///
    /// For `n` other than 1 or 2 (no pinned slope is known).
    pub fn hatom(n: u32) -> Self {
        let slope = match n {
            1 => 2.0,
            2 => 1.0 / 2f64.sqrt(),
            _ => panic!("hydrogen problem only defined for n = 1, 2"),
        };
        Self {
            name: format!("hatom-n{n}"),
            domain: Domain::interval(0.0, 30.0),
            equation: Equation::HAtom { n, l: 0 },
            trial: TrialMode::HAtom { n, slope },
        }
    }

    /// Laplace on the unit square with `u(0, y) = sin(πy)`, zero elsewhere.
    pub fn laplace() -> Self {
        Self {
            name: "laplace".into(),
            domain: Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).expect("unit square"),
            equation: Equation::Laplace {
                boundary: LaplaceBoundary::SinPiY,
            },
            trial: TrialMode::PdeHard,
        }
    }

    /// Laplace with the literal `u(0, y) = sin(y)` edge under soft enforcement.
    pub fn laplace_soft(boundary: LaplaceBoundary) -> Self {
        Self {
            name: "laplace".into(),
            trial: TrialMode::PdeSoft {
                beta: 10.0,
                n_boundary: 64,
            },
            equation: Equation::Laplace { boundary },
            ..Self::laplace()
        }
    }

    /// `u_x = −5u` on `[0, 3]`, `u(0) = 1`.
    pub fn expdecay_ode() -> Self {
        Self {
            name: "expdecay-ode".into(),
            domain: Domain::interval(0.0, 3.0),
            equation: Equation::DecayOde { lambda: 5.0 },
            trial: TrialMode::OdeIc { x0: 0.0, y0: 1.0 },
        }
    }

    pub fn apply_overrides(&mut self, o: &ProblemOverrides) -> Result<(), ProblemError> {
        let bad =
            |field: &str, name: &str| ProblemError::InvalidOverride(format!("'{field}' does not apply to '{name}'"));
        let name = self.name.clone();
        if let Some(g) = o.gamma {
            match &mut self.equation {
                Equation::ExpDecay { gamma } | Equation::Logistic { gamma, .. } => *gamma = g,
                _ => return Err(bad("gamma", &name)),
            }
        }
        if let Some(v) = o.m {
            match &mut self.equation {
                Equation::Logistic { m, .. } => *m = v,
                _ => return Err(bad("m", &name)),
            }
        }
        if let Some(v) = o.lambda {
            match &mut self.equation {
                Equation::DecayOde { lambda } => *lambda = v,
                _ => return Err(bad("lambda", &name)),
            }
        }
        if let Some(v) = o.u0 {
            match &mut self.trial {
                TrialMode::OdeIc { y0, .. } => *y0 = v,
                _ => return Err(bad("u0", &name)),
            }
        }
        let is_laplace = matches!(self.equation, Equation::Laplace { .. });
        if let Some(b) = o.laplace_boundary {
            match &mut self.equation {
                Equation::Laplace { boundary } => *boundary = b,
                _ => return Err(bad("laplace_boundary", &name)),
            }
        }
        if let Some(soft) = o.soft_boundary {
            if !is_laplace {
                return Err(bad("soft_boundary", &name));
            }
            self.trial = if soft {
                TrialMode::PdeSoft {
                    beta: 10.0,
                    n_boundary: 64,
                }
            } else {
                TrialMode::PdeHard
            };
        }
        if o.beta.is_some() || o.n_boundary.is_some() {
            match &mut self.trial {
                TrialMode::PdeSoft { beta, n_boundary } => {
                    if let Some(b) = o.beta {
                        if !(b >= 0.0) {
                            return Err(ProblemError::InvalidOverride("beta must be non-negative".into()));
                        }
                        *beta = b;
                    }
                    if let Some(n) = o.n_boundary {
                        if n == 0 {
                            return Err(ProblemError::InvalidOverride("n_boundary must be positive".into()));
                        }
                        *n_boundary = n;
                    }
                }
                _ => return Err(bad("beta/n_boundary (soft boundary only)", &name)),
            }
        }
        self.validate()
    }

    /// Checks that the trial mode fits the equation and domain.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let mismatch = || ProblemError::ModeMismatch {
            name: self.name.clone(),
            mode: self.trial,
        };
        match (&self.equation, &self.trial) {
            (
                Equation::ExpDecay { .. } | Equation::Logistic { .. } | Equation::DecayOde { .. },
                TrialMode::OdeIc { .. },
            ) => {
                if self.domain.dim() != 1 {
                    return Err(mismatch());
                }
            }
            (Equation::HAtom { n, .. }, TrialMode::HAtom { n: tn, .. }) => {
                if n != tn || self.domain.dim() != 1 || self.domain.lo()[0] != 0.0 {
                    return Err(mismatch());
                }
            }
            (Equation::Laplace { boundary }, TrialMode::PdeHard) => {
                // the hard ansatz is only continuous for consistent corners
                if *boundary != LaplaceBoundary::SinPiY || self.domain != Self::laplace().domain {
                    return Err(mismatch());
                }
            }
            (Equation::Laplace { .. }, TrialMode::PdeSoft { .. }) => {
                if self.domain.dim() != 2 {
                    return Err(mismatch());
                }
            }
            _ => return Err(mismatch()),
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Highest derivative order appearing in the residual.
    pub fn residual_order(&self) -> usize {
        match self.equation {
            Equation::ExpDecay { .. } | Equation::Logistic { .. } | Equation::DecayOde { .. } => 1,
            Equation::HAtom { .. } | Equation::Laplace { .. } => 2,
        }
    }

    /// Named constants of the equation and its conditions.
    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut p = BTreeMap::new();
        match self.equation {
            Equation::ExpDecay { gamma } => {
                p.insert("gamma".into(), gamma);
            }
            Equation::Logistic { gamma, m } => {
                p.insert("gamma".into(), gamma);
                p.insert("m".into(), m);
            }
            Equation::HAtom { n, l } => {
                p.insert("n".into(), n as f64);
                p.insert("l".into(), l as f64);
            }
            Equation::Laplace { .. } => {}
            Equation::DecayOde { lambda } => {
                p.insert("lambda".into(), lambda);
            }
        }
        match self.trial {
            TrialMode::OdeIc { x0, y0 } => {
                p.insert("x0".into(), x0);
                p.insert("y0".into(), y0);
            }
            TrialMode::HAtom { slope, .. } => {
                p.insert("slope".into(), slope);
            }
            TrialMode::PdeSoft { beta, n_boundary } => {
                p.insert("beta".into(), beta);
                p.insert("n_boundary".into(), n_boundary as f64);
            }
            TrialMode::PdeHard => {}
        }
        p
    }

    fn check_dim(&self, got: usize) -> Result<(), ProblemError> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(ProblemError::DimensionMismatch {
                name: self.name.clone(),
                expected: self.dim(),
                got,
            })
        }
    }

    /// Coordinates at which the residual is evaluated. Only the H-atom
    /// problem changes anything: radii are clamped to [`HATOM_MIN_RADIUS`].
    pub fn residual_point(&self, tape: &mut Tape, point: &[NodeRef]) -> Vec<NodeRef> {
        match self.equation {
            Equation::HAtom { .. } => point.iter().map(|&x| tape.max_const(x, HATOM_MIN_RADIUS)).collect(),
            _ => point.to_vec(),
        }
    }

    /// Input jets for differentiating along `axis`: the coordinate on that
    /// axis is seeded with slope 1, all others with slope 0.
    pub fn direction_jets(
        &self,
        tape: &mut Tape,
        point: &[NodeRef],
        axis: usize,
        order: usize,
    ) -> Result<Vec<Jet>, ProblemError> {
        self.check_dim(point.len())?;
        Ok(point
            .iter()
            .enumerate()
            .map(|(j, &x)| tape.jet_seed(x, j == axis, order))
            .collect::<Result<Vec<_>, _>>()?)
    }

    /// Coordinates as the solver network sees them. PDE boxes are mapped
    /// affinely onto `[-1, 1]^d`; ODE intervals pass through unchanged, since
    /// their solutions vary on unit scales near the left end of long domains
    /// and rescaling would shrink those features along with the interval.
    pub fn normalize_inputs(&self, tape: &mut Tape, x_jets: &[Jet]) -> Vec<Jet> {
        if !matches!(self.trial, TrialMode::PdeHard | TrialMode::PdeSoft { .. }) {
            return x_jets.to_vec();
        }
        x_jets
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let lo = self.domain.lo()[j];
                let scale = 2.0 / self.domain.width(j);
                let shifted = tape.jet_add_const(x, -lo);
                let scaled = tape.jet_scale(&shifted, scale);
                tape.jet_add_const(&scaled, -1.0)
            })
            .collect()
    }

    /// Wraps the raw network jet `raw` into the trial solution `ŷ`, with
    /// `x_jets` the coordinate jets for the same direction.
    pub fn reparameterize(&self, tape: &mut Tape, x_jets: &[Jet], raw: &Jet) -> Result<Jet, ProblemError> {
        self.check_dim(x_jets.len())?;
        if x_jets.iter().any(|j| j.order() != raw.order()) {
            return Err(AutodiffError::OrderMismatch {
                expected: raw.order(),
                got: x_jets.iter().map(Jet::order).find(|&o| o != raw.order()).unwrap_or(0),
            }
            .into());
        }
        let out = match self.trial {
            TrialMode::OdeIc { x0, y0 } => {
                // y0 + (1 − e^{−(x−x0)}) N
                let shifted = tape.jet_add_const(&x_jets[0], -x0);
                let neg = tape.jet_neg(&shifted);
                let e = tape.jet_exp(&neg)?;
                let ne = tape.jet_neg(&e);
                let factor = tape.jet_add_const(&ne, 1.0);
                let prod = tape.jet_mul(&factor, raw)?;
                tape.jet_add_const(&prod, y0)
            }
            TrialMode::HAtom { n, slope } => {
                let x = &x_jets[0];
                let far = self.domain.hi()[0];
                let scaled = tape.jet_scale(x, -1.0 / n as f64);
                let decay = tape.jet_exp(&scaled)?;
                let to_edge = tape.jet_add_const(x, -far);
                let e = tape.jet_exp(&to_edge)?;
                let ne = tape.jet_neg(&e);
                let cutoff = tape.jet_add_const(&ne, 1.0);
                let linear = tape.jet_scale(x, slope);
                let x2 = tape.jet_mul(x, x)?;
                let curved = tape.jet_mul(&x2, raw)?;
                let inner = tape.jet_add(&linear, &curved)?;
                let envelope = tape.jet_mul(&decay, &cutoff)?;
                tape.jet_mul(&envelope, &inner)?
            }
            TrialMode::PdeHard => {
                let Equation::Laplace { boundary } = self.equation else {
                    return Err(ProblemError::ModeMismatch {
                        name: self.name.clone(),
                        mode: self.trial,
                    });
                };
                let (x, y) = (&x_jets[0], &x_jets[1]);
                let nx = tape.jet_neg(x);
                let one_minus_x = tape.jet_add_const(&nx, 1.0);
                let ny = tape.jet_neg(y);
                let one_minus_y = tape.jet_add_const(&ny, 1.0);
                let g = boundary.jet(tape, y)?;
                let edge = tape.jet_mul(&one_minus_x, &g)?;
                let bx = tape.jet_mul(x, &one_minus_x)?;
                let by = tape.jet_mul(y, &one_minus_y)?;
                let bubble = tape.jet_mul(&bx, &by)?;
                let interior = tape.jet_mul(&bubble, raw)?;
                tape.jet_add(&edge, &interior)?
            }
            TrialMode::PdeSoft { .. } => *raw,
        };
        Ok(out)
    }

    /// Trial-solution jets along every axis at `point`, from a solver
    /// network bound on `tape`.
    pub fn network_jets(
        &self,
        tape: &mut Tape,
        solver: &BoundMlp<'_>,
        point: &[NodeRef],
        order: usize,
    ) -> Result<Vec<Jet>, ProblemError> {
        self.check_dim(point.len())?;
        let mut out = Vec::with_capacity(point.len());
        for axis in 0..point.len() {
            let x_jets = self.direction_jets(tape, point, axis, order)?;
            let inputs = self.normalize_inputs(tape, &x_jets);
            let raw = solver.forward_jet(tape, &inputs)?;
            out.push(self.reparameterize(tape, &x_jets, &raw[0])?);
        }
        Ok(out)
    }

    /// The residual `F` at `point` given trial jets along every axis.
    pub fn residual(&self, tape: &mut Tape, point: &[NodeRef], trial: &[Jet]) -> Result<NodeRef, ProblemError> {
        self.check_dim(point.len())?;
        self.check_dim(trial.len())?;
        let need = self.residual_order();
        if let Some(j) = trial.iter().find(|j| j.order() < need) {
            return Err(AutodiffError::OrderMismatch {
                expected: need,
                got: j.order(),
            }
            .into());
        }
        let u = trial[0].coeff(0);
        let f = match self.equation {
            Equation::ExpDecay { gamma } => {
                let gx = tape.mul_const(point[0], gamma);
                let e = tape.exp(gx);
                tape.sub(trial[0].coeff(1), e)
            }
            Equation::Logistic { gamma, m } => {
                let one_m = tape.constant(m);
                let gap = tape.sub(one_m, u);
                let prod = tape.mul(u, gap);
                let rhs = tape.mul_const(prod, gamma);
                tape.sub(trial[0].coeff(1), rhs)
            }
            Equation::HAtom { n, l } => {
                // u_xx − (1/n² − 2/x + l(l+1)/x²) u
                let one = tape.constant(1.0);
                let inv = tape.div(one, point[0])?;
                let mut potential = tape.mul_const(inv, -2.0);
                potential = tape.add_const(potential, 1.0 / (n * n) as f64);
                if l > 0 {
                    let inv2 = tape.square(inv);
                    let centrifugal = tape.mul_const(inv2, (l * (l + 1)) as f64);
                    potential = tape.add(potential, centrifugal);
                }
                let vu = tape.mul(potential, u);
                tape.sub(trial[0].coeff(2), vu)
            }
            Equation::Laplace { .. } => tape.add(trial[0].coeff(2), trial[1].coeff(2)),
            Equation::DecayOde { lambda } => {
                let lu = tape.mul_const(u, lambda);
                tape.add(trial[0].coeff(1), lu)
            }
        };
        Ok(f)
    }

    /// `F²` at one point.
    pub fn pointwise_loss(&self, tape: &mut Tape, point: &[NodeRef], trial: &[Jet]) -> Result<NodeRef, ProblemError> {
        let f = self.residual(tape, point, trial)?;
        Ok(tape.square(f))
    }

    /// Target value on the boundary for soft enforcement.
    pub fn boundary_value(&self, point: &[f64]) -> f64 {
        match self.equation {
            Equation::Laplace { boundary } if point[0] == self.domain.lo()[0] => boundary.eval(point[1]),
            _ => 0.0,
        }
    }

    pub fn has_analytic(&self) -> bool {
        match self.equation {
            Equation::Laplace { boundary } => boundary == LaplaceBoundary::SinPiY,
            Equation::HAtom { n, l } => l == 0 && (n == 1 || n == 2),
            _ => true,
        }
    }

    fn initial_value(&self) -> f64 {
        match self.trial {
            TrialMode::OdeIc { y0, .. } => y0,
            _ => 0.0,
        }
    }

    /// Closed-form solution at `point`.
    pub fn analytic(&self, point: &[f64]) -> Result<f64, ProblemError> {
        self.check_dim(point.len())?;
        if !self.has_analytic() {
            return Err(ProblemError::NoAnalytic(self.name.clone()));
        }
        let x = point[0];
        let u0 = self.initial_value();
        Ok(match self.equation {
            Equation::ExpDecay { gamma } => u0 + ((gamma * x).exp() - 1.0) / gamma,
            Equation::Logistic { gamma, m } => {
                let a = (m - u0) / u0;
                m / (1.0 + a * (-gamma * m * x).exp())
            }
            Equation::HAtom { n: 1, .. } => 2.0 * x * (-x).exp(),
            Equation::HAtom { .. } => x * (1.0 - x / 2.0) * (-x / 2.0).exp() / 2f64.sqrt(),
            Equation::Laplace { .. } => {
                let y = point[1];
                (PI * y).sin() * (PI * (1.0 - x)).sinh() / PI.sinh()
            }
            Equation::DecayOde { lambda } => u0 * (-lambda * x).exp(),
        })
    }

    /// The closed-form solution as jets along every axis; a drop-in
    /// replacement for [`Problem::network_jets`].
    pub fn analytic_jets(&self, tape: &mut Tape, point: &[NodeRef], order: usize) -> Result<Vec<Jet>, ProblemError> {
        self.check_dim(point.len())?;
        if !self.has_analytic() {
            return Err(ProblemError::NoAnalytic(self.name.clone()));
        }
        let u0 = self.initial_value();
        let mut out = Vec::with_capacity(point.len());
        for axis in 0..point.len() {
            let xj = self.direction_jets(tape, point, axis, order)?;
            let x = &xj[0];
            let u = match self.equation {
                Equation::ExpDecay { gamma } => {
                    let gx = tape.jet_scale(x, gamma);
                    let e = tape.jet_exp(&gx)?;
                    let em1 = tape.jet_add_const(&e, -1.0);
                    let q = tape.jet_scale(&em1, 1.0 / gamma);
                    tape.jet_add_const(&q, u0)
                }
                Equation::Logistic { gamma, m } => {
                    let a = (m - u0) / u0;
                    let rx = tape.jet_scale(x, -gamma * m);
                    let e = tape.jet_exp(&rx)?;
                    let ae = tape.jet_scale(&e, a);
                    let den = tape.jet_add_const(&ae, 1.0);
                    let num = tape.jet_constant(m, order)?;
                    tape.jet_div(&num, &den)?
                }
                Equation::HAtom { n, .. } => {
                    let scaled = tape.jet_scale(x, -1.0 / n as f64);
                    let decay = tape.jet_exp(&scaled)?;
                    let poly = if n == 1 {
                        tape.jet_scale(x, 2.0)
                    } else {
                        let half = tape.jet_scale(x, -0.5);
                        let one_minus = tape.jet_add_const(&half, 1.0);
                        let p = tape.jet_mul(x, &one_minus)?;
                        tape.jet_scale(&p, 1.0 / 2f64.sqrt())
                    };
                    tape.jet_mul(&poly, &decay)?
                }
                Equation::Laplace { .. } => {
                    let y = &xj[1];
                    let py = tape.jet_scale(y, PI);
                    let s = tape.jet_sin(&py)?;
                    // sinh(π(1 − x)) = (e^{a} − e^{−a}) / 2
                    let nx = tape.jet_neg(x);
                    let one_minus = tape.jet_add_const(&nx, 1.0);
                    let a = tape.jet_scale(&one_minus, PI);
                    let ea = tape.jet_exp(&a)?;
                    let na = tape.jet_neg(&a);
                    let ena = tape.jet_exp(&na)?;
                    let diff = tape.jet_sub(&ea, &ena)?;
                    let sh = tape.jet_scale(&diff, 0.5 / PI.sinh());
                    tape.jet_mul(&s, &sh)?
                }
                Equation::DecayOde { lambda } => {
                    let lx = tape.jet_scale(x, -lambda);
                    let e = tape.jet_exp(&lx)?;
                    tape.jet_scale(&e, u0)
                }
            };
            out.push(u);
        }
        Ok(out)
    }
}

/// Anything that yields trial-solution jets at a point: a solver network
/// wrapped by its problem's reparameterization, the analytic solution, or a
/// hand-written stub in tests.
pub trait TrialFunction {
    fn trial_jets(&self, tape: &mut Tape, point: &[NodeRef], order: usize) -> Result<Vec<Jet>, ProblemError>;
}

/// A bound solver network seen through its problem's reparameterization.
pub struct NetworkTrial<'a> {
    pub problem: &'a Problem,
    pub solver: BoundMlp<'a>,
}

impl TrialFunction for NetworkTrial<'_> {
    fn trial_jets(&self, tape: &mut Tape, point: &[NodeRef], order: usize) -> Result<Vec<Jet>, ProblemError> {
        self.problem.network_jets(tape, &self.solver, point, order)
    }
}

/// The closed-form solution of a problem.
pub struct AnalyticTrial<'a>(pub &'a Problem);

impl TrialFunction for AnalyticTrial<'_> {
    fn trial_jets(&self, tape: &mut Tape, point: &[NodeRef], order: usize) -> Result<Vec<Jet>, ProblemError> {
        self.0.analytic_jets(tape, point, order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Mlp, MlpConfig};

    fn solver_for(p: &Problem, seed: u64) -> Mlp {
        let cfg = MlpConfig::new(vec![p.dim(), 8, 8, 1], Activation::Tanh, Activation::Identity).unwrap();
        Mlp::init(cfg, seed)
    }

    fn trial_value(p: &Problem, net: &Mlp, point: &[f64]) -> f64 {
        let mut t = Tape::new();
        let bound = net.bind(&mut t, false);
        let pt: Vec<_> = point.iter().map(|&v| t.constant(v)).collect();
        let jets = p.network_jets(&mut t, &bound, &pt, 0).unwrap();
        t.value(jets[0].value())
    }

    #[test]
    fn names_resolve() {
        for name in PROBLEM_NAMES {
            let p = Problem::by_name(name).unwrap();
            assert_eq!(p.name, name);
            p.validate().unwrap();
        }
        let err = Problem::by_name("poisson").unwrap_err().to_string();
        assert!(err.contains("expdecay") && err.contains("laplace"));
    }

    #[test]
    fn initial_condition_holds_for_any_network() {
        for p in [Problem::expdecay(), Problem::logistic(), Problem::expdecay_ode()] {
            let TrialMode::OdeIc { x0, y0 } = p.trial else {
                unreachable!()
            };
            for seed in 0..5 {
                assert_eq!(trial_value(&p, &solver_for(&p, seed), &[x0]), y0);
            }
        }
        assert_eq!(
            trial_value(&Problem::expdecay(), &solver_for(&Problem::expdecay(), 9), &[0.0]),
            0.1
        );
    }

    #[test]
    fn laplace_edge_matches_boundary_function() {
        let p = Problem::laplace();
        let net = solver_for(&p, 3);
        for y in [0.0, 0.25, 0.5, 0.9, 1.0] {
            assert!((trial_value(&p, &net, &[0.0, y]) - (PI * y).sin()).abs() < 1e-15);
            assert!(trial_value(&p, &net, &[1.0, y]).abs() < 1e-15);
        }
    }

    #[test]
    fn hatom_pins_both_ends() {
        for n in [1, 2] {
            let p = Problem::hatom(n);
            let net = solver_for(&p, 4);
            assert_eq!(trial_value(&p, &net, &[0.0]), 0.0);
            assert!(trial_value(&p, &net, &[30.0]).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_examples() {
        // u_x hand-set to e^{γx}
        let p = Problem::expdecay();
        let mut t = Tape::new();
        let x = t.constant(0.4);
        let u = t.constant(0.3);
        let ux = t.constant((-5.0_f64 * 0.4).exp());
        let jet = Jet::from_coeffs(&[u, ux]).unwrap();
        let f = p.residual(&mut t, &[x], &[jet]).unwrap();
        assert_eq!(t.value(f), 0.0);

        // u = x on the Laplace problem
        let p = Problem::laplace();
        let pt = [t.constant(0.3), t.constant(0.6)];
        let jx = t.jet_lift(0.3, true, 2).unwrap();
        let jy = t.jet_lift(0.3, false, 2).unwrap();
        let f = p.residual(&mut t, &pt, &[jx, jy]).unwrap();
        assert_eq!(t.value(f), 0.0);
    }

    #[test]
    fn pointwise_loss_squares() {
        let p = Problem::expdecay_ode();
        let mut t = Tape::new();
        let x = t.constant(1.0);
        // u_x + 5u with u = 0, u_x = -3
        let u = t.constant(0.0);
        let ux = t.constant(-3.0);
        let jet = Jet::from_coeffs(&[u, ux]).unwrap();
        let l = p.pointwise_loss(&mut t, &[x], &[jet]).unwrap();
        assert_eq!(t.value(l), 9.0);
    }

    #[test]
    fn analytic_anchor_values() {
        assert_eq!(Problem::expdecay().analytic(&[0.0]).unwrap(), 0.1);
        assert_eq!(Problem::logistic().analytic(&[0.0]).unwrap(), 0.7);
        assert!(Problem::laplace_soft(LaplaceBoundary::SinY)
            .analytic(&[0.0, 0.0])
            .is_err());
    }

    #[test]
    fn residual_order_checked() {
        let p = Problem::hatom(1);
        let mut t = Tape::new();
        let x = t.constant(1.0);
        let j = t.jet_lift(1.0, true, 1).unwrap();
        assert!(matches!(
            p.residual(&mut t, &[x], &[j]),
            Err(ProblemError::Autodiff(AutodiffError::OrderMismatch { .. }))
        ));
        assert!(matches!(
            p.residual(&mut t, &[x, x], &[j]),
            Err(ProblemError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn hatom_residual_at_origin_is_a_domain_error() {
        let p = Problem::hatom(1);
        let mut t = Tape::new();
        let x = t.constant(0.0);
        let j = t.jet_lift(0.0, true, 2).unwrap();
        assert!(matches!(
            p.residual(&mut t, &[x], &[j]),
            Err(ProblemError::Autodiff(AutodiffError::Domain { .. }))
        ));
        let clamped = p.residual_point(&mut t, &[x]);
        assert_eq!(t.value(clamped[0]), HATOM_MIN_RADIUS);
    }

    #[test]
    fn overrides() {
        let mut p = Problem::logistic();
        p.apply_overrides(&ProblemOverrides {
            gamma: Some(-2.0),
            u0: Some(0.5),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(p.params()["gamma"], -2.0);
        assert_eq!(p.analytic(&[0.0]).unwrap(), 0.5);
        assert!(p
            .apply_overrides(&ProblemOverrides {
                lambda: Some(1.0),
                ..Default::default()
            })
            .is_err());

        let mut l = Problem::laplace();
        assert!(l
            .apply_overrides(&ProblemOverrides {
                laplace_boundary: Some(LaplaceBoundary::SinY),
                ..Default::default()
            })
            .is_err());
        let mut l = Problem::laplace();
        l.apply_overrides(&ProblemOverrides {
            laplace_boundary: Some(LaplaceBoundary::SinY),
            soft_boundary: Some(true),
            beta: Some(5.0),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(
            l.trial,
            TrialMode::PdeSoft {
                beta: 5.0,
                n_boundary: 64
            }
        );
        let json = r#"{"gamma": 1.0, "bogus": 2}"#;
        assert!(serde_json::from_str::<ProblemOverrides>(json).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 10.0, 3), vec![0.0, 5.0, 10.0]);
        let g = linspace(0.0, 1.0, 32);
        assert_eq!(g.len(), 32);
        assert_eq!((g[0], g[31]), (0.0, 1.0));
    }
}
