//! Oracles shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use advpinn::autodiff::{AutodiffError, Jet, NodeRef, Tape};
use rand::Rng;

/// Random scalar expression over a few input variables.
#[derive(Clone, Debug)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tanh(Box<Expr>),
    Square(Box<Expr>),
    Pow(Box<Expr>, f64),
}

const POWERS: [f64; 5] = [2.0, 3.0, -1.0, 0.5, 1.5];

/// Operands of partial functions must stay this far inside their domain,
/// so finite-difference stencils never straddle a singularity.
const MARGIN: f64 = 0.3;
const MAX_MAGNITUDE: f64 = 50.0;

/// Expression of depth at most `depth` whose root is always an operation.
pub fn random_expr<R: Rng + ?Sized>(rng: &mut R, vars: usize, depth: usize) -> Expr {
    grow(rng, vars, depth, true)
}

fn grow<R: Rng + ?Sized>(rng: &mut R, vars: usize, depth: usize, root: bool) -> Expr {
    if depth == 0 || (!root && rng.random::<f64>() < 0.15) {
        return if rng.random::<f64>() < 0.75 {
            Expr::Var(rng.random_range(0..vars))
        } else {
            Expr::Const(rng.random_range(-2.0..2.0))
        };
    }
    let sub = |rng: &mut R| Box::new(grow(rng, vars, depth - 1, false));
    match rng.random_range(0..13) {
        0 => Expr::Add(sub(rng), sub(rng)),
        1 => Expr::Sub(sub(rng), sub(rng)),
        2 => Expr::Mul(sub(rng), sub(rng)),
        3 => Expr::Div(sub(rng), sub(rng)),
        4 => Expr::Neg(sub(rng)),
        5 => Expr::Exp(sub(rng)),
        6 => Expr::Ln(sub(rng)),
        7 => Expr::Sqrt(sub(rng)),
        8 => Expr::Sin(sub(rng)),
        9 => Expr::Cos(sub(rng)),
        10 => Expr::Tanh(sub(rng)),
        11 => Expr::Square(sub(rng)),
        _ => Expr::Pow(sub(rng), POWERS[rng.random_range(0..POWERS.len())]),
    }
}

fn guard(v: f64) -> Option<f64> {
    (v.is_finite() && v.abs() <= MAX_MAGNITUDE).then_some(v)
}

impl Expr {
    /// Plain evaluation; `None` when an operand leaves the safe region.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        use Expr::*;
        let v = match self {
            Var(i) => x[*i],
            Const(c) => *c,
            Add(a, b) => a.eval(x)? + b.eval(x)?,
            Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Div(a, b) => {
                let d = b.eval(x)?;
                if d.abs() < MARGIN {
                    return None;
                }
                a.eval(x)? / d
            }
            Neg(a) => -a.eval(x)?,
            Exp(a) => {
                let u = a.eval(x)?;
                if u > 4.0 {
                    return None;
                }
                u.exp()
            }
            Ln(a) => positive(a.eval(x)?)?.ln(),
            Sqrt(a) => positive(a.eval(x)?)?.sqrt(),
            Sin(a) => a.eval(x)?.sin(),
            Cos(a) => a.eval(x)?.cos(),
            Tanh(a) => a.eval(x)?.tanh(),
            Square(a) => a.eval(x)?.powi(2),
            Pow(a, p) => {
                let u = a.eval(x)?;
                match *p {
                    2.0 => u.powi(2),
                    3.0 => u.powi(3),
                    -1.0 if u.abs() >= MARGIN => 1.0 / u,
                    -1.0 => return None,
                    _ => positive(u)?.powf(*p),
                }
            }
        };
        guard(v)
    }

    /// Records the expression with the given input nodes.
    pub fn record(&self, tape: &mut Tape, x: &[NodeRef]) -> Result<NodeRef, AutodiffError> {
        use Expr::*;
        Ok(match self {
            Var(i) => x[*i],
            Const(c) => tape.constant(*c),
            Add(a, b) => {
                let (a, b) = (a.record(tape, x)?, b.record(tape, x)?);
                tape.add(a, b)
            }
            Sub(a, b) => {
                let (a, b) = (a.record(tape, x)?, b.record(tape, x)?);
                tape.sub(a, b)
            }
            Mul(a, b) => {
                let (a, b) = (a.record(tape, x)?, b.record(tape, x)?);
                tape.mul(a, b)
            }
            Div(a, b) => {
                let (a, b) = (a.record(tape, x)?, b.record(tape, x)?);
                tape.div(a, b)?
            }
            Neg(a) => {
                let a = a.record(tape, x)?;
                tape.neg(a)
            }
            Exp(a) => {
                let a = a.record(tape, x)?;
                tape.exp(a)
            }
            Ln(a) => {
                let a = a.record(tape, x)?;
                tape.ln(a)?
            }
            Sqrt(a) => {
                let a = a.record(tape, x)?;
                tape.sqrt(a)?
            }
            Sin(a) => {
                let a = a.record(tape, x)?;
                tape.sin(a)
            }
            Cos(a) => {
                let a = a.record(tape, x)?;
                tape.cos(a)
            }
            Tanh(a) => {
                let a = a.record(tape, x)?;
                tape.tanh(a)
            }
            Square(a) => {
                let a = a.record(tape, x)?;
                tape.square(a)
            }
            Pow(a, p) => {
                let a = a.record(tape, x)?;
                tape.pow_const(a, *p)?
            }
        })
    }

    /// Propagates input jets through the expression.
    pub fn jet(&self, tape: &mut Tape, x: &[Jet]) -> Result<Jet, AutodiffError> {
        use Expr::*;
        let order = x[0].order();
        match self {
            Var(i) => Ok(x[*i]),
            Const(c) => tape.jet_constant(*c, order),
            Add(a, b) => {
                let (a, b) = (a.jet(tape, x)?, b.jet(tape, x)?);
                tape.jet_add(&a, &b)
            }
            Sub(a, b) => {
                let (a, b) = (a.jet(tape, x)?, b.jet(tape, x)?);
                tape.jet_sub(&a, &b)
            }
            Mul(a, b) => {
                let (a, b) = (a.jet(tape, x)?, b.jet(tape, x)?);
                tape.jet_mul(&a, &b)
            }
            Div(a, b) => {
                let (a, b) = (a.jet(tape, x)?, b.jet(tape, x)?);
                tape.jet_div(&a, &b)
            }
            Neg(a) => {
                let a = a.jet(tape, x)?;
                Ok(tape.jet_neg(&a))
            }
            Exp(a) => {
                let a = a.jet(tape, x)?;
                tape.jet_exp(&a)
            }
            Ln(a) => {
                let a = a.jet(tape, x)?;
                tape.jet_ln(&a)
            }
            Sqrt(a) => {
                let a = a.jet(tape, x)?;
                tape.jet_sqrt(&a)
            }
            Sin(a) => {
                let a = a.jet(tape, x)?;
                tape.jet_sin(&a)
            }
            Cos(a) => {
                let a = a.jet(tape, x)?;
                tape.jet_cos(&a)
            }
            Tanh(a) => {
                let a = a.jet(tape, x)?;
                tape.jet_tanh(&a)
            }
            Square(a) => {
                let a = a.jet(tape, x)?;
                tape.jet_mul(&a, &a)
            }
            Pow(a, p) => {
                let a = a.jet(tape, x)?;
                tape.jet_pow_const(&a, *p)
            }
        }
    }

    pub fn depth(&self) -> usize {
        use Expr::*;
        match self {
            Var(_) | Const(_) => 0,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => 1 + a.depth().max(b.depth()),
            Neg(a) | Exp(a) | Ln(a) | Sqrt(a) | Sin(a) | Cos(a) | Tanh(a) | Square(a) | Pow(a, _) => 1 + a.depth(),
        }
    }
}

fn positive(u: f64) -> Option<f64> {
    (u >= MARGIN).then_some(u)
}

/// Largest and smallest step of the finite-difference ladder.
const FD_H_MAX: f64 = 0.2;
const FD_H_MIN: f64 = 2e-4;
const FD_RATIO: f64 = 1.25;

/// Richardson-extrapolated central differences along a geometric ladder of
/// steps; the estimate on the flattest stretch of the ladder (smallest
/// change to its neighbour) is returned. Steps whose stencil leaves the
/// safe region are skipped.
fn plateau(d: impl Fn(f64) -> Option<f64>) -> Option<f64> {
    let extrapolated = |h: f64| -> Option<f64> {
        let (a, b, c) = (d(h)?, d(h / 2.0)?, d(h / 4.0)?);
        let r1 = (4.0 * b - a) / 3.0;
        let r2 = (4.0 * c - b) / 3.0;
        Some((16.0 * r2 - r1) / 15.0)
    };
    let mut ladder = Vec::new();
    let mut h = FD_H_MAX;
    while h >= FD_H_MIN {
        if let Some(v) = extrapolated(h) {
            ladder.push(v);
        } else if !ladder.is_empty() {
            break;
        }
        h /= FD_RATIO;
    }
    ladder
        .windows(2)
        .min_by(|a, b| (a[0] - a[1]).abs().total_cmp(&(b[0] - b[1]).abs()))
        .map(|w| w[1])
}

/// Finite-difference estimates of the first three derivatives of `f`
/// along `axis`; `None` if no stencil fits inside the safe region.
pub fn fd_derivatives(f: &Expr, x: &[f64], axis: usize) -> Option<[f64; 3]> {
    let at = |t: f64| {
        let mut p = x.to_vec();
        p[axis] += t;
        f.eval(&p)
    };
    let stencil = |k: usize, h: f64| -> Option<f64> {
        Some(match k {
            0 => (at(h)? - at(-h)?) / (2.0 * h),
            1 => (at(h)? - 2.0 * at(0.0)? + at(-h)?) / (h * h),
            _ => (at(2.0 * h)? - 2.0 * at(h)? + 2.0 * at(-h)? - at(-2.0 * h)?) / (2.0 * h * h * h),
        })
    };
    Some([
        plateau(|h| stencil(0, h))?,
        plateau(|h| stencil(1, h))?,
        plateau(|h| stencil(2, h))?,
    ])
}

/// `|a − b| / max(|b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Error floor for relative comparisons of values near zero.
pub const REL_FLOOR: f64 = 1e-3;

/// Worst relative errors of one expression at one point: reverse-mode
/// gradient, then jets of order 1, 2 and 3 (each built separately) along
/// `axis`. `None` if the point is unusable for finite differences.
pub fn check_expr(f: &Expr, x: &[f64], axis: usize) -> Option<(f64, [f64; 3])> {
    f.eval(x)?;
    let fd: Vec<[f64; 3]> = (0..x.len()).map(|j| fd_derivatives(f, x, j)).collect::<Option<_>>()?;

    let mut tape = Tape::new();
    let vars: Vec<_> = x.iter().map(|&v| tape.var(v)).collect();
    let out = f.record(&mut tape, &vars).ok()?;
    let g = tape.backward(out).ok()?;
    let grad_err = (0..x.len())
        .map(|j| rel_err(g.get(vars[j]), fd[j][0], REL_FLOOR))
        .fold(0.0, f64::max);

    let mut jet_err = [0.0; 3];
    for order in 1..=3 {
        let mut tape = Tape::new();
        let seeds: Vec<_> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| tape.jet_lift(v, j == axis, order))
            .collect::<Result<_, _>>()
            .ok()?;
        let jet = f.jet(&mut tape, &seeds).ok()?;
        for k in 1..=order {
            let e = rel_err(tape.value(jet.coeff(k)), fd[axis][k - 1], REL_FLOOR);
            jet_err[order - 1] = f64::max(jet_err[order - 1], e);
        }
    }
    Some((grad_err, jet_err))
}

/// Exact k nearest neighbours of point `q` by exhaustive search, ties
/// broken by index, the query itself excluded.
pub fn brute_knn(points: &[f64], dim: usize, q: usize, k: usize) -> Vec<(usize, f64)> {
    let n = points.len() / dim;
    let p = &points[q * dim..(q + 1) * dim];
    let mut all: Vec<(f64, usize)> = (0..n)
        .filter(|&i| i != q)
        .map(|i| {
            let d2: f64 = points[i * dim..(i + 1) * dim]
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, i)
        })
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k, by_distance);
        all.truncate(k);
    }
    all.sort_by(by_distance);
    all.into_iter().take(k).map(|(d2, i)| (i, d2.sqrt())).collect()
}

/// Random point cloud with deliberate duplicates: each point after the
/// first copies an earlier one with probability `dup`.
pub fn random_cloud<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize, dup: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = Vec::with_capacity(n * dim);
    for i in 0..n {
        if i > 0 && rng.random::<f64>() < dup {
            let j = rng.random_range(0..i);
            let copy = pts[j * dim..(j + 1) * dim].to_vec();
            pts.extend(copy);
        } else {
            pts.extend((0..dim).map(|_| rng.random_range(-1.0..1.0)));
        }
    }
    pts
}
