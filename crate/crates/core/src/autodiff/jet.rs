//! Truncated Taylor propagation recorded on the tape.
//!
//! A [`Jet`] carries `u, u', u'', u'''` along one input direction, stored as
//! derivatives (not Taylor coefficients). Every coefficient is itself a tape
//! node, so derivatives along the input stay differentiable with respect to
//! network parameters and sampled points.

use super::{AutodiffError, NodeRef, Op, Tape};

pub const MAX_JET_ORDER: usize = 3;

const UNUSED: NodeRef = NodeRef(u32::MAX);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jet {
    coeffs: [NodeRef; MAX_JET_ORDER + 1],
    order: usize,
}

impl Jet {
    /// Builds a jet from explicit derivative nodes `[u, u', ...]`.
    pub fn from_coeffs(coeffs: &[NodeRef]) -> Result<Self, AutodiffError> {
        if coeffs.is_empty() || coeffs.len() > MAX_JET_ORDER + 1 {
            return Err(AutodiffError::UnsupportedOrder(coeffs.len().wrapping_sub(1)));
        }
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        c[..coeffs.len()].copy_from_slice(coeffs);
        Ok(Self {
            coeffs: c,
            order: coeffs.len() - 1,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[NodeRef] {
        &self.coeffs[..=self.order]
    }

    /// The k-th derivative node.
    ///
    /// # Panics
    ///
    /// If `k` exceeds the jet order.
    pub fn coeff(&self, k: usize) -> NodeRef {
        assert!(k <= self.order, "jet of order {} has no coefficient {k}", self.order);
        self.coeffs[k]
    }

    pub fn value(&self) -> NodeRef {
        self.coeffs[0]
    }

    /// Drops coefficients above `order`.
    pub fn truncate(&self, order: usize) -> Result<Self, AutodiffError> {
        if order > self.order {
            return Err(AutodiffError::OrderMismatch {
                expected: order,
                got: self.order,
            });
        }
        Ok(Self {
            coeffs: self.coeffs,
            order,
        })
    }
}

fn check_order(order: usize) -> Result<(), AutodiffError> {
    if order > MAX_JET_ORDER {
        Err(AutodiffError::UnsupportedOrder(order))
    } else {
        Ok(())
    }
}

fn same_order(a: &Jet, b: &Jet) -> Result<usize, AutodiffError> {
    if a.order == b.order {
        Ok(a.order)
    } else {
        Err(AutodiffError::OrderMismatch {
            expected: a.order,
            got: b.order,
        })
    }
}

impl Tape {
    /// Seeds an input coordinate: `[value, 1, 0, ...]` when `active`,
    /// `[value, 0, ...]` otherwise. All entries are constants.
    pub fn jet_lift(&mut self, value: f64, active: bool, order: usize) -> Result<Jet, AutodiffError> {
        check_order(order)?;
        let base = self.constant(value);
        self.jet_seed(base, active, order)
    }

    /// Like [`Tape::jet_lift`] with an existing node as the value, e.g. a
    /// sampled coordinate that itself needs gradients.
    pub fn jet_seed(&mut self, value: NodeRef, active: bool, order: usize) -> Result<Jet, AutodiffError> {
        check_order(order)?;
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        c[0] = value;
        if order >= 1 {
            c[1] = self.constant(if active { 1.0 } else { 0.0 });
        }
        if order >= 2 {
            let zero = self.constant(0.0);
            for slot in c.iter_mut().take(order + 1).skip(2) {
                *slot = zero;
            }
        }
        Ok(Jet { coeffs: c, order })
    }

    /// A jet of a constant function.
    pub fn jet_constant(&mut self, value: f64, order: usize) -> Result<Jet, AutodiffError> {
        self.jet_lift(value, false, order)
    }

    /// Generic dispatch over the elementary ops.
    ///
    /// `constant` plays the same role as in [`Tape::record`].
    pub fn jet_apply(&mut self, op: Op, args: &[Jet], constant: Option<f64>) -> Result<Jet, AutodiffError> {
        let arity = |expected: usize| {
            if args.len() == expected {
                Ok(())
            } else {
                Err(AutodiffError::Arity {
                    op,
                    expected,
                    got: args.len(),
                })
            }
        };
        match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div => arity(2)?,
            Op::Sum | Op::Dot => {}
            _ => arity(1)?,
        }
        let need_constant = || constant.ok_or(AutodiffError::MissingConstant(op));
        match op {
            Op::Add => self.jet_add(&args[0], &args[1]),
            Op::Sub => self.jet_sub(&args[0], &args[1]),
            Op::Mul => self.jet_mul(&args[0], &args[1]),
            Op::Div => self.jet_div(&args[0], &args[1]),
            Op::Neg => Ok(self.jet_neg(&args[0])),
            Op::Exp => self.jet_exp(&args[0]),
            Op::Ln => self.jet_ln(&args[0]),
            Op::Sin => self.jet_sin(&args[0]),
            Op::Cos => self.jet_cos(&args[0]),
            Op::Tanh => self.jet_tanh(&args[0]),
            Op::Sqrt => self.jet_sqrt(&args[0]),
            Op::PowConst => self.jet_pow_const(&args[0], need_constant()?),
            Op::MaxConst => self.jet_max_const(&args[0], need_constant()?),
            Op::Square => self.jet_mul(&args[0], &args[0]),
            Op::Sum => self.jet_sum(args),
            Op::Dot => {
                if !args.len().is_multiple_of(2) {
                    return Err(AutodiffError::Arity {
                        op,
                        expected: args.len() + 1,
                        got: args.len(),
                    });
                }
                let (a, b) = args.split_at(args.len() / 2);
                let mut terms = Vec::with_capacity(a.len());
                for (x, y) in a.iter().zip(b) {
                    terms.push(self.jet_mul(x, y)?);
                }
                self.jet_sum(&terms)
            }
        }
    }

    pub fn jet_add(&mut self, a: &Jet, b: &Jet) -> Result<Jet, AutodiffError> {
        let order = same_order(a, b)?;
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        for k in 0..=order {
            c[k] = self.add(a.coeffs[k], b.coeffs[k]);
        }
        Ok(Jet { coeffs: c, order })
    }

    pub fn jet_sub(&mut self, a: &Jet, b: &Jet) -> Result<Jet, AutodiffError> {
        let order = same_order(a, b)?;
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        for k in 0..=order {
            c[k] = self.sub(a.coeffs[k], b.coeffs[k]);
        }
        Ok(Jet { coeffs: c, order })
    }

    pub fn jet_neg(&mut self, a: &Jet) -> Jet {
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        for k in 0..=a.order {
            c[k] = self.neg(a.coeffs[k]);
        }
        Jet {
            coeffs: c,
            order: a.order,
        }
    }

    pub fn jet_sum(&mut self, xs: &[Jet]) -> Result<Jet, AutodiffError> {
        let Some(first) = xs.first() else {
            return Err(AutodiffError::Arity {
                op: Op::Sum,
                expected: 1,
                got: 0,
            });
        };
        let order = first.order;
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        let mut buf = Vec::with_capacity(xs.len());
        for k in 0..=order {
            buf.clear();
            for x in xs {
                same_order(first, x)?;
                buf.push(x.coeffs[k]);
            }
            c[k] = self.sum(&buf);
        }
        Ok(Jet { coeffs: c, order })
    }

    /// `a + c` for a scalar constant `c`.
    pub fn jet_add_const(&mut self, a: &Jet, c: f64) -> Jet {
        let mut out = *a;
        out.coeffs[0] = self.add_const(a.coeffs[0], c);
        out
    }

    /// `c · a` for a scalar constant `c`.
    pub fn jet_scale(&mut self, a: &Jet, c: f64) -> Jet {
        let s = self.constant(c);
        let mut out = *a;
        for k in 0..=a.order {
            out.coeffs[k] = self.mul(a.coeffs[k], s);
        }
        out
    }

    /// `node · a` where `node` does not vary along the jet direction.
    pub fn jet_scale_node(&mut self, a: &Jet, node: NodeRef) -> Jet {
        let mut out = *a;
        for k in 0..=a.order {
            out.coeffs[k] = self.mul(a.coeffs[k], node);
        }
        out
    }

    /// `Σ w[i]·x[i] + bias` with weights and bias constant along the jet
    /// direction; one fused node per coefficient.
    pub fn jet_linear(&mut self, weights: &[NodeRef], xs: &[Jet], bias: Option<NodeRef>) -> Result<Jet, AutodiffError> {
        assert_eq!(weights.len(), xs.len(), "weight/input count mismatch");
        let order = xs.first().map_or(0, |x| x.order);
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        let mut buf = Vec::with_capacity(xs.len());
        for k in 0..=order {
            buf.clear();
            for x in xs {
                if x.order != order {
                    return Err(AutodiffError::OrderMismatch {
                        expected: order,
                        got: x.order,
                    });
                }
                buf.push(x.coeffs[k]);
            }
            let d = self.dot(weights, &buf);
            c[k] = match (k, bias) {
                (0, Some(b)) => self.add(d, b),
                _ => d,
            };
        }
        Ok(Jet { coeffs: c, order })
    }

    /// Leibniz rule: `(ab)^(k) = Σ C(k,i) a^(i) b^(k-i)`.
    pub fn jet_mul(&mut self, a: &Jet, b: &Jet) -> Result<Jet, AutodiffError> {
        let order = same_order(a, b)?;
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        c[0] = self.mul(a.coeffs[0], b.coeffs[0]);
        let mut lhs = Vec::with_capacity(8);
        let mut rhs = Vec::with_capacity(8);
        for k in 1..=order {
            lhs.clear();
            rhs.clear();
            for i in 0..=k {
                // repeated operand pairs carry the binomial weight
                for _ in 0..binomial(k, i) {
                    lhs.push(a.coeffs[i]);
                    rhs.push(b.coeffs[k - i]);
                }
            }
            c[k] = self.dot(&lhs, &rhs);
        }
        Ok(Jet { coeffs: c, order })
    }

    /// Quotient via `q^(k) = (a^(k) − Σ_{i≥1} C(k,i) b^(i) q^(k−i)) / b`.
    pub fn jet_div(&mut self, a: &Jet, b: &Jet) -> Result<Jet, AutodiffError> {
        let order = same_order(a, b)?;
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        c[0] = self.div(a.coeffs[0], b.coeffs[0])?;
        let mut lhs = Vec::with_capacity(8);
        let mut rhs = Vec::with_capacity(8);
        for k in 1..=order {
            lhs.clear();
            rhs.clear();
            for i in 1..=k {
                for _ in 0..binomial(k, i) {
                    lhs.push(b.coeffs[i]);
                    rhs.push(c[k - i]);
                }
            }
            let s = self.dot(&lhs, &rhs);
            let num = self.sub(a.coeffs[k], s);
            c[k] = self.div(num, b.coeffs[0])?;
        }
        Ok(Jet { coeffs: c, order })
    }

    /// Faà di Bruno composition of a scalar function with value node `f0`
    /// and derivative nodes `d[m] = f^(m+1)(u)`.
    fn compose(&mut self, u: &Jet, f0: NodeRef, d: &[NodeRef]) -> Jet {
        let order = u.order;
        let mut c = [UNUSED; MAX_JET_ORDER + 1];
        c[0] = f0;
        if order >= 1 {
            c[1] = self.mul(d[0], u.coeffs[1]);
        }
        if order >= 2 {
            let u1sq = self.square(u.coeffs[1]);
            c[2] = self.dot(&[d[1], d[0]], &[u1sq, u.coeffs[2]]);
        }
        if order >= 3 {
            let u1sq = self.square(u.coeffs[1]);
            let u1cube = self.mul(u1sq, u.coeffs[1]);
            let u1u2 = self.mul(u.coeffs[1], u.coeffs[2]);
            c[3] = self.dot(
                &[d[2], d[1], d[1], d[1], d[0]],
                &[u1cube, u1u2, u1u2, u1u2, u.coeffs[3]],
            );
        }
        Jet { coeffs: c, order }
    }

    pub fn jet_exp(&mut self, u: &Jet) -> Result<Jet, AutodiffError> {
        let y = self.exp(u.coeffs[0]);
        Ok(self.compose(u, y, &[y, y, y]))
    }

    pub fn jet_tanh(&mut self, u: &Jet) -> Result<Jet, AutodiffError> {
        let t = self.tanh(u.coeffs[0]);
        let mut d = [UNUSED; 3];
        if u.order >= 1 {
            // 1 − t²
            let one = self.constant(1.0);
            let t2 = self.square(t);
            d[0] = self.sub(one, t2);
        }
        if u.order >= 2 {
            // −2 t (1 − t²)
            let td = self.mul(t, d[0]);
            d[1] = self.mul_const(td, -2.0);
        }
        if u.order >= 3 {
            // −2 (1 − t²)² − 2 t f''
            let a = self.square(d[0]);
            let b = self.mul(t, d[1]);
            let s = self.add(a, b);
            d[2] = self.mul_const(s, -2.0);
        }
        Ok(self.compose(u, t, &d))
    }

    pub fn jet_sin(&mut self, u: &Jet) -> Result<Jet, AutodiffError> {
        let s = self.sin(u.coeffs[0]);
        let mut d = [UNUSED; 3];
        if u.order >= 1 {
            d[0] = self.cos(u.coeffs[0]);
        }
        if u.order >= 2 {
            d[1] = self.neg(s);
        }
        if u.order >= 3 {
            d[2] = self.neg(d[0]);
        }
        Ok(self.compose(u, s, &d))
    }

    pub fn jet_cos(&mut self, u: &Jet) -> Result<Jet, AutodiffError> {
        let c = self.cos(u.coeffs[0]);
        let mut d = [UNUSED; 3];
        if u.order >= 1 {
            let s = self.sin(u.coeffs[0]);
            d[0] = self.neg(s);
        }
        if u.order >= 2 {
            d[1] = self.neg(c);
        }
        if u.order >= 3 {
            d[2] = self.neg(d[0]);
        }
        Ok(self.compose(u, c, &d))
    }

    pub fn jet_ln(&mut self, u: &Jet) -> Result<Jet, AutodiffError> {
        let y = self.ln(u.coeffs[0])?;
        let mut d = [UNUSED; 3];
        if u.order >= 1 {
            let one = self.constant(1.0);
            d[0] = self.div(one, u.coeffs[0])?;
        }
        if u.order >= 2 {
            let r2 = self.square(d[0]);
            d[1] = self.neg(r2);
        }
        if u.order >= 3 {
            let r3 = self.pow_const(d[0], 3.0)?;
            d[2] = self.mul_const(r3, 2.0);
        }
        Ok(self.compose(u, y, &d))
    }

    pub fn jet_sqrt(&mut self, u: &Jet) -> Result<Jet, AutodiffError> {
        let s = self.sqrt(u.coeffs[0])?;
        let mut d = [UNUSED; 3];
        if u.order >= 1 {
            let half = self.constant(0.5);
            d[0] = self.div(half, s)?;
        }
        if u.order >= 2 {
            // f'' = −f' / (2u)
            let two_u = self.mul_const(u.coeffs[0], 2.0);
            let q = self.div(d[0], two_u)?;
            d[1] = self.neg(q);
        }
        if u.order >= 3 {
            // f''' = −3 f'' / (2u)
            let two_u = self.mul_const(u.coeffs[0], 2.0);
            let q = self.div(d[1], two_u)?;
            d[2] = self.mul_const(q, -3.0);
        }
        Ok(self.compose(u, s, &d))
    }

    pub fn jet_pow_const(&mut self, u: &Jet, p: f64) -> Result<Jet, AutodiffError> {
        let y = self.pow_const(u.coeffs[0], p)?;
        let mut d = [UNUSED; 3];
        let mut factor = 1.0;
        for m in 0..u.order {
            factor *= p - m as f64;
            d[m] = if factor == 0.0 {
                self.constant(0.0)
            } else {
                let pw = self.pow_const(u.coeffs[0], p - (m + 1) as f64)?;
                self.mul_const(pw, factor)
            };
        }
        Ok(self.compose(u, y, &d))
    }

    /// `max(u, c)`: the identity jet above `c`, a constant jet at or below.
    pub fn jet_max_const(&mut self, u: &Jet, c: f64) -> Result<Jet, AutodiffError> {
        let y = self.max_const(u.coeffs[0], c);
        let mut out = *u;
        out.coeffs[0] = y;
        if self.value(u.coeffs[0]) <= c && u.order >= 1 {
            let zero = self.constant(0.0);
            for k in 1..=u.order {
                out.coeffs[k] = zero;
            }
        }
        Ok(out)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(t: &Tape, j: &Jet) -> Vec<f64> {
        j.coeffs().iter().map(|&c| t.value(c)).collect()
    }

    #[test]
    fn lift_seeds() {
        let mut t = Tape::new();
        let a = t.jet_lift(5.0, true, 2).unwrap();
        assert_eq!(values(&t, &a), vec![5.0, 1.0, 0.0]);
        let b = t.jet_lift(5.0, false, 2).unwrap();
        assert_eq!(values(&t, &b), vec![5.0, 0.0, 0.0]);
        assert_eq!(t.jet_lift(1.0, true, 4), Err(AutodiffError::UnsupportedOrder(4)));
    }

    #[test]
    fn identity_jet() {
        let mut t = Tape::new();
        for x in [-2.0, 0.0, 3.5] {
            let j = t.jet_lift(x, true, 3).unwrap();
            assert_eq!(values(&t, &j), vec![x, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn exp_and_tanh_at_origin() {
        let mut t = Tape::new();
        let x = t.jet_lift(0.0, true, 2).unwrap();
        let e = t.jet_apply(Op::Exp, &[x], None).unwrap();
        assert_eq!(values(&t, &e), vec![1.0, 1.0, 1.0]);
        let th = t.jet_apply(Op::Tanh, &[x], None).unwrap();
        assert_eq!(values(&t, &th), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn x_sin_x_matches_finite_differences() {
        let f = |x: f64| x * x.sin();
        let x0 = 0.7;
        let h = 1e-4;
        let d1 = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
        let d2 = (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h);
        let mut t = Tape::new();
        let x = t.jet_lift(x0, true, 2).unwrap();
        let s = t.jet_apply(Op::Sin, &[x], None).unwrap();
        let p = t.jet_apply(Op::Mul, &[s, x], None).unwrap();
        let v = values(&t, &p);
        assert!((v[1] - d1).abs() / d1.abs() < 1e-4);
        assert!((v[2] - d2).abs() / d2.abs() < 1e-4);
    }

    #[test]
    fn order_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.jet_lift(1.0, true, 1).unwrap();
        let b = t.jet_lift(1.0, true, 2).unwrap();
        assert!(matches!(t.jet_add(&a, &b), Err(AutodiffError::OrderMismatch { .. })));
    }

    #[test]
    fn division_by_zero_in_jet() {
        let mut t = Tape::new();
        let a = t.jet_lift(1.0, true, 1).unwrap();
        let z = t.jet_lift(0.0, false, 1).unwrap();
        assert!(matches!(
            t.jet_div(&a, &z),
            Err(AutodiffError::Domain { op: Op::Div, .. })
        ));
        assert!(matches!(t.jet_ln(&z), Err(AutodiffError::Domain { op: Op::Ln, .. })));
    }

    #[test]
    fn max_const_branches() {
        let mut t = Tape::new();
        let x = t.jet_lift(2.0, true, 2).unwrap();
        let hi = t.jet_max_const(&x, 1.0).unwrap();
        assert_eq!(values(&t, &hi), vec![2.0, 1.0, 0.0]);
        let lo = t.jet_max_const(&x, 3.0).unwrap();
        assert_eq!(values(&t, &lo), vec![3.0, 0.0, 0.0]);
    }

    #[test]
    fn binomials() {
        assert_eq!((0..=3).map(|i| binomial(3, i)).collect::<Vec<_>>(), vec![1, 3, 3, 1]);
    }
}
