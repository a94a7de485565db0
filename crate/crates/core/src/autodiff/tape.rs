use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef(pub(crate) u32);

impl NodeRef {
    /// Position of the node on its tape.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Elementary operations a tape can record.
///
/// `Sum` and `Dot` are n-ary fused forms of repeated `Add`/`Mul`; dense
/// layers would otherwise cost two nodes per multiply-accumulate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Sqrt,
    PowConst,
    MaxConst,
    Square,
    Sum,
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NodeKind {
    Variable,
    Constant,
    Op(Op),
}

/// Append-only record of a scalar computation.
///
/// Each node stores its forward value and the local partial derivatives
/// with respect to its operands. Partials are only stored for operands that
/// depend on a variable leaf; constant subgraphs fold to constant nodes and
/// cost nothing during the reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    values: Vec<f64>,
    kinds: Vec<NodeKind>,
    live: Vec<bool>,
    // entries of node i are span_ends[i-1]..span_ends[i]
    span_ends: Vec<u32>,
    operands: Vec<u32>,
    partials: Vec<f64>,
}

/// Adjoints of one output with respect to every node of a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap {
    adjoints: Vec<f64>,
}

impl GradientMap {
    /// Adjoint of `node`; nodes recorded after the output have adjoint zero.
    pub fn get(&self, node: NodeRef) -> f64 {
        self.adjoints.get(node.index()).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, entries: usize) -> Self {
        Self {
            values: Vec::with_capacity(nodes),
            kinds: Vec::with_capacity(nodes),
            live: Vec::with_capacity(nodes),
            span_ends: Vec::with_capacity(nodes),
            operands: Vec::with_capacity(entries),
            partials: Vec::with_capacity(entries),
        }
    }

    /// Drops every node while keeping the allocations.
    pub fn clear(&mut self) {
        self.values.clear();
        self.kinds.clear();
        self.live.clear();
        self.span_ends.clear();
        self.operands.clear();
        self.partials.clear();
    }

    /// Rolls the tape back to its first `len` nodes.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.len() {
            return;
        }
        let entries = if len == 0 { 0 } else { self.span_ends[len - 1] as usize };
        self.values.truncate(len);
        self.kinds.truncate(len);
        self.live.truncate(len);
        self.span_ends.truncate(len);
        self.operands.truncate(entries);
        self.partials.truncate(entries);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of stored (operand, partial) pairs.
    pub fn entry_count(&self) -> usize {
        self.operands.len()
    }

    pub fn value(&self, node: NodeRef) -> f64 {
        self.values[node.index()]
    }

    pub fn values(&self, nodes: &[NodeRef]) -> Vec<f64> {
        nodes.iter().map(|&n| self.value(n)).collect()
    }

    /// Whether the node depends on at least one variable leaf.
    pub fn is_variable(&self, node: NodeRef) -> bool {
        self.live[node.index()]
    }

    /// The recorded operation of a node, `None` for leaves.
    pub fn op(&self, node: NodeRef) -> Option<Op> {
        match self.kinds[node.index()] {
            NodeKind::Op(op) => Some(op),
            _ => None,
        }
    }

    /// Operands of a node that carry a stored partial, with those partials.
    pub fn local_partials(&self, node: NodeRef) -> Vec<(NodeRef, f64)> {
        let (start, end) = self.span(node.index());
        (start..end)
            .map(|j| (NodeRef(self.operands[j]), self.partials[j]))
            .collect()
    }

    /// A leaf that gradients are taken with respect to.
    pub fn var(&mut self, value: f64) -> NodeRef {
        self.push_leaf(value, NodeKind::Variable, true)
    }

    pub fn constant(&mut self, value: f64) -> NodeRef {
        self.push_leaf(value, NodeKind::Constant, false)
    }

    fn push_leaf(&mut self, value: f64, kind: NodeKind, live: bool) -> NodeRef {
        let id = self.next_id();
        self.values.push(value);
        self.kinds.push(kind);
        self.live.push(live);
        self.span_ends.push(self.operands.len() as u32);
        id
    }

    fn next_id(&self) -> NodeRef {
        assert!(self.values.len() < u32::MAX as usize, "tape overflow");
        NodeRef(self.values.len() as u32)
    }

    fn span(&self, i: usize) -> (usize, usize) {
        let start = if i == 0 { 0 } else { self.span_ends[i - 1] as usize };
        (start, self.span_ends[i] as usize)
    }

    #[inline]
    fn push_op<const N: usize>(&mut self, op: Op, value: f64, entries: [(NodeRef, f64); N]) -> NodeRef {
        let id = self.next_id();
        let mut live = false;
        for (operand, partial) in entries {
            if self.live[operand.index()] {
                live = true;
                self.operands.push(operand.0);
                self.partials.push(partial);
            }
        }
        self.values.push(value);
        self.kinds.push(NodeKind::Op(op));
        self.live.push(live);
        self.span_ends.push(self.operands.len() as u32);
        id
    }

    fn domain_error(&self, op: Op, value: f64) -> AutodiffError {
        AutodiffError::Domain {
            node: self.len(),
            op,
            value,
        }
    }

    /// Records `op` applied to `operands`.
    ///
    /// `constant` is the exponent for [`Op::PowConst`] and the floor for
    /// [`Op::MaxConst`]; other ops ignore it. `Dot` takes its two factor
    /// lists concatenated, so it needs an even operand count.
    pub fn record(&mut self, op: Op, operands: &[NodeRef], constant: Option<f64>) -> Result<NodeRef, AutodiffError> {
        let arity = |expected: usize| {
            if operands.len() == expected {
                Ok(())
            } else {
                Err(AutodiffError::Arity {
                    op,
                    expected,
                    got: operands.len(),
                })
            }
        };
        let need_constant = || constant.ok_or(AutodiffError::MissingConstant(op));
        match op {
            Op::Add | Op::Sub | Op::Mul | Op::Div => arity(2)?,
            Op::Sum => {}
            Op::Dot => {
                if !operands.len().is_multiple_of(2) {
                    return Err(AutodiffError::Arity {
                        op,
                        expected: operands.len() + 1,
                        got: operands.len(),
                    });
                }
            }
            _ => arity(1)?,
        }
        for &node in operands {
            if node.index() >= self.len() {
                return Err(AutodiffError::InvalidNode(node.index()));
            }
        }
        Ok(match op {
            Op::Add => self.add(operands[0], operands[1]),
            Op::Sub => self.sub(operands[0], operands[1]),
            Op::Mul => self.mul(operands[0], operands[1]),
            Op::Div => self.div(operands[0], operands[1])?,
            Op::Neg => self.neg(operands[0]),
            Op::Exp => self.exp(operands[0]),
            Op::Ln => self.ln(operands[0])?,
            Op::Sin => self.sin(operands[0]),
            Op::Cos => self.cos(operands[0]),
            Op::Tanh => self.tanh(operands[0]),
            Op::Sqrt => self.sqrt(operands[0])?,
            Op::PowConst => self.pow_const(operands[0], need_constant()?)?,
            Op::MaxConst => self.max_const(operands[0], need_constant()?),
            Op::Square => self.square(operands[0]),
            Op::Sum => self.sum(operands),
            Op::Dot => {
                let (a, b) = operands.split_at(operands.len() / 2);
                self.dot(a, b)
            }
        })
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        let v = self.value(a) + self.value(b);
        self.push_op(Op::Add, v, [(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        let v = self.value(a) - self.value(b);
        self.push_op(Op::Sub, v, [(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> NodeRef {
        let (va, vb) = (self.value(a), self.value(b));
        self.push_op(Op::Mul, va * vb, [(a, vb), (b, va)])
    }

    pub fn div(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb == 0.0 {
            return Err(self.domain_error(Op::Div, vb));
        }
        let q = va / vb;
        Ok(self.push_op(Op::Div, q, [(a, 1.0 / vb), (b, -q / vb)]))
    }

    pub fn neg(&mut self, a: NodeRef) -> NodeRef {
        let v = -self.value(a);
        self.push_op(Op::Neg, v, [(a, -1.0)])
    }

    pub fn exp(&mut self, a: NodeRef) -> NodeRef {
        let v = self.value(a).exp();
        self.push_op(Op::Exp, v, [(a, v)])
    }

    pub fn ln(&mut self, a: NodeRef) -> Result<NodeRef, AutodiffError> {
        let va = self.value(a);
        if va <= 0.0 || va.is_nan() {
            return Err(self.domain_error(Op::Ln, va));
        }
        Ok(self.push_op(Op::Ln, va.ln(), [(a, 1.0 / va)]))
    }

    pub fn sin(&mut self, a: NodeRef) -> NodeRef {
        let va = self.value(a);
        self.push_op(Op::Sin, va.sin(), [(a, va.cos())])
    }

    pub fn cos(&mut self, a: NodeRef) -> NodeRef {
        let va = self.value(a);
        self.push_op(Op::Cos, va.cos(), [(a, -va.sin())])
    }

    pub fn tanh(&mut self, a: NodeRef) -> NodeRef {
        let t = self.value(a).tanh();
        self.push_op(Op::Tanh, t, [(a, 1.0 - t * t)])
    }

    pub fn sqrt(&mut self, a: NodeRef) -> Result<NodeRef, AutodiffError> {
        let va = self.value(a);
        if va < 0.0 || va.is_nan() {
            return Err(self.domain_error(Op::Sqrt, va));
        }
        let s = va.sqrt();
        // d/da sqrt(a) is unbounded at 0; only an error if someone needs it
        let partial = if s > 0.0 { 0.5 / s } else { f64::INFINITY };
        Ok(self.push_op(Op::Sqrt, s, [(a, partial)]))
    }

    /// `a^p` for a constant exponent.
    pub fn pow_const(&mut self, a: NodeRef, p: f64) -> Result<NodeRef, AutodiffError> {
        let va = self.value(a);
        if p == 0.0 {
            return Ok(self.push_op(Op::PowConst, 1.0, [(a, 0.0)]));
        }
        if p == 1.0 {
            return Ok(self.push_op(Op::PowConst, va, [(a, 1.0)]));
        }
        let integral = p.fract() == 0.0;
        if (va < 0.0 && !integral) || (va == 0.0 && p < 1.0) {
            return Err(self.domain_error(Op::PowConst, va));
        }
        let v = if integral && p.abs() <= i32::MAX as f64 {
            va.powi(p as i32)
        } else {
            va.powf(p)
        };
        let d = if integral && (p - 1.0).abs() <= i32::MAX as f64 {
            p * va.powi(p as i32 - 1)
        } else {
            p * va.powf(p - 1.0)
        };
        Ok(self.push_op(Op::PowConst, v, [(a, d)]))
    }

    /// `max(a, c)`; the partial is 1 when `a > c` and 0 otherwise.
    pub fn max_const(&mut self, a: NodeRef, c: f64) -> NodeRef {
        let va = self.value(a);
        if va > c {
            self.push_op(Op::MaxConst, va, [(a, 1.0)])
        } else {
            self.push_op(Op::MaxConst, c, [(a, 0.0)])
        }
    }

    pub fn square(&mut self, a: NodeRef) -> NodeRef {
        let va = self.value(a);
        self.push_op(Op::Square, va * va, [(a, 2.0 * va)])
    }

    /// Sum of all nodes in `xs`, accumulated left to right.
    pub fn sum(&mut self, xs: &[NodeRef]) -> NodeRef {
        let id = self.next_id();
        let mut acc = 0.0;
        let mut live = false;
        for &x in xs {
            acc += self.value(x);
            if self.live[x.index()] {
                live = true;
                self.operands.push(x.0);
                self.partials.push(1.0);
            }
        }
        self.values.push(acc);
        self.kinds.push(NodeKind::Op(Op::Sum));
        self.live.push(live);
        self.span_ends.push(self.operands.len() as u32);
        id
    }

    /// Inner product `Σ a[i]·b[i]`, accumulated left to right.
    ///
    /// # Panics
    ///
    /// If the two slices differ in length.
    pub fn dot(&mut self, a: &[NodeRef], b: &[NodeRef]) -> NodeRef {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let id = self.next_id();
        let Self {
            values,
            kinds,
            live,
            span_ends,
            operands,
            partials,
        } = self;
        operands.reserve(2 * a.len());
        partials.reserve(2 * a.len());
        let mut acc = 0.0;
        let mut any = false;
        for (&x, &y) in a.iter().zip(b) {
            let (xi, yi) = (x.index(), y.index());
            let (vx, vy) = (values[xi], values[yi]);
            acc += vx * vy;
            if live[xi] {
                any = true;
                operands.push(x.0);
                partials.push(vy);
            }
            if live[yi] {
                any = true;
                operands.push(y.0);
                partials.push(vx);
            }
        }
        values.push(acc);
        kinds.push(NodeKind::Op(Op::Dot));
        live.push(any);
        span_ends.push(operands.len() as u32);
        id
    }

    pub fn add_const(&mut self, a: NodeRef, c: f64) -> NodeRef {
        let c = self.constant(c);
        self.add(a, c)
    }

    pub fn mul_const(&mut self, a: NodeRef, c: f64) -> NodeRef {
        let c = self.constant(c);
        self.mul(a, c)
    }

    /// Reverse sweep from `output`.
    ///
    /// Fails with the highest-indexed offending node if any adjoint that
    /// reached a node turns out non-finite.
    pub fn backward(&self, output: NodeRef) -> Result<GradientMap, AutodiffError> {
        let out = output.index();
        if out >= self.len() {
            return Err(AutodiffError::InvalidNode(out));
        }
        if !self.values[out].is_finite() {
            return Err(AutodiffError::NonFinite { node: out });
        }
        let mut adjoints = vec![0.0_f64; out + 1];
        adjoints[out] = 1.0;
        for i in (0..=out).rev() {
            let (begin, end) = self.span(i);
            let adj = adjoints[i];
            if adj == 0.0 || begin == end {
                continue;
            }
            if !adj.is_finite() {
                return Err(AutodiffError::NonFinite { node: i });
            }
            for j in begin..end {
                adjoints[self.operands[j] as usize] += self.partials[j] * adj;
            }
        }
        if let Some(node) = adjoints.iter().rposition(|a| !a.is_finite()) {
            return Err(AutodiffError::NonFinite { node });
        }
        Ok(GradientMap { adjoints })
    }
}
