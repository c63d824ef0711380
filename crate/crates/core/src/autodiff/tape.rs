//! Reverse sweep over jet-valued nodes.
//!
//! Every node stores a [`Jet2`], so a recorded loss can depend on the first
//! and second seed-derivatives of intermediate quantities (delta and gamma of
//! the network). The reverse sweep carries a triple of adjoints per node, one
//! for each jet channel, and returns `∂ loss.value / ∂ θ` for every registered
//! parameter.

use super::jet::{Elementary, Jet2};
use crate::error::{Error, Result};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    /// Leaf whose value is a trainable parameter (index into `params`).
    Param,
    /// Leaf that does not receive a gradient (constants and the seed).
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Shift(usize, f64),
    Unary(usize, Elementary),
    /// `clamp(x, lo, hi)`: identity inside the band, constant outside.
    Clamp(usize, f64, f64),
    /// Lifts the `d1` channel of a node into the value channel of a constant jet.
    TakeD1(usize),
    TakeD2(usize),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    jet: Jet2,
}

/// Recorded computation over [`Jet2`] values.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
    adjoints: Vec<[f64; 3]>,
}

fn eval(op: Op, nodes: &[Node]) -> Result<Jet2> {
    let j = |i: usize| nodes[i].jet;
    Ok(match op {
        Op::Param | Op::Leaf => unreachable!("leaves are not re-evaluated"),
        Op::Add(a, b) => j(a) + j(b),
        Op::Sub(a, b) => j(a) - j(b),
        Op::Mul(a, b) => j(a) * j(b),
        Op::Div(a, b) => j(a).div(j(b))?,
        Op::Neg(a) => -j(a),
        Op::Scale(a, k) => j(a).scale(k),
        Op::Shift(a, c) => j(a) + c,
        Op::Unary(a, f) => j(a).apply(f)?,
        Op::Clamp(a, lo, hi) => clamp_jet(j(a), lo, hi),
        Op::TakeD1(a) => Jet2::constant(j(a).d1),
        Op::TakeD2(a) => Jet2::constant(j(a).d2),
    })
}

fn clamp_jet(x: Jet2, lo: f64, hi: f64) -> Jet2 {
    if x.value < lo {
        Jet2::constant(lo)
    } else if x.value > hi {
        Jet2::constant(hi)
    } else {
        x
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(n),
            params: Vec::new(),
            adjoints: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn jet(&self, id: NodeId) -> Jet2 {
        self.nodes[id.0].jet
    }

    pub fn value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].jet.value
    }

    fn push(&mut self, op: Op, jet: Jet2) -> NodeId {
        self.nodes.push(Node { op, jet });
        NodeId(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let jet = eval(op, &self.nodes)?;
        Ok(self.push(op, jet))
    }

    /// Register a trainable parameter; it is constant in the seed direction.
    pub fn param(&mut self, value: f64) -> NodeId {
        let id = self.push(Op::Param, Jet2::constant(value));
        self.params.push(id.0);
        id
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Leaf, Jet2::constant(value))
    }

    /// The seed variable `(s, 1, 0)`.
    pub fn seed(&mut self, s: f64) -> NodeId {
        self.push(Op::Leaf, Jet2::new(s, 1.0, 0.0))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let jet = self.jet(a) + self.jet(b);
        self.push(Op::Add(a.0, b.0), jet)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let jet = self.jet(a) - self.jet(b);
        self.push(Op::Sub(a.0, b.0), jet)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let jet = self.jet(a) * self.jet(b);
        self.push(Op::Mul(a.0, b.0), jet)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let jet = -self.jet(a);
        self.push(Op::Neg(a.0), jet)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let jet = self.jet(a).scale(k);
        self.push(Op::Scale(a.0, k), jet)
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let jet = self.jet(a) + c;
        self.push(Op::Shift(a.0, c), jet)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.mul(a, a)
    }

    pub fn unary(&mut self, a: NodeId, f: Elementary) -> Result<NodeId> {
        self.record(Op::Unary(a.0, f))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.total_unary(a, Elementary::Exp)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.total_unary(a, Elementary::Tanh)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.total_unary(a, Elementary::Softplus)
    }

    pub fn max0(&mut self, a: NodeId) -> NodeId {
        self.total_unary(a, Elementary::Max0)
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Elementary::Ln)
    }

    fn total_unary(&mut self, a: NodeId, f: Elementary) -> NodeId {
        let [f0, f1, f2, _] = f.taylor(self.value(a));
        let jet = self.jet(a).chain(f0, f1, f2);
        self.push(Op::Unary(a.0, f), jet)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let jet = clamp_jet(self.jet(a), lo, hi);
        self.push(Op::Clamp(a.0, lo, hi), jet)
    }

    /// The first seed-derivative of `a` as a new scalar node.
    pub fn take_d1(&mut self, a: NodeId) -> NodeId {
        let jet = Jet2::constant(self.jet(a).d1);
        self.push(Op::TakeD1(a.0), jet)
    }

    /// The second seed-derivative of `a` as a new scalar node.
    pub fn take_d2(&mut self, a: NodeId) -> NodeId {
        let jet = Jet2::constant(self.jet(a).d2);
        self.push(Op::TakeD2(a.0), jet)
    }

    /// `Σ w_i · x_i`, recorded as a chain of products and sums.
    pub fn dot(&mut self, w: &[NodeId], x: &[NodeId]) -> NodeId {
        debug_assert_eq!(w.len(), x.len());
        let mut acc = self.mul(w[0], x[0]);
        for (&wi, &xi) in w.iter().zip(x).skip(1) {
            let p = self.mul(wi, xi);
            acc = self.add(acc, p);
        }
        acc
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.params.iter().map(|&i| self.nodes[i].jet.value).collect()
    }

    /// Overwrite parameter `k` (registration order). Call [`Tape::replay`] afterwards.
    pub fn set_param(&mut self, k: usize, value: f64) {
        let i = self.params[k];
        self.nodes[i].jet = Jet2::constant(value);
    }

    /// Re-evaluate every non-leaf node from its inputs, in recording order.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op;
            if matches!(op, Op::Param | Op::Leaf) {
                continue;
            }
            let jet = eval(op, &self.nodes[..i])?;
            self.nodes[i].jet = jet;
        }
        Ok(())
    }

    /// `∂ loss.value / ∂ θ_k` for every registered parameter, in registration order.
    pub fn grad_params(&mut self, loss: NodeId) -> Result<Vec<f64>> {
        if !self.nodes[loss.0].jet.value.is_finite() {
            let first = self.nodes[..=loss.0]
                .iter()
                .position(|n| !n.jet.is_finite())
                .unwrap_or(loss.0);
            return Err(Error::NonFinite {
                location: format!("tape node {first}"),
            });
        }

        self.adjoints.clear();
        self.adjoints.resize(loss.0 + 1, [0.0; 3]);
        self.adjoints[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            let bar = self.adjoints[i];
            if bar == [0.0; 3] {
                continue;
            }
            self.backprop_node(i, bar);
        }

        Ok(self
            .params
            .iter()
            .map(|&i| if i <= loss.0 { self.adjoints[i][0] } else { 0.0 })
            .collect())
    }

    fn backprop_node(&mut self, i: usize, bar: [f64; 3]) {
        let [cv, c1, c2] = bar;
        let node = self.nodes[i];
        match node.op {
            Op::Param | Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(a, bar);
                self.acc(b, bar);
            }
            Op::Sub(a, b) => {
                self.acc(a, bar);
                self.acc(b, [-cv, -c1, -c2]);
            }
            Op::Neg(a) => self.acc(a, [-cv, -c1, -c2]),
            Op::Scale(a, k) => self.acc(a, [k * cv, k * c1, k * c2]),
            Op::Shift(a, _) => self.acc(a, bar),
            Op::Mul(a, b) => {
                let (x, y) = (self.nodes[a].jet, self.nodes[b].jet);
                self.acc(a, mul_adjoint(bar, y));
                self.acc(b, mul_adjoint(bar, x));
            }
            Op::Div(a, b) => {
                let x = self.nodes[a].jet;
                let y = self.nodes[b].jet;
                let [r0, r1, r2, r3] = Elementary::Recip.taylor(y.value);
                let r = y.chain(r0, r1, r2);
                self.acc(a, mul_adjoint(bar, r));
                let r_bar = mul_adjoint(bar, x);
                self.acc(b, unary_adjoint(r_bar, y, [r1, r2, r3]));
            }
            Op::Unary(a, f) => {
                let x = self.nodes[a].jet;
                let [_, f1, f2, f3] = f.taylor(x.value);
                self.acc(a, unary_adjoint(bar, x, [f1, f2, f3]));
            }
            Op::Clamp(a, lo, hi) => {
                let v = self.nodes[a].jet.value;
                if v >= lo && v <= hi {
                    self.acc(a, bar);
                }
            }
            Op::TakeD1(a) => self.acc(a, [0.0, cv, 0.0]),
            Op::TakeD2(a) => self.acc(a, [0.0, 0.0, cv]),
        }
    }

    #[inline]
    fn acc(&mut self, i: usize, d: [f64; 3]) {
        let a = &mut self.adjoints[i];
        a[0] += d[0];
        a[1] += d[1];
        a[2] += d[2];
    }
}

/// Adjoint contribution to `x` from `c = x · y`.
#[inline]
fn mul_adjoint([cv, c1, c2]: [f64; 3], y: Jet2) -> [f64; 3] {
    [
        cv * y.value + c1 * y.d1 + c2 * y.d2,
        c1 * y.value + 2.0 * c2 * y.d1,
        c2 * y.value,
    ]
}

/// Adjoint contribution to `x` from `c = f(x)` given `f', f'', f'''` at `x.value`.
#[inline]
fn unary_adjoint([cv, c1, c2]: [f64; 3], x: Jet2, [f1, f2, f3]: [f64; 3]) -> [f64; 3] {
    [
        cv * f1 + c1 * f2 * x.d1 + c2 * (f3 * x.d1 * x.d1 + f2 * x.d2),
        c1 * f1 + 2.0 * c2 * f2 * x.d1,
        c2 * f1,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_of_param() {
        let mut t = Tape::new();
        let th = t.param(3.0);
        let loss = t.square(th);
        assert_eq!(t.grad_params(loss).unwrap(), vec![6.0]);
    }

    #[test]
    fn gradient_through_d1_channel() {
        // loss = (∂/∂s (θ·s) − 1)² = (θ − 1)² at θ = 2.
        let mut t = Tape::new();
        let th = t.param(2.0);
        let s = t.seed(2.0);
        let prod = t.mul(th, s);
        let d = t.take_d1(prod);
        let r = t.shift(d, -1.0);
        let loss = t.square(r);
        assert_eq!(t.value(loss), 1.0);
        assert_eq!(t.grad_params(loss).unwrap(), vec![2.0]);
    }

    #[test]
    fn gradient_through_d2_channel() {
        // loss = ∂²/∂s² (θ s³) = 6 θ s, so ∂loss/∂θ = 6 s.
        let mut t = Tape::new();
        let th = t.param(0.7);
        let s = t.seed(1.5);
        let s2 = t.mul(s, s);
        let s3 = t.mul(s2, s);
        let f = t.mul(th, s3);
        let loss = t.take_d2(f);
        let g = t.grad_params(loss).unwrap();
        assert!((t.value(loss) - 6.0 * 0.7 * 1.5).abs() < 1e-14);
        assert!((g[0] - 9.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_loss_reports_first_bad_node() {
        let mut t = Tape::new();
        let a = t.param(1.0);
        let big = t.constant(800.0);
        let e = t.exp(big); // node 2 overflows
        let p = t.mul(a, e);
        let loss = t.square(p);
        match t.grad_params(loss) {
            Err(Error::NonFinite { location }) => assert_eq!(location, "tape node 2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut t = Tape::new();
        let a = t.param(0.3);
        let b = t.param(-1.2);
        let s = t.seed(1.05);
        let x = t.mul(a, s);
        let y = t.add(x, b);
        let z = t.tanh(y);
        let w = t.softplus(z);
        let q = t.div(w, s).unwrap();
        let before: Vec<Jet2> = (0..t.len()).map(|i| t.jet(NodeId(i))).collect();
        t.replay().unwrap();
        let after: Vec<Jet2> = (0..t.len()).map(|i| t.jet(NodeId(i))).collect();
        for (x, y) in before.iter().zip(&after) {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
            assert_eq!(x.d1.to_bits(), y.d1.to_bits());
            assert_eq!(x.d2.to_bits(), y.d2.to_bits());
        }
        assert!(t.value(q) > 0.0);
    }

    #[test]
    fn clamp_blocks_gradient_outside_band() {
        let mut t = Tape::new();
        let a = t.param(1.5);
        let c = t.clamp(a, 0.0, 1.0);
        let loss = t.square(c);
        assert_eq!(t.value(loss), 1.0);
        assert_eq!(t.grad_params(loss).unwrap(), vec![0.0]);
    }
}
