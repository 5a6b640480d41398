//! Append-only scalar tape for reverse-mode differentiation.
//!
//! Every recorded node stores its value, parent indices, and the local
//! partial derivatives of the node with respect to its parents, so a single
//! reverse sweep recovers the gradient of a scalar root with respect to all
//! marked parameter nodes. Parents always precede children, which makes the
//! reverse sweep a plain backwards loop over the node vector.
//!
//! Tapes are single-threaded, single-use objects: build a graph, call
//! [`Tape::backward`], then drop or [`Tape::clear`] it.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Sentinel parent index meaning "no parent on this slot".
const NONE: u32 = u32::MAX;

/// Operation kind of a tape node. Fused `Affine`/`AffineRelu` nodes keep
/// their parent list and partials in a side table indexed via `lhs`/`rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Param,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Shift,
    Exp,
    Ln,
    Tanh,
    Relu,
    Softplus,
    Cos,
    ClampMin,
    Affine,
    AffineRelu,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    value: f64,
    dl: f64,
    dr: f64,
    lhs: u32,
    rhs: u32,
    kind: OpKind,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    // (parent id, partial) pairs for fused affine nodes
    edges: Vec<(u32, f64)>,
    params: Vec<u32>,
    // adjoint buffer reused across backward sweeps
    adjoint: Vec<f64>,
}

/// Recording tape. Interior mutability lets [`Var`] handles build the graph
/// through shared references.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that produced it and only until that tape is cleared.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(edges),
                params: Vec::new(),
                adjoint: Vec::new(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all nodes but keeps allocations for reuse. Outstanding `Var`
    /// handles are invalidated.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.edges.clear();
        inner.params.clear();
    }

    fn push(&self, node: Node) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len() as u32;
        inner.nodes.push(node);
        id
    }

    fn leaf(&self, value: f64, kind: OpKind) -> Var<'_> {
        let id = self.push(Node {
            value,
            dl: 0.0,
            dr: 0.0,
            lhs: NONE,
            rhs: NONE,
            kind,
        });
        Var { tape: self, id }
    }

    /// Records a parameter leaf. Parameter gradients are what
    /// [`Tape::backward`] returns, in recording order.
    pub fn param(&self, value: f64) -> Var<'_> {
        let v = self.leaf(value, OpKind::Param);
        self.inner.borrow_mut().params.push(v.id);
        v
    }

    /// Records one parameter leaf per input value in a single pass.
    pub fn param_vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.nodes.len() as u32;
        inner.nodes.extend(values.iter().map(|&value| Node {
            value,
            dl: 0.0,
            dr: 0.0,
            lhs: NONE,
            rhs: NONE,
            kind: OpKind::Param,
        }));
        inner.params.extend(start..start + values.len() as u32);
        drop(inner);
        (0..values.len() as u32)
            .map(|i| Var {
                tape: self,
                id: start + i,
            })
            .collect()
    }

    /// Records a constant leaf (zero gradient).
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.leaf(value, OpKind::Const)
    }

    /// Raw node recording with explicit parents and local partials.
    ///
    /// Structural faults (unknown parent index, mismatched lengths, more
    /// than two parents for a non-fused kind) panic.
    pub fn record(&self, kind: OpKind, parents: &[u32], partials: &[f64], value: f64) -> u32 {
        assert_eq!(
            parents.len(),
            partials.len(),
            "record: {} parents but {} partials",
            parents.len(),
            partials.len()
        );
        let len = self.len() as u32;
        for &p in parents {
            assert!(p < len, "record: parent {p} not on tape (len {len})");
        }
        match (kind, parents.len()) {
            (OpKind::Param | OpKind::Const, 0) => self.leaf(value, kind).id,
            (OpKind::Affine | OpKind::AffineRelu, _) => {
                let mut inner = self.inner.borrow_mut();
                let start = inner.edges.len() as u32;
                for (&p, &d) in parents.iter().zip(partials) {
                    inner.edges.push((p, d));
                }
                let id = inner.nodes.len() as u32;
                inner.nodes.push(Node {
                    value,
                    dl: 0.0,
                    dr: 0.0,
                    lhs: start,
                    rhs: parents.len() as u32,
                    kind,
                });
                id
            }
            (_, 1) => self.push(Node {
                value,
                dl: partials[0],
                dr: 0.0,
                lhs: parents[0],
                rhs: NONE,
                kind,
            }),
            (_, 2) => self.push(Node {
                value,
                dl: partials[0],
                dr: partials[1],
                lhs: parents[0],
                rhs: parents[1],
                kind,
            }),
            (k, n) => panic!("record: {k:?} does not take {n} parents"),
        }
    }

    pub fn value(&self, id: u32) -> f64 {
        self.inner.borrow().nodes[id as usize].value
    }

    fn unary(&self, kind: OpKind, parent: u32, partial: f64, value: f64) -> Var<'_> {
        let id = self.push(Node {
            value,
            dl: partial,
            dr: 0.0,
            lhs: parent,
            rhs: NONE,
            kind,
        });
        Var { tape: self, id }
    }

    fn binary(&self, kind: OpKind, l: u32, r: u32, dl: f64, dr: f64, value: f64) -> Var<'_> {
        let id = self.push(Node {
            value,
            dl,
            dr,
            lhs: l,
            rhs: r,
            kind,
        });
        Var { tape: self, id }
    }

    /// Fused `w . x + b` node. One tape node regardless of width.
    pub fn affine<'t>(&'t self, w: &[Var<'t>], x: &[Var<'t>], b: Var<'t>) -> Var<'t> {
        self.affine_impl(w, x, b, false)
    }

    /// Fused `max(0, w . x + b)` node.
    pub fn affine_relu<'t>(&'t self, w: &[Var<'t>], x: &[Var<'t>], b: Var<'t>) -> Var<'t> {
        self.affine_impl(w, x, b, true)
    }

    fn affine_impl<'t>(&'t self, w: &[Var<'t>], x: &[Var<'t>], b: Var<'t>, relu: bool) -> Var<'t> {
        assert_eq!(w.len(), x.len(), "affine: weight/input length mismatch");
        let mut inner = self.inner.borrow_mut();
        let mut acc = inner.nodes[b.id as usize].value;
        for (wi, xi) in w.iter().zip(x) {
            acc += inner.nodes[wi.id as usize].value * inner.nodes[xi.id as usize].value;
        }
        let (value, gate) = if relu {
            if acc > 0.0 {
                (acc, 1.0)
            } else {
                (0.0, 0.0)
            }
        } else {
            (acc, 1.0)
        };
        let start = inner.edges.len() as u32;
        for (wi, xi) in w.iter().zip(x) {
            let xv = inner.nodes[xi.id as usize].value;
            inner.edges.push((wi.id, gate * xv));
        }
        for (wi, xi) in w.iter().zip(x) {
            let wv = inner.nodes[wi.id as usize].value;
            inner.edges.push((xi.id, gate * wv));
        }
        inner.edges.push((b.id, gate));
        let id = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            value,
            dl: 0.0,
            dr: 0.0,
            lhs: start,
            rhs: (2 * w.len() + 1) as u32,
            kind: if relu {
                OpKind::AffineRelu
            } else {
                OpKind::Affine
            },
        });
        Var { tape: self, id }
    }

    /// Reverse sweep from `root`; returns the gradient of `root` with respect
    /// to every parameter node, in the order they were recorded. Gradients of
    /// non-parameter nodes are discarded.
    pub fn backward(&self, root: Var<'_>) -> Vec<f64> {
        let mut inner = self.inner.borrow_mut();
        let n = inner.nodes.len();
        assert!((root.id as usize) < n, "backward: root not on tape");
        let mut adj = std::mem::take(&mut inner.adjoint);
        adj.clear();
        adj.resize(n, 0.0);
        adj[root.id as usize] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &inner.nodes[i];
            match node.kind {
                OpKind::Param | OpKind::Const => {}
                OpKind::Affine | OpKind::AffineRelu => {
                    let start = node.lhs as usize;
                    let count = node.rhs as usize;
                    for &(p, d) in &inner.edges[start..start + count] {
                        adj[p as usize] += d * a;
                    }
                }
                _ => {
                    adj[node.lhs as usize] += node.dl * a;
                    if node.rhs != NONE {
                        adj[node.rhs as usize] += node.dr * a;
                    }
                }
            }
        }
        let grads = inner.params.iter().map(|&p| adj[p as usize]).collect();
        inner.adjoint = adj;
        grads
    }
}

impl<'t> Var<'t> {
    pub fn val(self) -> f64 {
        self.tape.value(self.id)
    }

    pub fn id(self) -> u32 {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.val().exp();
        self.tape.unary(OpKind::Exp, self.id, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.val();
        self.tape.unary(OpKind::Ln, self.id, 1.0 / v, v.ln())
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.val().tanh();
        self.tape.unary(OpKind::Tanh, self.id, 1.0 - t * t, t)
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.val();
        if v > 0.0 {
            self.tape.unary(OpKind::Relu, self.id, 1.0, v)
        } else {
            self.tape.unary(OpKind::Relu, self.id, 0.0, 0.0)
        }
    }

    /// `ln(1 + exp(x))`, evaluated in the overflow-safe split form.
    pub fn softplus(self) -> Var<'t> {
        let v = self.val();
        let value = if v > 0.0 {
            v + (-v).exp().ln_1p()
        } else {
            v.exp().ln_1p()
        };
        let sig = 1.0 / (1.0 + (-v).exp());
        self.tape.unary(OpKind::Softplus, self.id, sig, value)
    }

    pub fn cos(self) -> Var<'t> {
        let v = self.val();
        self.tape.unary(OpKind::Cos, self.id, -v.sin(), v.cos())
    }

    /// Multiplication by a compile-time-known constant; no extra leaf node.
    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(OpKind::Scale, self.id, c, self.val() * c)
    }

    /// Addition of a constant; no extra leaf node.
    pub fn shift(self, c: f64) -> Var<'t> {
        self.tape.unary(OpKind::Shift, self.id, 1.0, self.val() + c)
    }

    /// `max(self, c)`. The derivative at the tie point is taken from the
    /// clamped side (zero).
    pub fn clamp_min(self, c: f64) -> Var<'t> {
        let v = self.val();
        if v > c {
            self.tape.unary(OpKind::ClampMin, self.id, 1.0, v)
        } else {
            self.tape.unary(OpKind::ClampMin, self.id, 0.0, c)
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(
            OpKind::Add,
            self.id,
            rhs.id,
            1.0,
            1.0,
            self.val() + rhs.val(),
        )
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(
            OpKind::Sub,
            self.id,
            rhs.id,
            1.0,
            -1.0,
            self.val() - rhs.val(),
        )
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.val(), rhs.val());
        self.tape.binary(OpKind::Mul, self.id, rhs.id, b, a, a * b)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.val(), rhs.val());
        self.tape
            .binary(OpKind::Div, self.id, rhs.id, 1.0 / b, -a / (b * b), a / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(OpKind::Neg, self.id, -1.0, -self.val())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_records_unit_partials() {
        let t = Tape::new();
        let a = t.param(2.0);
        let b = t.param(3.0);
        let c = a + b;
        assert_eq!(c.val(), 5.0);
        let g = t.backward(c);
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn mul_records_cross_partials() {
        let t = Tape::new();
        let a = t.param(2.0);
        let b = t.param(3.0);
        let c = a * b;
        assert_eq!(c.val(), 6.0);
        let g = t.backward(c);
        assert_eq!(g, vec![3.0, 2.0]);
    }

    #[test]
    fn ln_at_one_has_unit_partial() {
        let t = Tape::new();
        let a = t.param(1.0);
        let c = a.ln();
        assert_eq!(c.val(), 0.0);
        assert_eq!(t.backward(c), vec![1.0]);
    }

    #[test]
    fn square_gradient() {
        let t = Tape::new();
        let x = t.param(3.0);
        let y = x * x;
        assert_eq!(t.backward(y), vec![6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let t = Tape::new();
        let x = t.param(0.0);
        let y = x.tanh();
        assert_eq!(t.backward(y), vec![1.0]);
    }

    #[test]
    fn record_rejects_out_of_range_parent() {
        let t = Tape::new();
        let a = t.param(1.0);
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            t.record(OpKind::Neg, &[a.id() + 7], &[1.0], -1.0)
        }));
        assert!(r.is_err());
    }

    #[test]
    fn record_rejects_length_mismatch() {
        let t = Tape::new();
        let a = t.param(1.0);
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            t.record(OpKind::Add, &[a.id()], &[1.0, 1.0], 2.0)
        }));
        assert!(r.is_err());
    }

    #[test]
    fn record_increments_length_and_returns_index() {
        let t = Tape::new();
        let a = t.param(2.0);
        let before = t.len();
        let id = t.record(OpKind::Neg, &[a.id()], &[-1.0], -2.0);
        assert_eq!(t.len(), before + 1);
        assert_eq!(id as usize, before);
    }

    #[test]
    fn affine_matches_manual_expansion() {
        let t = Tape::new();
        let w: Vec<_> = t.param_vars(&[0.5, -1.5, 2.0]);
        let x: Vec<_> = [3.0, 4.0, -1.0].iter().map(|&v| t.constant(v)).collect();
        let b = t.param(0.25);
        let y = t.affine(&w, &x, b);
        assert_eq!(y.val(), 0.5 * 3.0 - 1.5 * 4.0 - 2.0 + 0.25);
        let g = t.backward(y);
        assert_eq!(g, vec![3.0, 4.0, -1.0, 1.0]);
    }

    #[test]
    fn affine_relu_gates_all_partials() {
        let t = Tape::new();
        let w = t.param_vars(&[1.0]);
        let x = vec![t.constant(-2.0)];
        let b = t.param(0.0);
        let y = t.affine_relu(&w, &x, b);
        assert_eq!(y.val(), 0.0);
        assert_eq!(t.backward(y), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_is_repeatable() {
        let t = Tape::new();
        let x = t.param(0.7);
        let y = (x * x + x).tanh().exp();
        let g1 = t.backward(y);
        let g2 = t.backward(y);
        assert_eq!(g1, g2);
    }
}
