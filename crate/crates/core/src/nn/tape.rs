//! Minimal reverse-mode autodiff over a Wengert list of vector-valued nodes.
//!
//! Nodes hold flat `Vec<f64>` values (scalars are length-1 vectors). Ops cover
//! exactly what the loss heads need: dense affine layers reading weights out
//! of a single parameter leaf, pointwise nonlinearities, small vector algebra,
//! slicing/concatenation, and a clamped `acos` for rotation geodesic
//! distances. The backward pass walks the list once in reverse with a fixed
//! accumulation order, so gradients are bit-reproducible run to run.

use crate::error::{invalid, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val {
    id: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Recip(usize),
    Sqrt(usize),
    Square(usize),
    Tanh(usize),
    Silu(usize),
    /// acos of the argument clamped to [-1 + eps, 1 - eps]; zero slope where
    /// the clamp is active.
    AcosClamp(usize, f64),
    Sum(usize),
    Dot(usize, usize),
    /// Broadcast multiply of a vector by a length-1 node.
    ScaleBy(usize, usize),
    Slice(usize, usize),
    Concat(Vec<usize>),
    /// Constant matrix times variable vector (row-major `w`, rows x cols).
    MatVecConst { w: Vec<f64>, rows: usize, x: usize },
    /// `W x + b` where `W` (row-major) and `b` live inside the node `params`
    /// at the given offsets. Reading in place avoids copying weights per call.
    Affine { params: usize, w_off: usize, b_off: usize, rows: usize, cols: usize, x: usize },
}

struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`]. Only leaf adjoints survive the
/// pass; interior adjoints are consumed while propagating.
pub struct Gradients {
    adjoints: Vec<Vec<f64>>,
}

impl Gradients {
    /// Adjoint of a leaf node (zeros if the loss never touched it).
    pub fn of(&self, v: Val) -> &[f64] {
        &self.adjoints[v.id]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Val) -> &[f64] {
        &self.nodes[v.id].value
    }

    fn push(&mut self, value: Vec<f64>, op: Op, needs_grad: bool) -> Val {
        self.nodes.push(Node { value, op, needs_grad });
        Val { id: self.nodes.len() - 1 }
    }

    fn grad_of(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> Val {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Val {
        self.push(value, Op::Const, false)
    }

    pub fn scalar_const(&mut self, value: f64) -> Val {
        self.constant(vec![value])
    }

    /// Value copy with the gradient path severed.
    pub fn detach(&mut self, v: Val) -> Val {
        let value = self.nodes[v.id].value.clone();
        self.constant(value)
    }

    fn binary_values(&self, a: Val, b: Val, what: &str) -> (usize, usize) {
        let (la, lb) = (self.nodes[a.id].value.len(), self.nodes[b.id].value.len());
        assert_eq!(la, lb, "{what}: length mismatch {la} vs {lb}");
        (a.id, b.id)
    }

    pub fn add(&mut self, a: Val, b: Val) -> Val {
        let (ia, ib) = self.binary_values(a, b, "add");
        let value = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(value, Op::Add(ia, ib), self.grad_of(ia) || self.grad_of(ib))
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Val {
        let (ia, ib) = self.binary_values(a, b, "sub");
        let value = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x - y)
            .collect();
        self.push(value, Op::Sub(ia, ib), self.grad_of(ia) || self.grad_of(ib))
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Val {
        let (ia, ib) = self.binary_values(a, b, "mul");
        let value = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(value, Op::Mul(ia, ib), self.grad_of(ia) || self.grad_of(ib))
    }

    pub fn neg(&mut self, a: Val) -> Val {
        let value = self.nodes[a.id].value.iter().map(|x| -x).collect();
        self.push(value, Op::Neg(a.id), self.grad_of(a.id))
    }

    pub fn scale(&mut self, a: Val, c: f64) -> Val {
        let value = self.nodes[a.id].value.iter().map(|x| x * c).collect();
        self.push(value, Op::Scale(a.id, c), self.grad_of(a.id))
    }

    pub fn recip(&mut self, a: Val) -> Val {
        let value = self.nodes[a.id].value.iter().map(|x| 1.0 / x).collect();
        self.push(value, Op::Recip(a.id), self.grad_of(a.id))
    }

    pub fn sqrt(&mut self, a: Val) -> Val {
        let value = self.nodes[a.id].value.iter().map(|x| x.sqrt()).collect();
        self.push(value, Op::Sqrt(a.id), self.grad_of(a.id))
    }

    pub fn square(&mut self, a: Val) -> Val {
        let value = self.nodes[a.id].value.iter().map(|x| x * x).collect();
        self.push(value, Op::Square(a.id), self.grad_of(a.id))
    }

    pub fn tanh(&mut self, a: Val) -> Val {
        let value = self.nodes[a.id].value.iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a.id), self.grad_of(a.id))
    }

    pub fn silu(&mut self, a: Val) -> Val {
        let value = self.nodes[a.id].value.iter().map(|x| silu(*x)).collect();
        self.push(value, Op::Silu(a.id), self.grad_of(a.id))
    }

    pub fn acos_clamp(&mut self, a: Val, eps: f64) -> Val {
        let value = self.nodes[a.id]
            .value
            .iter()
            .map(|x| x.clamp(-1.0 + eps, 1.0 - eps).acos())
            .collect();
        self.push(value, Op::AcosClamp(a.id, eps), self.grad_of(a.id))
    }

    pub fn sum(&mut self, a: Val) -> Val {
        let value = vec![self.nodes[a.id].value.iter().sum()];
        self.push(value, Op::Sum(a.id), self.grad_of(a.id))
    }

    pub fn dot(&mut self, a: Val, b: Val) -> Val {
        let (ia, ib) = self.binary_values(a, b, "dot");
        let value = vec![self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(x, y)| x * y)
            .sum()];
        self.push(value, Op::Dot(ia, ib), self.grad_of(ia) || self.grad_of(ib))
    }

    pub fn scale_by(&mut self, a: Val, s: Val) -> Val {
        assert_eq!(self.nodes[s.id].value.len(), 1, "scale_by: scalar required");
        let c = self.nodes[s.id].value[0];
        let value = self.nodes[a.id].value.iter().map(|x| x * c).collect();
        self.push(value, Op::ScaleBy(a.id, s.id), self.grad_of(a.id) || self.grad_of(s.id))
    }

    pub fn slice(&mut self, a: Val, start: usize, len: usize) -> Val {
        let value = self.nodes[a.id].value[start..start + len].to_vec();
        self.push(value, Op::Slice(a.id, start), self.grad_of(a.id))
    }

    pub fn concat(&mut self, parts: &[Val]) -> Val {
        let mut value = Vec::new();
        let mut needs = false;
        for p in parts {
            value.extend_from_slice(&self.nodes[p.id].value);
            needs |= self.grad_of(p.id);
        }
        self.push(value, Op::Concat(parts.iter().map(|p| p.id).collect()), needs)
    }

    pub fn matvec_const(&mut self, w: Vec<f64>, rows: usize, x: Val) -> Val {
        let xv = &self.nodes[x.id].value;
        let cols = xv.len();
        assert_eq!(w.len(), rows * cols, "matvec_const: shape mismatch");
        let mut value = vec![0.0; rows];
        for i in 0..rows {
            let mut acc = 0.0;
            let row = &w[i * cols..(i + 1) * cols];
            for (j, xj) in xv.iter().enumerate() {
                acc += row[j] * xj;
            }
            value[i] = acc;
        }
        self.push(value, Op::MatVecConst { w, rows, x: x.id }, self.grad_of(x.id))
    }

    pub fn affine(
        &mut self,
        params: Val,
        w_off: usize,
        b_off: usize,
        rows: usize,
        cols: usize,
        x: Val,
    ) -> Val {
        assert_eq!(self.nodes[x.id].value.len(), cols, "affine: input length mismatch");
        let mut value = vec![0.0; rows];
        {
            let pv = &self.nodes[params.id].value;
            let xv = &self.nodes[x.id].value;
            for i in 0..rows {
                let mut acc = pv[b_off + i];
                let row = &pv[w_off + i * cols..w_off + (i + 1) * cols];
                for (j, xj) in xv.iter().enumerate() {
                    acc += row[j] * xj;
                }
                value[i] = acc;
            }
        }
        let needs = self.grad_of(params.id) || self.grad_of(x.id);
        self.push(
            value,
            Op::Affine { params: params.id, w_off, b_off, rows, cols, x: x.id },
            needs,
        )
    }

    /// Reverse pass from a scalar node. Returns leaf adjoints; fails on a
    /// non-scalar or non-finite loss.
    pub fn backward(&self, loss: Val) -> Result<Gradients> {
        let lv = &self.nodes[loss.id].value;
        if lv.len() != 1 {
            return Err(invalid(format!(
                "backward: loss must be scalar, got length {}",
                lv.len()
            )));
        }
        if !lv[0].is_finite() {
            return Err(CoreError::Numeric(format!("backward: loss is {}", lv[0])));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| {
                if n.needs_grad {
                    vec![0.0; n.value.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        if !self.nodes[loss.id].needs_grad {
            // Loss does not depend on any leaf; every adjoint is zero.
            return Ok(Gradients { adjoints: adj });
        }
        adj[loss.id][0] = 1.0;

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let g = std::mem::take(&mut adj[id]);
            match &node.op {
                Op::Leaf | Op::Const => {
                    // Leaves keep their adjoint; put it back.
                    adj[id] = g;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[*a], &g, |gi, _| gi);
                    accumulate(&mut adj[*b], &g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[*a], &g, |gi, _| gi);
                    accumulate(&mut adj[*b], &g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot += g[k] * vb[k];
                        }
                    }
                    if self.grad_of(*b) {
                        for (k, slot) in adj[*b].iter_mut().enumerate() {
                            *slot += g[k] * va[k];
                        }
                    }
                }
                Op::Neg(a) => accumulate(&mut adj[*a], &g, |gi, _| -gi),
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut adj[*a], &g, move |gi, _| gi * c);
                }
                Op::Recip(a) => {
                    let va = &self.nodes[*a].value;
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot -= g[k] / (va[k] * va[k]);
                        }
                    }
                }
                Op::Sqrt(a) => {
                    let out = &node.value;
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot += g[k] * 0.5 / out[k];
                        }
                    }
                }
                Op::Square(a) => {
                    let va = &self.nodes[*a].value;
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot += g[k] * 2.0 * va[k];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let out = &node.value;
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot += g[k] * (1.0 - out[k] * out[k]);
                        }
                    }
                }
                Op::Silu(a) => {
                    let va = &self.nodes[*a].value;
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot += g[k] * silu_prime(va[k]);
                        }
                    }
                }
                Op::AcosClamp(a, eps) => {
                    let va = &self.nodes[*a].value;
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            let x = va[k];
                            if x > -1.0 + eps && x < 1.0 - eps {
                                *slot -= g[k] / (1.0 - x * x).sqrt();
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if self.grad_of(*a) {
                        for slot in adj[*a].iter_mut() {
                            *slot += g[0];
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot += g[0] * vb[k];
                        }
                    }
                    if self.grad_of(*b) {
                        for (k, slot) in adj[*b].iter_mut().enumerate() {
                            *slot += g[0] * va[k];
                        }
                    }
                }
                Op::ScaleBy(a, s) => {
                    let (va, c) = (&self.nodes[*a].value, self.nodes[*s].value[0]);
                    if self.grad_of(*a) {
                        for (k, slot) in adj[*a].iter_mut().enumerate() {
                            *slot += g[k] * c;
                        }
                    }
                    if self.grad_of(*s) {
                        let mut acc = 0.0;
                        for (k, gk) in g.iter().enumerate() {
                            acc += gk * va[k];
                        }
                        adj[*s][0] += acc;
                    }
                }
                Op::Slice(a, start) => {
                    if self.grad_of(*a) {
                        for (k, gk) in g.iter().enumerate() {
                            adj[*a][start + k] += gk;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[*p].value.len();
                        if self.grad_of(*p) {
                            for k in 0..len {
                                adj[*p][k] += g[off + k];
                            }
                        }
                        off += len;
                    }
                }
                Op::MatVecConst { w, rows, x } => {
                    if self.grad_of(*x) {
                        let cols = self.nodes[*x].value.len();
                        for i in 0..*rows {
                            let gi = g[i];
                            let row = &w[i * cols..(i + 1) * cols];
                            for (j, slot) in adj[*x].iter_mut().enumerate() {
                                *slot += gi * row[j];
                            }
                        }
                    }
                }
                Op::Affine { params, w_off, b_off, rows, cols, x } => {
                    let xv = self.nodes[*x].value.clone();
                    if self.grad_of(*params) {
                        for i in 0..*rows {
                            let gi = g[i];
                            adj[*params][b_off + i] += gi;
                            let dst = &mut adj[*params][w_off + i * cols..w_off + (i + 1) * cols];
                            for (j, slot) in dst.iter_mut().enumerate() {
                                *slot += gi * xv[j];
                            }
                        }
                    }
                    if self.grad_of(*x) {
                        let pv = &self.nodes[*params].value;
                        for i in 0..*rows {
                            let gi = g[i];
                            let row = &pv[w_off + i * cols..w_off + (i + 1) * cols];
                            for (j, slot) in adj[*x].iter_mut().enumerate() {
                                *slot += gi * row[j];
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn accumulate<F: Fn(f64, usize) -> f64>(dst: &mut [f64], g: &[f64], f: F) {
    if dst.is_empty() {
        return; // constant parent
    }
    for (k, slot) in dst.iter_mut().enumerate() {
        *slot += f(g[k], k);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of one scalar-valued graph builder against the
    /// tape's backward pass.
    fn check_grad<F>(x0: Vec<f64>, build: F)
    where
        F: Fn(&mut Tape, Val) -> Val,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let loss = build(&mut tape, x);
        assert_eq!(tape.value(loss).len(), 1);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.of(x).to_vec();

        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let mut xp = x0.clone();
                xp[i] += delta;
                let x = t.leaf(xp);
                let l = build(&mut t, x);
                t.value(l)[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                (fd - analytic[i]).abs() / denom < 1e-5,
                "coord {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn elementwise_ops_gradients() {
        let x0 = vec![0.3, -0.7, 1.2, 0.05];
        check_grad(x0.clone(), |t, x| {
            let a = t.tanh(x);
            let b = t.silu(a);
            let c = t.square(b);
            t.sum(c)
        });
        check_grad(x0.clone(), |t, x| {
            let offset = t.constant(vec![2.0; 4]);
            let shifted = t.add(x, offset);
            let r = t.recip(shifted);
            let s = t.sqrt(shifted);
            let p = t.mul(r, s);
            let n = t.neg(p);
            let sc = t.scale(n, 1.7);
            t.sum(sc)
        });
    }

    #[test]
    fn structural_ops_gradients() {
        let x0 = vec![0.5, -1.0, 2.0, 0.25, -0.4, 0.9];
        check_grad(x0.clone(), |t, x| {
            let a = t.slice(x, 0, 3);
            let b = t.slice(x, 3, 3);
            let d = t.dot(a, b);
            let ss = t.square(d);
            let joined = t.concat(&[a, b]);
            let total = t.sum(joined);
            let scaled = t.scale_by(total, ss);
            t.sum(scaled)
        });
        check_grad(vec![0.2, 0.8, -0.6], |t, x| {
            let w = vec![1.0, -2.0, 0.5, 0.3, 0.0, 2.0];
            let y = t.matvec_const(w, 2, x);
            let sq = t.square(y);
            t.sum(sq)
        });
    }

    #[test]
    fn acos_clamp_gradient_interior_and_clamped() {
        check_grad(vec![0.4, -0.9], |t, x| {
            let a = t.acos_clamp(x, 1e-9);
            let sq = t.square(a);
            t.sum(sq)
        });
        // At a clamped coordinate the slope is exactly zero.
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.5]);
        let a = tape.acos_clamp(x, 1e-9);
        let loss = tape.sum(a);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.of(x), &[0.0]);
    }

    #[test]
    fn affine_gradient_wrt_params_and_input() {
        // params = [w(2x3) | b(2)], input length 3.
        let params0 = vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.01, -0.02];
        let x0 = vec![1.0, -1.5, 0.5];
        let build = |t: &mut Tape, p: Val, x: Val| {
            let y = t.affine(p, 0, 6, 2, 3, x);
            let s = t.square(y);
            t.sum(s)
        };

        let mut tape = Tape::new();
        let p = tape.leaf(params0.clone());
        let x = tape.leaf(x0.clone());
        let loss = build(&mut tape, p, x);
        let grads = tape.backward(loss).unwrap();
        let (gp, gx) = (grads.of(p).to_vec(), grads.of(x).to_vec());

        let h = 1e-6;
        let eval = |pp: &[f64], xx: &[f64]| {
            let mut t = Tape::new();
            let p = t.leaf(pp.to_vec());
            let x = t.leaf(xx.to_vec());
            let l = build(&mut t, p, x);
            t.value(l)[0]
        };
        for i in 0..params0.len() {
            let mut hi = params0.clone();
            let mut lo = params0.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd = (eval(&hi, &x0) - eval(&lo, &x0)) / (2.0 * h);
            assert!((fd - gp[i]).abs() < 1e-6, "param {i}: {fd} vs {}", gp[i]);
        }
        for i in 0..x0.len() {
            let mut hi = x0.clone();
            let mut lo = x0.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd = (eval(&params0, &hi) - eval(&params0, &lo)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-6, "input {i}: {fd} vs {}", gx[i]);
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![2.0]);
        let y = tape.square(x);
        let stopped = tape.detach(y);
        let z = tape.mul(x, stopped); // d/dx = stopped = 4
        let loss = tape.sum(z);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.of(x), &[4.0]);
    }

    #[test]
    fn backward_rejects_bad_losses() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0]);
        assert!(tape.backward(x).is_err()); // non-scalar
        let y = tape.leaf(vec![f64::NAN]);
        let s = tape.sum(y);
        assert!(tape.backward(s).is_err()); // non-finite
    }

    #[test]
    fn shared_subgraph_accumulates_once_per_use() {
        // loss = x*x + x*x, via a shared Node: grad = 4x.
        let mut tape = Tape::new();
        let x = tape.leaf(vec![3.0]);
        let sq = tape.mul(x, x);
        let both = tape.add(sq, sq);
        let loss = tape.sum(both);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.of(x), &[12.0]);
    }
}
