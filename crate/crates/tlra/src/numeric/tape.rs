//! Reverse-mode differentiation over a recorded computation graph.
//!
//! Operations are recorded at tensor granularity: each node stores the
//! result tensor and the op that produced it. A forward pass builds the
//! graph, [`Tape::backward`] runs a single reverse sweep, and the whole
//! graph is freed when the tape drops. One tape belongs to one logical
//! thread; independent tapes can live side by side.

use std::cell::RefCell;

use super::{Tensor, EPS};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `scale * x + shift`, elementwise (shift needs no backward state).
    Affine { x: Var, scale: f64 },
    /// `[r×k] · [k×c] -> [r×c]`
    MatMul(Var, Var),
    /// `xᵀ·A` for `x: [r]`, `A: [r×c] -> [c]`
    VecMat(Var, Var),
    /// `A·x` for `A: [r×c]`, `x: [c] -> [r]`
    MatVec(Var, Var),
    Dot(Var, Var),
    /// Broadcast a row vector over every row of a matrix.
    AddRow { m: Var, row: Var },
    Tanh(Var),
    MeanRows(Var),
    Softmax(Var),
    /// Kernel-3 same-length 1-D convolution over time.
    /// `x: [T×din]`, `w: [3·din×dout] -> [T×dout]`
    Conv1dK3 { x: Var, w: Var },
    Concat(Vec<Var>),
    Sqrt(Var),
    Abs(Var),
    /// Elementwise max; gradient follows the larger input, ties to the first.
    Max2(Var, Var),
    /// Clamp to [0,1]; gradient passes only strictly inside the interval.
    Clamp01(Var),
    /// Scale a tensor by a scalar node.
    SMul { s: Var, v: Var },
    /// Identity value, gradient barrier.
    Detach,
}

struct Node {
    value: Tensor,
    op: Op,
}

struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

/// Records tensor operations for one forward pass.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { inner: RefCell::new(Inner { nodes: Vec::new(), grads: Vec::new() }) }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op });
        Var(inner.nodes.len() - 1)
    }

    /// Registers a tensor as a graph input (parameter or constant).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.inner.borrow().nodes[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.inner.borrow().nodes[v.0].value.as_scalar()
    }

    pub fn shape_of(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].value.shape().to_vec()
    }

    pub fn with_values<R>(&self, v: Var, f: impl FnOnce(&[f64]) -> R) -> R {
        f(self.inner.borrow().nodes[v.0].value.values())
    }

    /// Gradient of the last `backward` target w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Tensor {
        let inner = self.inner.borrow();
        let shape = inner.nodes[v.0].value.shape().to_vec();
        Tensor::new(shape, inner.grads[v.0].clone()).expect("grad shape")
    }

    pub fn with_grad<R>(&self, v: Var, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().grads[v.0])
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let vals: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let vals: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let vals: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "div shape mismatch");
        let vals: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x / y).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Div(a, b))
    }

    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        let inner = self.inner.borrow();
        let tx = &inner.nodes[x.0].value;
        let vals: Vec<f64> = tx.values().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(tx.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Affine { x, scale })
    }

    pub fn scale(&self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn tanh(&self, x: Var) -> Var {
        let inner = self.inner.borrow();
        let tx = &inner.nodes[x.0].value;
        let vals: Vec<f64> = tx.values().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(tx.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Tanh(x))
    }

    pub fn sqrt(&self, x: Var) -> Var {
        let inner = self.inner.borrow();
        let tx = &inner.nodes[x.0].value;
        let vals: Vec<f64> = tx.values().iter().map(|v| v.sqrt()).collect();
        let t = Tensor::new(tx.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Sqrt(x))
    }

    pub fn abs(&self, x: Var) -> Var {
        let inner = self.inner.borrow();
        let tx = &inner.nodes[x.0].value;
        let vals: Vec<f64> = tx.values().iter().map(|v| v.abs()).collect();
        let t = Tensor::new(tx.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Abs(x))
    }

    pub fn max2(&self, a: Var, b: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
        assert_eq!(ta.shape(), tb.shape(), "max2 shape mismatch");
        let vals: Vec<f64> =
            ta.values().iter().zip(tb.values()).map(|(x, y)| if x >= y { *x } else { *y }).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Max2(a, b))
    }

    pub fn clamp01(&self, x: Var) -> Var {
        let inner = self.inner.borrow();
        let tx = &inner.nodes[x.0].value;
        let vals: Vec<f64> = tx.values().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let t = Tensor::new(tx.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::Clamp01(x))
    }

    pub fn detach(&self, x: Var) -> Var {
        let t = self.value(x);
        self.push(t, Op::Detach)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
        let (r, k) = (ta.rows(), ta.cols());
        let (k2, c) = (tb.rows(), tb.cols());
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; r * c];
        let (av, bv) = (ta.values(), tb.values());
        for i in 0..r {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * c..(i + 1) * c];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &bv[kk * c..(kk + 1) * c];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        let t = Tensor::matrix(r, c, out).unwrap();
        drop(inner);
        self.push(t, Op::MatMul(a, b))
    }

    /// `xᵀ·A`: runs a vector through a weight matrix laid out `[din×dout]`.
    pub fn vecmat(&self, x: Var, a: Var) -> Var {
        let inner = self.inner.borrow();
        let (tx, ta) = (&inner.nodes[x.0].value, &inner.nodes[a.0].value);
        let (r, c) = (ta.rows(), ta.cols());
        assert_eq!(tx.len(), r, "vecmat dimension mismatch");
        let mut out = vec![0.0; c];
        for (i, &xi) in tx.values().iter().enumerate() {
            let arow = &ta.values()[i * c..(i + 1) * c];
            for (o, &aij) in out.iter_mut().zip(arow) {
                *o += xi * aij;
            }
        }
        let t = Tensor::vector(out);
        drop(inner);
        self.push(t, Op::VecMat(x, a))
    }

    /// `A·x` for `A: [r×c]`, `x: [c]`.
    pub fn matvec(&self, a: Var, x: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tx) = (&inner.nodes[a.0].value, &inner.nodes[x.0].value);
        let (r, c) = (ta.rows(), ta.cols());
        assert_eq!(tx.len(), c, "matvec dimension mismatch");
        let mut out = vec![0.0; r];
        for i in 0..r {
            out[i] = super::dot(&ta.values()[i * c..(i + 1) * c], tx.values());
        }
        let t = Tensor::vector(out);
        drop(inner);
        self.push(t, Op::MatVec(a, x))
    }

    pub fn dot(&self, a: Var, b: Var) -> Var {
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.0].value, &inner.nodes[b.0].value);
        assert_eq!(ta.len(), tb.len(), "dot length mismatch");
        assert!(!ta.is_empty(), "dot on zero-length vectors");
        let t = Tensor::scalar(super::dot(ta.values(), tb.values()));
        drop(inner);
        self.push(t, Op::Dot(a, b))
    }

    pub fn add_row(&self, m: Var, row: Var) -> Var {
        let inner = self.inner.borrow();
        let (tm, tr) = (&inner.nodes[m.0].value, &inner.nodes[row.0].value);
        let (t, d) = (tm.rows(), tm.cols());
        assert_eq!(tr.len(), d, "add_row dimension mismatch");
        let mut out = Vec::with_capacity(t * d);
        for r in tm.values().chunks_exact(d) {
            for (x, y) in r.iter().zip(tr.values()) {
                out.push(x + y);
            }
        }
        let t = Tensor::matrix(t, d, out).unwrap();
        drop(inner);
        self.push(t, Op::AddRow { m, row })
    }

    pub fn mean_rows(&self, m: Var) -> Var {
        let inner = self.inner.borrow();
        let tm = &inner.nodes[m.0].value;
        let (t, d) = (tm.rows(), tm.cols());
        assert!(t > 0, "mean_rows on empty sequence");
        let mut out = vec![0.0; d];
        for r in tm.values().chunks_exact(d) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= t as f64;
        }
        let t = Tensor::vector(out);
        drop(inner);
        self.push(t, Op::MeanRows(m))
    }

    pub fn softmax(&self, x: Var) -> Var {
        let inner = self.inner.borrow();
        let tx = &inner.nodes[x.0].value;
        assert!(!tx.is_empty(), "softmax on empty vector");
        let p = super::softmax(tx.values()).unwrap();
        let t = Tensor::vector(p);
        drop(inner);
        self.push(t, Op::Softmax(x))
    }

    pub fn conv1d_k3(&self, x: Var, w: Var) -> Var {
        let inner = self.inner.borrow();
        let (tx, tw) = (&inner.nodes[x.0].value, &inner.nodes[w.0].value);
        let (t, din) = (tx.rows(), tx.cols());
        let dout = tw.cols();
        assert_eq!(tw.rows(), 3 * din, "conv1d_k3 expects weight [3·din×dout]");
        let (xv, wv) = (tx.values(), tw.values());
        let mut out = vec![0.0; t * dout];
        for ti in 0..t {
            let orow = &mut out[ti * dout..(ti + 1) * dout];
            for k in 0..3usize {
                let src = ti as isize + k as isize - 1;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let xrow = &xv[src as usize * din..(src as usize + 1) * din];
                for (i, &xi) in xrow.iter().enumerate() {
                    let wrow = &wv[(k * din + i) * dout..(k * din + i + 1) * dout];
                    for (o, &wj) in orow.iter_mut().zip(wrow) {
                        *o += xi * wj;
                    }
                }
            }
        }
        let t = Tensor::matrix(t, dout, out).unwrap();
        drop(inner);
        self.push(t, Op::Conv1dK3 { x, w })
    }

    pub fn concat(&self, parts: &[Var]) -> Var {
        let inner = self.inner.borrow();
        let mut vals = Vec::new();
        for p in parts {
            let tp = &inner.nodes[p.0].value;
            assert_eq!(tp.shape().len(), 1, "concat expects vectors");
            vals.extend_from_slice(tp.values());
        }
        let t = Tensor::vector(vals);
        drop(inner);
        self.push(t, Op::Concat(parts.to_vec()))
    }

    pub fn smul(&self, s: Var, v: Var) -> Var {
        let inner = self.inner.borrow();
        let (ts, tv) = (&inner.nodes[s.0].value, &inner.nodes[v.0].value);
        assert!(ts.is_scalar(), "smul scale must be a scalar node");
        let sv = ts.as_scalar();
        let vals: Vec<f64> = tv.values().iter().map(|x| sv * x).collect();
        let t = Tensor::new(tv.shape().to_vec(), vals).unwrap();
        drop(inner);
        self.push(t, Op::SMul { s, v })
    }

    // ---- composites ----

    /// Differentiable cosine similarity with the ε-guarded denominator.
    pub fn cosine(&self, a: Var, b: Var) -> Var {
        let sab = self.dot(a, b);
        let na = self.sqrt(self.dot(a, a));
        let nb = self.sqrt(self.dot(b, b));
        let den = self.affine(self.mul(na, nb), 1.0, EPS);
        self.div(sab, den)
    }

    /// Squared Euclidean distance `‖a − b‖²`.
    pub fn sq_dist(&self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.dot(d, d)
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean_of(&self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "mean_of on empty slice");
        let mut acc = xs[0];
        for x in &xs[1..] {
            acc = self.add(acc, *x);
        }
        self.scale(acc, 1.0 / xs.len() as f64)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar output. Gradients accumulate on every
    /// node and can be read with [`Tape::grad`].
    pub fn backward(&self, out: Var) {
        let mut inner = self.inner.borrow_mut();
        let inner = &mut *inner;
        assert!(inner.nodes[out.0].value.is_scalar(), "backward target must be scalar");
        inner.grads.clear();
        inner.grads.extend(inner.nodes.iter().map(|n| vec![0.0; n.value.len()]));
        inner.grads[out.0][0] = 1.0;

        for idx in (0..inner.nodes.len()).rev() {
            let go = std::mem::take(&mut inner.grads[idx]);
            if go.iter().all(|g| *g == 0.0) {
                inner.grads[idx] = go;
                continue;
            }
            match &inner.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for (g, v) in inner.grads[a.0].iter_mut().zip(&go) {
                        *g += v;
                    }
                    for (g, v) in inner.grads[b.0].iter_mut().zip(&go) {
                        *g += v;
                    }
                }
                Op::Sub(a, b) => {
                    for (g, v) in inner.grads[a.0].iter_mut().zip(&go) {
                        *g += v;
                    }
                    for (g, v) in inner.grads[b.0].iter_mut().zip(&go) {
                        *g -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..go.len() {
                        let av = inner.nodes[a.0].value.values()[i];
                        let bv = inner.nodes[b.0].value.values()[i];
                        inner.grads[a.0][i] += go[i] * bv;
                        inner.grads[b.0][i] += go[i] * av;
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..go.len() {
                        let av = inner.nodes[a.0].value.values()[i];
                        let bv = inner.nodes[b.0].value.values()[i];
                        inner.grads[a.0][i] += go[i] / bv;
                        inner.grads[b.0][i] -= go[i] * av / (bv * bv);
                    }
                }
                Op::Affine { x, scale, .. } => {
                    let (x, scale) = (*x, *scale);
                    for (g, v) in inner.grads[x.0].iter_mut().zip(&go) {
                        *g += scale * v;
                    }
                }
                Op::Tanh(x) => {
                    let x = *x;
                    for i in 0..go.len() {
                        let y = inner.nodes[idx].value.values()[i];
                        inner.grads[x.0][i] += go[i] * (1.0 - y * y);
                    }
                }
                Op::Sqrt(x) => {
                    let x = *x;
                    for i in 0..go.len() {
                        let y = inner.nodes[idx].value.values()[i];
                        inner.grads[x.0][i] += go[i] / (2.0 * y.max(EPS));
                    }
                }
                Op::Abs(x) => {
                    let x = *x;
                    for i in 0..go.len() {
                        let v = inner.nodes[x.0].value.values()[i];
                        inner.grads[x.0][i] += go[i] * if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
                    }
                }
                Op::Max2(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..go.len() {
                        let av = inner.nodes[a.0].value.values()[i];
                        let bv = inner.nodes[b.0].value.values()[i];
                        if av >= bv {
                            inner.grads[a.0][i] += go[i];
                        } else {
                            inner.grads[b.0][i] += go[i];
                        }
                    }
                }
                Op::Clamp01(x) => {
                    let x = *x;
                    for i in 0..go.len() {
                        let v = inner.nodes[x.0].value.values()[i];
                        if v > 0.0 && v < 1.0 {
                            inner.grads[x.0][i] += go[i];
                        }
                    }
                }
                Op::Detach => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (r, k) = {
                        let t = &inner.nodes[a.0].value;
                        (t.rows(), t.cols())
                    };
                    let c = inner.nodes[b.0].value.cols();
                    // dA = dC·Bᵀ
                    for i in 0..r {
                        for kk in 0..k {
                            let mut s = 0.0;
                            let brow = &inner.nodes[b.0].value.values()[kk * c..(kk + 1) * c];
                            let grow = &go[i * c..(i + 1) * c];
                            for (g, bv) in grow.iter().zip(brow) {
                                s += g * bv;
                            }
                            inner.grads[a.0][i * k + kk] += s;
                        }
                    }
                    // dB = Aᵀ·dC
                    for kk in 0..k {
                        for i in 0..r {
                            let aik = inner.nodes[a.0].value.values()[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            let grow = &go[i * c..(i + 1) * c];
                            let gb = &mut inner.grads[b.0][kk * c..(kk + 1) * c];
                            for (g, gv) in gb.iter_mut().zip(grow) {
                                *g += aik * gv;
                            }
                        }
                    }
                }
                Op::VecMat(x, a) => {
                    let (x, a) = (*x, *a);
                    let (r, c) = {
                        let t = &inner.nodes[a.0].value;
                        (t.rows(), t.cols())
                    };
                    for i in 0..r {
                        let xi = inner.nodes[x.0].value.values()[i];
                        let arow = &inner.nodes[a.0].value.values()[i * c..(i + 1) * c];
                        let mut s = 0.0;
                        for (g, av) in go.iter().zip(arow) {
                            s += g * av;
                        }
                        inner.grads[x.0][i] += s;
                        let ga = &mut inner.grads[a.0][i * c..(i + 1) * c];
                        for (g, gv) in ga.iter_mut().zip(&go) {
                            *g += xi * gv;
                        }
                    }
                }
                Op::MatVec(a, x) => {
                    let (a, x) = (*a, *x);
                    let (r, c) = {
                        let t = &inner.nodes[a.0].value;
                        (t.rows(), t.cols())
                    };
                    for i in 0..r {
                        let gi = go[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let arow = &inner.nodes[a.0].value.values()[i * c..(i + 1) * c];
                        for j in 0..c {
                            inner.grads[x.0][j] += gi * arow[j];
                        }
                        let xv = &inner.nodes[x.0].value;
                        let ga = &mut inner.grads[a.0][i * c..(i + 1) * c];
                        for (g, xj) in ga.iter_mut().zip(xv.values()) {
                            *g += gi * xj;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let g = go[0];
                    for i in 0..inner.nodes[a.0].value.len() {
                        let av = inner.nodes[a.0].value.values()[i];
                        let bv = inner.nodes[b.0].value.values()[i];
                        inner.grads[a.0][i] += g * bv;
                        inner.grads[b.0][i] += g * av;
                    }
                }
                Op::AddRow { m, row } => {
                    let (m, row) = (*m, *row);
                    let d = inner.nodes[row.0].value.len();
                    for (g, v) in inner.grads[m.0].iter_mut().zip(&go) {
                        *g += v;
                    }
                    for chunk in go.chunks_exact(d) {
                        for (g, v) in inner.grads[row.0].iter_mut().zip(chunk) {
                            *g += v;
                        }
                    }
                }
                Op::MeanRows(m) => {
                    let m = *m;
                    let t = inner.nodes[m.0].value.rows();
                    let d = inner.nodes[m.0].value.cols();
                    let inv = 1.0 / t as f64;
                    for chunk in inner.grads[m.0].chunks_exact_mut(d) {
                        for (g, v) in chunk.iter_mut().zip(&go) {
                            *g += v * inv;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let x = *x;
                    let p = inner.nodes[idx].value.values();
                    let inner_sum: f64 = go.iter().zip(p).map(|(g, pi)| g * pi).sum();
                    let px: Vec<f64> = p.iter().zip(&go).map(|(pi, g)| pi * (g - inner_sum)).collect();
                    for (g, v) in inner.grads[x.0].iter_mut().zip(&px) {
                        *g += v;
                    }
                }
                Op::Conv1dK3 { x, w } => {
                    let (x, w) = (*x, *w);
                    let (t, din) = {
                        let tx = &inner.nodes[x.0].value;
                        (tx.rows(), tx.cols())
                    };
                    let dout = inner.nodes[w.0].value.cols();
                    for ti in 0..t {
                        let grow = &go[ti * dout..(ti + 1) * dout];
                        for k in 0..3usize {
                            let src = ti as isize + k as isize - 1;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let src = src as usize;
                            for i in 0..din {
                                let xi = inner.nodes[x.0].value.values()[src * din + i];
                                let wrow =
                                    &inner.nodes[w.0].value.values()[(k * din + i) * dout..(k * din + i + 1) * dout];
                                let mut s = 0.0;
                                for (g, wv) in grow.iter().zip(wrow) {
                                    s += g * wv;
                                }
                                inner.grads[x.0][src * din + i] += s;
                                let gw = &mut inner.grads[w.0][(k * din + i) * dout..(k * din + i + 1) * dout];
                                for (g, gv) in gw.iter_mut().zip(grow) {
                                    *g += xi * gv;
                                }
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let n = inner.nodes[p.0].value.len();
                        for (g, v) in inner.grads[p.0].iter_mut().zip(&go[off..off + n]) {
                            *g += v;
                        }
                        off += n;
                    }
                }
                Op::SMul { s, v } => {
                    let (s, v) = (*s, *v);
                    let sv = inner.nodes[s.0].value.as_scalar();
                    let mut gs = 0.0;
                    for i in 0..go.len() {
                        let vv = inner.nodes[v.0].value.values()[i];
                        inner.grads[v.0][i] += sv * go[i];
                        gs += go[i] * vv;
                    }
                    inner.grads[s.0][0] += gs;
                }
            }
            inner.grads[idx] = go;
        }
    }
}
