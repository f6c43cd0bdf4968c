use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, gemm, MatMut, MatRef};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Geometry of a packed multi-head attention call.
///
/// `q` is `[batch*seq, n_heads*head_dim]`, `k` and `v` are
/// `[batch*seq, n_kv_heads*head_dim]`. Query head `h` reads KV head
/// `h / (n_heads / n_kv_heads)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub batch: usize,
    pub seq: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub causal: bool,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Silu,
    Gelu,
    Relu,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Unary { a: Var, kind: Unary },
    Sum { a: Var },
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, w: Var, xhat: Vec<T>, rstd: Vec<T> },
    Rope { a: Var, seq: usize, head_dim: usize, base: f64 },
    Attention { q: Var, k: Var, v: Var, shape: AttentionShape, probs: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    SpellingSum { table: Var, rows: Vec<[u8; 16]>, rotate: bool, base: f64 },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Epsilon inside the layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Append-only tape of tensor operations.
///
/// Values are computed eagerly as ops are recorded; [`Graph::backward`]
/// replays the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", av.shape(), bv.shape()),
            ));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::ZERO; m * n];
        gemm(
            T::ONE,
            MatRef::dense(av.data(), m, k),
            MatRef::dense(bv.data(), k, n),
            T::ZERO,
            MatMut::dense(&mut out, m, n),
        );
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul { a, b }, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape(), out)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add { a, b }, needs))
    }

    /// Adds a `[cols]` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.len() != av.cols() {
            return Err(shape_err(
                "add_row",
                format!("{:?} + row {:?}", av.shape(), rv.shape()),
            ));
        }
        let c = av.cols();
        let out: Vec<T> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + rv.data()[i % c])
            .collect();
        let t = Tensor::new(av.shape(), out)?;
        let needs = self.ng(a) || self.ng(row);
        Ok(self.push(t, Op::AddRow { a, row }, needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape(), out)?;
        let needs = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape(), av.data().iter().map(|&x| x * s).collect()).unwrap();
        let needs = self.ng(a);
        self.push(t, Op::Scale { a, s }, needs)
    }

    /// `a / s`, rounded as a true division rather than a reciprocal product.
    pub fn div_scalar(&mut self, a: Var, s: T) -> Var {
        let av = self.value(a);
        let t = Tensor::new(av.shape(), av.data().iter().map(|&x| x / s).collect()).unwrap();
        let needs = self.ng(a);
        self.push(t, Op::Scale { a, s: T::ONE / s }, needs)
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let av = self.value(a);
        let f = |x: T| match kind {
            Unary::Silu => kernels::silu(x),
            Unary::Gelu => kernels::gelu(x),
            Unary::Relu => {
                if x > T::ZERO {
                    x
                } else {
                    T::ZERO
                }
            }
        };
        let t = Tensor::new(av.shape(), av.data().iter().map(|&x| f(x)).collect()).unwrap();
        let needs = self.ng(a);
        self.push(t, Op::Unary { a, kind }, needs)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Silu)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let needs = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, needs)
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "token",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(&[ids.len(), d], out)?;
        let needs = self.ng(table);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Bias-free layer norm over the last axis, scaled by `w`.
    pub fn layer_norm(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let d = xv.cols();
        if wv.len() != d || d == 0 {
            return Err(shape_err(
                "layer_norm",
                format!("x {:?}, weight {:?}", xv.shape(), wv.shape()),
            ));
        }
        let rows = xv.rows();
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut xhat = vec![T::ZERO; rows * d];
        let mut rstd = vec![T::ZERO; rows];
        let mut out = vec![T::ZERO; rows * d];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::ONE / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * wv.data()[j];
            }
        }
        let t = Tensor::new(xv.shape(), out)?;
        let needs = self.ng(x) || self.ng(w);
        Ok(self.push(t, Op::LayerNorm { x, w, xhat, rstd }, needs))
    }

    /// Rotary position encoding over the heads of each row; row `r` sits at
    /// sequence position `r % seq`.
    pub fn rope(&mut self, a: Var, seq: usize, head_dim: usize, base: f64) -> Result<Var> {
        let av = self.value(a);
        if head_dim == 0 || !head_dim.is_multiple_of(2) || !av.cols().is_multiple_of(head_dim) || seq == 0 {
            return Err(Error::Config(format!(
                "rope needs an even head_dim dividing width {}, got {}",
                av.cols(),
                head_dim
            )));
        }
        let (cos, sin) = kernels::rope_table(seq, head_dim, base);
        let half = head_dim / 2;
        let mut out = av.data().to_vec();
        let w = av.cols();
        for (r, row) in out.chunks_exact_mut(w).enumerate() {
            let p = r % seq;
            for head in row.chunks_exact_mut(head_dim) {
                kernels::rotate_pairs(head, &cos[p * half..(p + 1) * half], &sin[p * half..(p + 1) * half], false);
            }
        }
        let t = Tensor::new(av.shape(), out)?;
        let needs = self.ng(a);
        Ok(self.push(t, Op::Rope { a, seq, head_dim, base }, needs))
    }

    /// Scaled dot-product attention with grouped KV heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttentionShape) -> Result<Var> {
        let AttentionShape {
            batch: bsz,
            seq: s,
            n_heads: nh,
            n_kv_heads: nkv,
            head_dim: hd,
            causal,
        } = shape;
        if nkv == 0 || nh % nkv != 0 {
            return Err(Error::Config(format!(
                "n_heads {} is not divisible by n_kv_heads {}",
                nh, nkv
            )));
        }
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (qw, kw) = (nh * hd, nkv * hd);
        let rows = bsz * s;
        if qv.shape() != [rows, qw] || kv.shape() != [rows, kw] || vv.shape() != [rows, kw] {
            return Err(shape_err(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?} for {:?}",
                    qv.shape(),
                    kv.shape(),
                    vv.shape(),
                    shape
                ),
            ));
        }
        let group = nh / nkv;
        let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
        let mut probs = vec![T::ZERO; bsz * nh * s * s];
        let mut out = vec![T::ZERO; rows * qw];
        for b in 0..bsz {
            for h in 0..nh {
                let g = h / group;
                let p = &mut probs[(b * nh + h) * s * s..(b * nh + h + 1) * s * s];
                let qm = MatRef { data: &qv.data()[b * s * qw + h * hd..], rows: s, cols: hd, rs: qw, cs: 1 };
                let km = MatRef { data: &kv.data()[b * s * kw + g * hd..], rows: s, cols: hd, rs: kw, cs: 1 };
                gemm(scale, qm, km.t(), T::ZERO, MatMut::dense(p, s, s));
                for i in 0..s {
                    kernels::softmax_prefix(&mut p[i * s..(i + 1) * s], if causal { i + 1 } else { s });
                }
                let vm = MatRef { data: &vv.data()[b * s * kw + g * hd..], rows: s, cols: hd, rs: kw, cs: 1 };
                let om = MatMut { data: &mut out[b * s * qw + h * hd..], rows: s, cols: hd, rs: qw, cs: 1 };
                gemm(T::ONE, MatRef::dense(p, s, s), vm, T::ZERO, om);
            }
        }
        let t = Tensor::new(&[rows, qw], out)?;
        let needs = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(t, Op::Attention { q, k, v, shape, probs }, needs))
    }

    /// Mean softmax cross-entropy of `[n, vocab]` logits against targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, vocab) = (lv.rows(), lv.cols());
        if targets.len() != n || n == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("{} rows vs {} targets", n, targets.len()),
            ));
        }
        let mut probs = vec![T::ZERO; n * vocab];
        let mut total = 0.0f64;
        for r in 0..n {
            let t = targets[r];
            if t >= vocab {
                return Err(Error::Index {
                    what: "target",
                    index: t,
                    bound: vocab,
                });
            }
            let row = lv.row(r);
            let p = &mut probs[r * vocab..(r + 1) * vocab];
            p.copy_from_slice(row);
            let mut max = row[0];
            for &x in &row[1..] {
                max = max.max(x);
            }
            let mut sum = T::ZERO;
            for x in p.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let lse = max.to_f64() + libm::log(sum.to_f64());
            total += lse - row[t].to_f64();
            let inv = T::ONE / sum;
            for x in p.iter_mut() {
                *x *= inv;
            }
        }
        let loss = T::from_f64(total / n as f64);
        let needs = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// For every spelling row, the sum over positions `i` of byte embedding
    /// `table[row[i]]`, rotated by position `i` when `rotate` is set.
    pub fn spelling_sum(&mut self, table: Var, rows: &[[u8; 16]], rotate: bool, base: f64) -> Result<Var> {
        let tv = self.value(table);
        let d = tv.cols();
        if tv.rows() != 256 {
            return Err(shape_err("spelling_sum", format!("byte table {:?}", tv.shape())));
        }
        if rotate && !d.is_multiple_of(2) {
            return Err(Error::Config(format!("rotary byte embeddings need an even width, got {}", d)));
        }
        let (cos, sin) = kernels::rope_table(16, d, base);
        let half = d / 2;
        let mut out = vec![T::ZERO; rows.len() * d];
        let mut tmp = vec![T::ZERO; d];
        for (r, spelling) in rows.iter().enumerate() {
            let o = &mut out[r * d..(r + 1) * d];
            for (i, &byte) in spelling.iter().enumerate() {
                tmp.copy_from_slice(tv.row(byte as usize));
                if rotate {
                    kernels::rotate_pairs(&mut tmp, &cos[i * half..(i + 1) * half], &sin[i * half..(i + 1) * half], false);
                }
                for (x, &y) in o.iter_mut().zip(&tmp) {
                    *x += y;
                }
            }
        }
        let t = Tensor::new(&[rows.len(), d], out)?;
        let needs = self.ng(table);
        Ok(self.push(
            t,
            Op::SpellingSum {
                table,
                rows: rows.to_vec(),
                rotate,
                base,
            },
            needs,
        ))
    }

    /// Reverse-mode gradients of the one-element tensor `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be a scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::ONE]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape(), g).unwrap()))
            .collect();
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.ng(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::ZERO; len]).as_mut_slice())
    }

    fn backprop(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let gm = MatRef::dense(g, m, n);
                if let Some(da) = self.acc(grads, *a) {
                    gemm(T::ONE, gm, MatRef::dense(bv.data(), k, n).t(), T::ONE, MatMut::dense(da, m, k));
                }
                if let Some(db) = self.acc(grads, *b) {
                    gemm(T::ONE, MatRef::dense(av.data(), m, k).t(), gm, T::ONE, MatMut::dense(db, k, n));
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        for (x, &y) in d.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(d) = self.acc(grads, *a) {
                    for (x, &y) in d.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if let Some(d) = self.acc(grads, *row) {
                    let c = d.len();
                    for (i, &y) in g.iter().enumerate() {
                        d[i % c] += y;
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, &y), &o) in d.iter_mut().zip(g).zip(self.value(*b).data()) {
                        *x += y * o;
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for ((x, &y), &o) in d.iter_mut().zip(g).zip(self.value(*a).data()) {
                        *x += y * o;
                    }
                }
            }
            Op::Scale { a, s } => {
                if let Some(d) = self.acc(grads, *a) {
                    for (x, &y) in d.iter_mut().zip(g) {
                        *x += y * *s;
                    }
                }
            }
            Op::Unary { a, kind } => {
                let input = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for ((x, &y), &u) in d.iter_mut().zip(g).zip(input) {
                        let du = match kind {
                            Unary::Silu => kernels::silu_grad(u),
                            Unary::Gelu => kernels::gelu_grad(u),
                            Unary::Relu => {
                                if u > T::ZERO {
                                    T::ONE
                                } else {
                                    T::ZERO
                                }
                            }
                        };
                        *x += y * du;
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(d) = self.acc(grads, *a) {
                    for x in d.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Gather { table, ids } => {
                let dim = self.value(*table).cols();
                if let Some(d) = self.acc(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g[i * dim..(i + 1) * dim];
                        for (x, &y) in d[id * dim..(id + 1) * dim].iter_mut().zip(src) {
                            *x += y;
                        }
                    }
                }
            }
            Op::LayerNorm { x, w, xhat, rstd } => {
                let wv = self.value(*w).data();
                let dim = wv.len();
                let rows = rstd.len();
                if let Some(dw) = self.acc(grads, *w) {
                    for r in 0..rows {
                        for j in 0..dim {
                            dw[j] += g[r * dim + j] * xhat[r * dim + j];
                        }
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    let inv_d = T::from_f64(1.0 / dim as f64);
                    for r in 0..rows {
                        let gr = &g[r * dim..(r + 1) * dim];
                        let hr = &xhat[r * dim..(r + 1) * dim];
                        let mut mean_dh = T::ZERO;
                        let mut mean_dh_h = T::ZERO;
                        for j in 0..dim {
                            let dh = gr[j] * wv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..dim {
                            let dh = gr[j] * wv[j];
                            dx[r * dim + j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Rope { a, seq, head_dim, base } => {
                let w = self.value(*a).cols();
                if let Some(d) = self.acc(grads, *a) {
                    let (cos, sin) = kernels::rope_table(*seq, *head_dim, *base);
                    let half = head_dim / 2;
                    let mut tmp = vec![T::ZERO; *head_dim];
                    for (r, (drow, grow)) in d.chunks_exact_mut(w).zip(g.chunks_exact(w)).enumerate() {
                        let p = r % seq;
                        for (dh, gh) in drow.chunks_exact_mut(*head_dim).zip(grow.chunks_exact(*head_dim)) {
                            tmp.copy_from_slice(gh);
                            kernels::rotate_pairs(&mut tmp, &cos[p * half..(p + 1) * half], &sin[p * half..(p + 1) * half], true);
                            for (x, &y) in dh.iter_mut().zip(&tmp) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            Op::Attention { q, k, v, shape, probs } => self.attention_backward(*q, *k, *v, shape, probs, g, grads),
            Op::CrossEntropy { logits, targets, probs } => {
                let vocab = self.value(*logits).cols();
                let n = targets.len();
                if let Some(d) = self.acc(grads, *logits) {
                    let s = g[0] / T::from_f64(n as f64);
                    for (r, &t) in targets.iter().enumerate() {
                        let p = &probs[r * vocab..(r + 1) * vocab];
                        let dr = &mut d[r * vocab..(r + 1) * vocab];
                        for j in 0..vocab {
                            dr[j] += s * p[j];
                        }
                        dr[t] -= s;
                    }
                }
            }
            Op::SpellingSum { table, rows, rotate, base } => {
                let dim = self.value(*table).cols();
                if let Some(d) = self.acc(grads, *table) {
                    let (cos, sin) = kernels::rope_table(16, dim, *base);
                    let half = dim / 2;
                    let mut tmp = vec![T::ZERO; dim];
                    for (r, spelling) in rows.iter().enumerate() {
                        let gr = &g[r * dim..(r + 1) * dim];
                        for (i, &byte) in spelling.iter().enumerate() {
                            tmp.copy_from_slice(gr);
                            if *rotate {
                                kernels::rotate_pairs(&mut tmp, &cos[i * half..(i + 1) * half], &sin[i * half..(i + 1) * half], true);
                            }
                            let b = byte as usize;
                            for (x, &y) in d[b * dim..(b + 1) * dim].iter_mut().zip(&tmp) {
                                *x += y;
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: &AttentionShape,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let AttentionShape {
            batch: bsz,
            seq: s,
            n_heads: nh,
            n_kv_heads: nkv,
            head_dim: hd,
            ..
        } = *shape;
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (qw, kw) = (nh * hd, nkv * hd);
        let group = nh / nkv;
        let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
        let mut dq = vec![T::ZERO; qv.len()];
        let mut dk = vec![T::ZERO; kv.len()];
        let mut dv = vec![T::ZERO; vv.len()];
        let mut ds = vec![T::ZERO; s * s];
        for b in 0..bsz {
            for h in 0..nh {
                let kvh = h / group;
                let p = &probs[(b * nh + h) * s * s..(b * nh + h + 1) * s * s];
                let qo = b * s * qw + h * hd;
                let ko = b * s * kw + kvh * hd;
                let gm = MatRef { data: &g[qo..], rows: s, cols: hd, rs: qw, cs: 1 };
                let vm = MatRef { data: &vv.data()[ko..], rows: s, cols: hd, rs: kw, cs: 1 };
                gemm(T::ONE, gm, vm.t(), T::ZERO, MatMut::dense(&mut ds, s, s));
                for i in 0..s {
                    let pr = &p[i * s..(i + 1) * s];
                    let dr = &mut ds[i * s..(i + 1) * s];
                    let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                    for j in 0..s {
                        dr[j] = pr[j] * (dr[j] - dot);
                    }
                }
                let km = MatRef { data: &kv.data()[ko..], rows: s, cols: hd, rs: kw, cs: 1 };
                let qm = MatRef { data: &qv.data()[qo..], rows: s, cols: hd, rs: qw, cs: 1 };
                let dsm = MatRef::dense(&ds, s, s);
                gemm(scale, dsm, km, T::ONE, MatMut { data: &mut dq[qo..], rows: s, cols: hd, rs: qw, cs: 1 });
                gemm(scale, dsm.t(), qm, T::ONE, MatMut { data: &mut dk[ko..], rows: s, cols: hd, rs: kw, cs: 1 });
                gemm(T::ONE, MatRef::dense(p, s, s).t(), gm, T::ONE, MatMut { data: &mut dv[ko..], rows: s, cols: hd, rs: kw, cs: 1 });
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(d) = self.acc(grads, var) {
                for (x, y) in d.iter_mut().zip(buf) {
                    *x += y;
                }
            }
        }
    }
}
