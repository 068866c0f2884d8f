use super::tensor::{kernels, Tensor};
use crate::error::{ensure, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Silu(Var),
    LogSigmoid(Var),
    Softmax(Var),
    RmsNorm { x: Var, gain: Var, inv: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Rope { x: Var, head_dim: usize, cos: Vec<T>, sin: Vec<T> },
    Attention { q: Var, k: Var, v: Var, n_heads: usize, probs: Vec<T> },
    LogProbSum { logits: Var, picks: Vec<(usize, usize)>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of executed primitives. Nodes are stored in execution order, which is
/// also a topological order; `backward` walks it once in reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call; `None` for nodes that do not
    /// require gradients or for intermediates.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{name} produced NaN/Inf")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<()> {
        ensure!(
            self.value(a).shape() == self.value(b).shape(),
            Dimension,
            "{name}: shapes {:?} and {:?} differ",
            self.value(a).shape(),
            self.value(b).shape()
        );
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| f(p)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |p, q| p + q);
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    /// Adds a vector along the trailing dimension.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        ensure!(
            self.value(bias).numel() == d,
            Dimension,
            "bias length {} vs trailing dim {}",
            self.value(bias).numel(),
            d
        );
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &p)| p + b[i % d]).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::AddRow(x, bias), &[x, bias], "add_row")
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.map(a, |p| p * factor);
        self.push(out, Op::Scale(a, factor), &[a], "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        ensure!(n > 0, Dimension, "mean of empty tensor");
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |p| p / (T::one() + (-p).exp()));
        self.push(out, Op::Silu(a), &[a], "silu")
    }

    /// log σ(x), evaluated without overflow for large |x|.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, log_sigmoid);
        self.push(out, Op::LogSigmoid(a), &[a], "log_sigmoid")
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let d = x.last_dim();
        ensure!(d >= 1, Dimension, "softmax over empty last dimension");
        let mut out = vec![T::zero(); x.numel()];
        for (src, dst) in x.data().chunks(d).zip(out.chunks_mut(d)) {
            kernels::softmax_row(src, dst);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push(out, Op::Softmax(a), &[a], "softmax")
    }

    /// x / sqrt(mean(x²) + eps) * gain over each trailing slice.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        ensure!(
            self.value(gain).numel() == d,
            Dimension,
            "gain length {} vs trailing dim {}",
            self.value(gain).numel(),
            d
        );
        let g = self.value(gain).data();
        let mut out = vec![T::zero(); xv.numel()];
        let mut inv = Vec::with_capacity(xv.rows());
        let dn = T::lit(d as f64);
        for (src, dst) in xv.data().chunks(d).zip(out.chunks_mut(d)) {
            let ms = src.iter().map(|&v| v * v).sum::<T>() / dn;
            let r = T::one() / (ms + eps).sqrt();
            inv.push(r);
            for ((o, &v), &gi) in dst.iter_mut().zip(src).zip(g) {
                *o = v * r * gi;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(out, Op::RmsNorm { x, gain, inv }, &[x, gain], "rms_norm")
    }

    /// Gathers rows of a [V×d] table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).matrix_dims()?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            ensure!(id < v, Index, "token id {id} outside table of {v} rows");
            out.extend_from_slice(self.value(table).row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        self.push(out, Op::Embedding { table, ids: ids.to_vec() }, &[table], "embedding")
    }

    /// Rotary embedding of an [n × (h·head_dim)] activation. Row `r` is
    /// rotated by `positions[r]`; the pair (2i, 2i+1) of each head by
    /// `pos · base^(-2i/head_dim)`.
    pub fn rope(&mut self, x: Var, positions: &[usize], head_dim: usize, base: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.matrix_dims()?;
        ensure!(head_dim.is_multiple_of(2), Dimension, "rotary head dim {head_dim} is odd");
        ensure!(d % head_dim == 0, Dimension, "width {d} not a multiple of head dim {head_dim}");
        ensure!(positions.len() == n, Dimension, "{} positions for {} rows", positions.len(), n);
        let (cos, sin) = rope_tables::<T>(positions, head_dim, base);
        let out = rope_apply(xv.data(), n, d, head_dim, &cos, &sin, false);
        let out = Tensor::new(vec![n, d], out)?;
        self.push(out, Op::Rope { x, head_dim, cos, sin }, &[x], "rope")
    }

    /// Multi-head causal self-attention on [n×d] projections; row i attends
    /// to rows 0..=i.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var> {
        let (n, d) = self.value(q).matrix_dims()?;
        ensure!(
            self.value(k).shape() == [n, d] && self.value(v).shape() == [n, d],
            Dimension,
            "q/k/v shapes differ"
        );
        ensure!(n_heads >= 1 && d % n_heads == 0, Dimension, "width {d} not divisible by {n_heads} heads");
        let dh = d / n_heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); n_heads * n * n];
        let mut out = vec![T::zero(); n * d];
        let mut scores = vec![T::zero(); n];
        for h in 0..n_heads {
            let off = h * dh;
            for i in 0..n {
                let qi = &qd[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let kj = &kd[j * d + off..j * d + off + dh];
                    scores[j] = kernels::dot(qi, kj) * scale;
                }
                let prow = &mut probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                kernels::softmax_row(&scores[..=i], prow);
                let orow = &mut out[i * d + off..i * d + off + dh];
                for (j, &p) in prow.iter().enumerate() {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (o, &x) in orow.iter_mut().zip(vj) {
                        *o = *o + p * x;
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, d], out)?;
        self.push(out, Op::Attention { q, k, v, n_heads, probs }, &[q, k, v], "attention")
    }

    /// Σ log softmax(logits[row])[target] over the given (row, target) picks.
    pub fn log_prob_sum(&mut self, logits: Var, picks: &[(usize, usize)]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, vocab) = lv.matrix_dims()?;
        let mut probs = Vec::with_capacity(picks.len() * vocab);
        let mut total = T::zero();
        for &(row, target) in picks {
            ensure!(row < n, Index, "row {row} outside {n} logit rows");
            ensure!(target < vocab, Index, "target {target} outside vocabulary of {vocab}");
            let r = lv.row(row);
            let lse = kernels::log_sum_exp(r);
            total = total + r[target] - lse;
            probs.extend(r.iter().map(|&x| (x - lse).exp()));
        }
        self.push(
            Tensor::scalar(total),
            Op::LogProbSum { logits, picks: picks.to_vec(), probs },
            &[logits],
            "log_prob_sum",
        )
    }

    /// Mean over rows of −log softmax(logits)[target].
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, _) = self.value(logits).matrix_dims()?;
        ensure!(targets.len() == n, Dimension, "{} targets for {} rows", targets.len(), n);
        ensure!(n > 0, Dimension, "cross entropy over zero rows");
        let picks: Vec<(usize, usize)> = targets.iter().copied().enumerate().collect();
        let lp = self.log_prob_sum(logits, &picks)?;
        self.scale(lp, -T::one() / T::lit(n as f64))
    }

    /// Reverse pass from a scalar loss. Populates gradients of every
    /// requires-grad leaf; contributions over fan-out are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        ensure!(
            self.value(loss).is_scalar(),
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            // Intermediate grads are consumed here; only leaves keep theirs.
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
        }
        self.grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match node.op {
                Op::Leaf if node.requires_grad => {
                    let shape = node.value.shape().to_vec();
                    Some(match g {
                        Some(g) => Tensor::new(shape, g).expect("grad shape"),
                        None => Tensor::zeros(shape),
                    })
                }
                _ => None,
            })
            .collect();
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).matrix_dims().expect("matrix");
                let n = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let bd = self.value(*b).data();
                    self.acc(grads, *a, |da| kernels::matmul_bt_acc(g, bd, da, m, k, n));
                }
                if self.requires_grad(*b) {
                    let ad = self.value(*a).data();
                    self.acc(grads, *b, |db| kernels::matmul_at_acc(ad, g, db, m, k, n));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |da| axpy(da, g, T::one()));
                self.acc(grads, *b, |db| axpy(db, g, T::one()));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |da| axpy(da, g, T::one()));
                self.acc(grads, *b, |db| axpy(db, g, -T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |da| {
                    for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d = *d + gi * y;
                    }
                });
                self.acc(grads, *b, |db| {
                    for ((d, &gi), &x) in db.iter_mut().zip(g).zip(av) {
                        *d = *d + gi * x;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                self.acc(grads, *x, |dx| axpy(dx, g, T::one()));
                let d = self.value(*bias).numel();
                self.acc(grads, *bias, |db| {
                    for row in g.chunks(d) {
                        axpy(db, row, T::one());
                    }
                });
            }
            Op::Scale(a, f) => self.acc(grads, *a, |da| axpy(da, g, *f)),
            Op::Sum(a) => self.acc(grads, *a, |da| {
                for d in da.iter_mut() {
                    *d = *d + g[0];
                }
            }),
            Op::Silu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |da| {
                    for ((d, &gi), &v) in da.iter_mut().zip(g).zip(x) {
                        let s = T::one() / (T::one() + (-v).exp());
                        *d = *d + gi * s * (T::one() + v * (T::one() - s));
                    }
                });
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |da| {
                    for ((d, &gi), &v) in da.iter_mut().zip(g).zip(x) {
                        // d/dx log σ(x) = σ(−x)
                        *d = *d + gi * log_sigmoid(-v).exp();
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let dim = node.value.last_dim();
                self.acc(grads, *a, |da| {
                    for ((drow, grow), yrow) in da.chunks_mut(dim).zip(g.chunks(dim)).zip(y.chunks(dim)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&p, &q)| p * q).sum();
                        for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + yi * (gi - dot);
                        }
                    }
                });
            }
            Op::RmsNorm { x, gain, inv } => {
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let dim = gv.len();
                let dn = T::lit(dim as f64);
                self.acc(grads, *x, |dx| {
                    for (r, ((drow, grow), xrow)) in
                        dx.chunks_mut(dim).zip(g.chunks(dim)).zip(xv.chunks(dim)).enumerate()
                    {
                        let ir = inv[r];
                        let dot: T = grow.iter().zip(gv).zip(xrow).map(|((&a, &b), &c)| a * b * c).sum();
                        let coef = ir * ir * ir * dot / dn;
                        for (((d, &gi), &wi), &xi) in drow.iter_mut().zip(grow).zip(gv).zip(xrow) {
                            *d = *d + gi * wi * ir - xi * coef;
                        }
                    }
                });
                self.acc(grads, *gain, |dg| {
                    for (r, (grow, xrow)) in g.chunks(dim).zip(xv.chunks(dim)).enumerate() {
                        for ((d, &gi), &xi) in dg.iter_mut().zip(grow).zip(xrow) {
                            *d = *d + gi * xi * inv[r];
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let dim = self.value(*table).shape()[1];
                self.acc(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut dt[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim], T::one());
                    }
                });
            }
            Op::Rope { x, head_dim, cos, sin } => {
                let (n, d) = self.value(*x).matrix_dims().expect("matrix");
                let back = rope_apply(g, n, d, *head_dim, cos, sin, true);
                self.acc(grads, *x, |dx| axpy(dx, &back, T::one()));
            }
            Op::Attention { q, k, v, n_heads, probs } => {
                self.attention_backward(g, *q, *k, *v, *n_heads, probs, grads);
            }
            Op::LogProbSum { logits, picks, probs } => {
                let vocab = self.value(*logits).shape()[1];
                self.acc(grads, *logits, |dl| {
                    for (p, &(row, target)) in picks.iter().enumerate() {
                        let prow = &probs[p * vocab..(p + 1) * vocab];
                        let drow = &mut dl[row * vocab..(row + 1) * vocab];
                        for (d, &pr) in drow.iter_mut().zip(prow) {
                            *d = *d - g[0] * pr;
                        }
                        drow[target] = drow[target] + g[0];
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[T],
        q: Var,
        k: Var,
        v: Var,
        n_heads: usize,
        probs: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (n, d) = self.value(q).matrix_dims().expect("matrix");
        let dh = d / n_heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        let mut ds = vec![T::zero(); n];
        for h in 0..n_heads {
            let off = h * dh;
            for i in 0..n {
                let prow = &probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                let gi = &g[i * d + off..i * d + off + dh];
                let mut dot = T::zero();
                for (j, &p) in prow.iter().enumerate() {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    let dp: T = gi.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    ds[j] = dp;
                    dot = dot + p * dp;
                    axpy(&mut dv[j * d + off..j * d + off + dh], gi, p);
                }
                let qi = &qd[i * d + off..i * d + off + dh];
                for (j, &p) in prow.iter().enumerate() {
                    let s = p * (ds[j] - dot) * scale;
                    let kj = &kd[j * d + off..j * d + off + dh];
                    axpy(&mut dq[i * d + off..i * d + off + dh], kj, s);
                    axpy(&mut dk[j * d + off..j * d + off + dh], qi, s);
                }
            }
        }
        self.acc(grads, q, |x| axpy(x, &dq, T::one()));
        self.acc(grads, k, |x| axpy(x, &dk, T::one()));
        self.acc(grads, v, |x| axpy(x, &dv, T::one()));
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); numel]);
        f(slot);
    }
}

fn axpy<T: Scalar>(dst: &mut [T], src: &[T], a: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + a * s;
    }
}

pub(crate) fn log_sigmoid<T: Scalar>(x: T) -> T {
    // log σ(x) = min(x, 0) − log(1 + e^{−|x|})
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}

/// cos/sin per (row, pair-within-head).
pub(crate) fn rope_tables<T: Scalar>(positions: &[usize], head_dim: usize, base: f64) -> (Vec<T>, Vec<T>) {
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &pos in positions {
        for i in 0..half {
            let freq = base.powf(-(2.0 * i as f64) / head_dim as f64);
            let angle = pos as f64 * freq;
            cos.push(T::lit(angle.cos()));
            sin.push(T::lit(angle.sin()));
        }
    }
    (cos, sin)
}

/// Rotates every (2i, 2i+1) pair; `inverse` applies the transpose rotation.
pub(crate) fn rope_apply<T: Scalar>(
    x: &[T],
    n: usize,
    d: usize,
    head_dim: usize,
    cos: &[T],
    sin: &[T],
    inverse: bool,
) -> Vec<T> {
    let half = head_dim / 2;
    let mut out = vec![T::zero(); n * d];
    for r in 0..n {
        for h in 0..d / head_dim {
            for i in 0..half {
                let (c, mut s) = (cos[r * half + i], sin[r * half + i]);
                if inverse {
                    s = -s;
                }
                let a = r * d + h * head_dim + 2 * i;
                let (x0, x1) = (x[a], x[a + 1]);
                out[a] = x0 * c - x1 * s;
                out[a + 1] = x0 * s + x1 * c;
            }
        }
    }
    out
}
