use std::collections::HashMap;

use super::gemm::{gemm, MatLayout};
use super::{softmax_rows, Gradients, ParamStore, Tensor};
use crate::ctc;
use crate::error::{Error, Result};

/// Additive mask value used in place of negative infinity.
pub const MASK_VALUE: f64 = -1e30;

const LN_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Which key positions a query may attend to.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttentionMask {
    /// `false` entries are padded keys that receive no attention.
    pub key_valid: Option<Vec<bool>>,
    /// Query `t` may only see keys `<= t`.
    pub causal: bool,
}

impl AttentionMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn keys(valid: &[bool]) -> Self {
        Self {
            key_valid: Some(valid.to_vec()),
            causal: false,
        }
    }

    pub fn causal() -> Self {
        Self {
            key_valid: None,
            causal: true,
        }
    }

    fn blocked(&self, t: usize, s: usize) -> bool {
        (self.causal && s > t) || self.key_valid.as_ref().is_some_and(|v| !v[s])
    }
}

enum Op {
    Const,
    Param(String),
    MatMul { a: Var, b: Var, trans_b: bool },
    AddRow { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Affine { x: Var, scale: f64 },
    Relu { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    SliceCols { x: Var, start: usize },
    Unfold { x: Var, kernel: usize, stride: usize, pad: usize },
    Gather { x: Var, index: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: f64, probs: Vec<f64> },
    RowMask { x: Var, keep: Vec<bool> },
    SegmentPool { states: Var, blank: Option<Var>, spans: Vec<(usize, usize)>, mu: f64, weights: Vec<f64> },
    SoftCrossEntropy { logits: Var, targets: Vec<f64>, probs: Vec<f64> },
    Ctc { logprobs: Var, occupancy: Vec<f64> },
    Sum { x: Var },
    LinComb { terms: Vec<(Var, f64)> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of one forward computation.
///
/// Parameters are copied in on first use and cached by name, so a graph
/// never holds a borrow of the [`ParamStore`] it reads.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    track_params: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph whose parameters require gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            track_params: true,
        }
    }

    /// Graph used only for evaluation; nothing requires gradients.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by node values, the graph's working-set size.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len() * 8).sum()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers (or reuses) the named parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.require(name)?.clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(name.to_string()),
            requires_grad: self.track_params,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    /// `a · b`, or `a · bᵀ` when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        let lb = if trans_b { MatLayout::rm_t(k) } else { MatLayout::rm(n) };
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            MatLayout::rm(k),
            self.value(b).data(),
            lb,
            0.0,
            &mut out,
            MatLayout::rm(n),
        );
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `[m × n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_row")?;
        if self.value(bias).len() != n {
            return Err(Error::dim("add_row", self.shape(x), self.shape(bias)));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data();
        for row in value.data_mut().chunks_mut(n) {
            for (r, bv) in row.iter_mut().zip(b) {
                *r += bv;
            }
        }
        Ok(self.push(value, Op::AddRow { x, bias }, &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x += y;
        }
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            *v = scale * *v + shift;
        }
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(value, Op::Relu { x }, &[x])
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "softmax")?;
        let mut value = self.value(x).clone();
        softmax_rows(self.value(x).data(), n, value.data_mut());
        Ok(self.push(value, Op::Softmax { x }, &[x]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "log_softmax")?;
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n) {
            let lse = super::log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(value, Op::LogSoftmax { x }, &[x]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start + len > n {
            return Err(Error::dim("slice_cols", self.shape(x), &[start, len]));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let value = Tensor::matrix(m, len, out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Frame windows for a 1-D convolution: output row `t` concatenates input
    /// rows `t*stride - pad .. t*stride - pad + kernel`, zero outside range.
    pub fn unfold(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (t, c) = self.dims2(x, "unfold")?;
        if t + 2 * pad < kernel || stride == 0 {
            return Err(Error::dim("unfold", self.shape(x), &[kernel, stride]));
        }
        let out_len = (t + 2 * pad - kernel) / stride + 1;
        let xv = self.value(x).data();
        let mut out = vec![0.0; out_len * kernel * c];
        for o in 0..out_len {
            for j in 0..kernel {
                let src = (o * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    let s = src as usize;
                    out[(o * kernel + j) * c..(o * kernel + j + 1) * c]
                        .copy_from_slice(&xv[s * c..(s + 1) * c]);
                }
            }
        }
        let value = Tensor::matrix(out_len, kernel * c, out)?;
        Ok(self.push(
            value,
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            },
            &[x],
        ))
    }

    /// Row lookup (embedding).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::InvalidInput(format!(
                "row index {bad} out of range for table with {m} rows"
            )));
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index {
            out.extend_from_slice(&xv[i * n..(i + 1) * n]);
        }
        let value = Tensor::matrix(index.len(), n, out)?;
        Ok(self.push(
            value,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        ))
    }

    /// Scaled dot-product attention over `heads` column blocks.
    /// `q` is `[T × d]`, `k` and `v` are `[S × d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: &AttentionMask) -> Result<Var> {
        let (t, d) = self.dims2(q, "attention")?;
        let (s, dk) = self.dims2(k, "attention")?;
        if dk != d || self.shape(v) != [s, d] {
            return Err(Error::dim("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model dimension {d} is not divisible by {heads} heads"
            )));
        }
        if let Some(kv) = &mask.key_valid {
            if kv.len() != s {
                return Err(Error::dim("attention mask", &[kv.len()], &[s]));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();
        let mut probs = vec![0.0; heads * t * s];
        let mut out = vec![0.0; t * d];
        let mut scores = vec![0.0; t * s];
        for h in 0..heads {
            let off = h * dh;
            gemm(
                t,
                dh,
                s,
                scale,
                qv,
                MatLayout::rm(d).at(off),
                kv,
                MatLayout::rm_t(d).at(off),
                0.0,
                &mut scores,
                MatLayout::rm(s),
            );
            for i in 0..t {
                for j in 0..s {
                    if mask.blocked(i, j) {
                        scores[i * s + j] += MASK_VALUE;
                    }
                }
            }
            let p = &mut probs[h * t * s..(h + 1) * t * s];
            softmax_rows(&scores, s, p);
            gemm(
                t,
                s,
                dh,
                1.0,
                p,
                MatLayout::rm(s),
                vv,
                MatLayout::rm(d).at(off),
                0.0,
                &mut out,
                MatLayout::rm(d).at(off),
            );
        }
        let value = Tensor::matrix(t, d, out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Attention probabilities recorded by an attention node, averaged over
    /// heads: `[T × S]`.
    pub fn attention_map(&self, v: Var) -> Option<Tensor> {
        match &self.nodes[v.0].op {
            Op::Attention { heads, probs, k, .. } => {
                let t = self.value(v).rows();
                let s = self.value(*k).rows();
                let mut avg = vec![0.0; t * s];
                for h in 0..*heads {
                    for (a, p) in avg.iter_mut().zip(&probs[h * t * s..(h + 1) * t * s]) {
                        *a += p;
                    }
                }
                for a in &mut avg {
                    *a /= *heads as f64;
                }
                Tensor::matrix(t, s, avg).ok()
            }
            _ => None,
        }
    }

    /// Zeroes rows where `keep` is false.
    pub fn row_mask(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (m, n) = self.dims2(x, "row_mask")?;
        if keep.len() != m {
            return Err(Error::dim("row_mask", self.shape(x), &[keep.len()]));
        }
        let mut value = self.value(x).clone();
        for (row, &k) in value.data_mut().chunks_mut(n).zip(keep) {
            if !k {
                row.fill(0.0);
            }
        }
        Ok(self.push(
            value,
            Op::RowMask {
                x,
                keep: keep.to_vec(),
            },
            &[x],
        ))
    }

    /// Pools each inclusive span of `states` rows into one row.
    ///
    /// With `blank = Some(p)` (a `[T × 1]` column of blank probabilities) the
    /// weights inside a span are `softmax(mu * (1 - p))`; with `None` every
    /// span is an unweighted mean.
    pub fn segment_pool(
        &mut self,
        states: Var,
        blank: Option<Var>,
        spans: &[(usize, usize)],
        mu: f64,
    ) -> Result<Var> {
        let (t, d) = self.dims2(states, "segment_pool")?;
        let blank_probs = match blank {
            Some(b) => {
                if self.value(b).len() != t {
                    return Err(Error::dim("segment_pool", self.shape(states), self.shape(b)));
                }
                Some(self.value(b).data().to_vec())
            }
            None => None,
        };
        let weights = crate::shrink::pool_weights(spans, t, blank_probs.as_deref(), mu)?;
        let sv = self.value(states).data();
        let mut out = vec![0.0; spans.len() * d];
        for (k, &(a, b)) in spans.iter().enumerate() {
            let o = &mut out[k * d..(k + 1) * d];
            for f in a..=b {
                let w = weights[f];
                for (ov, x) in o.iter_mut().zip(&sv[f * d..(f + 1) * d]) {
                    *ov += w * x;
                }
            }
        }
        let value = Tensor::matrix(spans.len(), d, out)?;
        let mut inputs = vec![states];
        inputs.extend(blank);
        Ok(self.push(
            value,
            Op::SegmentPool {
                states,
                blank,
                spans: spans.to_vec(),
                mu,
                weights,
            },
            &inputs,
        ))
    }

    /// `-Σ_t Σ_i target[t,i] · log_softmax(logits)[t,i]` as a scalar.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let (m, n) = self.dims2(logits, "soft_cross_entropy")?;
        if targets.shape() != [m, n] {
            return Err(Error::dim("soft_cross_entropy", self.shape(logits), targets.shape()));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for i in 0..m {
            let row = &lv[i * n..(i + 1) * n];
            let lse = super::log_sum_exp(row);
            for j in 0..n {
                let lp = row[j] - lse;
                probs[i * n + j] = lp.exp();
                let tg = targets.data()[i * n + j];
                if tg != 0.0 {
                    loss -= tg * lp;
                }
            }
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftCrossEntropy {
                logits,
                targets: targets.data().to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// CTC negative log-likelihood of `target` given per-frame log
    /// probabilities `[T × (|V|+1)]` with the blank in the last column.
    pub fn ctc_loss(&mut self, logprobs: Var, target: &[usize]) -> Result<Var> {
        let (t, c) = self.dims2(logprobs, "ctc_loss")?;
        let (loss, occupancy) = ctc::forward_backward(self.value(logprobs).data(), t, c, target)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Ctc {
                logprobs,
                occupancy,
            },
            &[logprobs],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// `Σ c_i · x_i` over same-shaped inputs, accumulated in order.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidInput("empty linear combination".into()))?;
        let shape = self.shape(first.0).to_vec();
        let mut out = vec![0.0; self.value(first.0).len()];
        for &(v, c) in terms {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::dim("lin_comb", &shape, self.shape(v)));
            }
            for (o, x) in out.iter_mut().zip(self.value(v).data()) {
                *o += c * x;
            }
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LinComb {
                terms: terms.to_vec(),
            },
            &inputs,
        ))
    }

    /// Reverse pass from a scalar node; returns gradients of every
    /// parameter that influenced it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidInput("backward needs a scalar loss".into()));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::new();

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &dy, &mut grads, &mut out)?;
        }
        if !out.is_finite() {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        dy: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<()> {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(g);
        };

        match &node.op {
            Op::Const => {}
            Op::Param(name) => out.accumulate(name, dy),
            Op::MatMul { a, b, trans_b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = node.value.cols();
                if *trans_b {
                    // C = A Bᵀ with B: [n × k]
                    acc(*a, &mut |ga| {
                        gemm(m, n, k, 1.0, dy, MatLayout::rm(n), bv, MatLayout::rm(k), 1.0, ga, MatLayout::rm(k))
                    });
                    acc(*b, &mut |gb| {
                        gemm(n, m, k, 1.0, dy, MatLayout::rm_t(n), av, MatLayout::rm(k), 1.0, gb, MatLayout::rm(k))
                    });
                } else {
                    acc(*a, &mut |ga| {
                        gemm(m, n, k, 1.0, dy, MatLayout::rm(n), bv, MatLayout::rm_t(n), 1.0, ga, MatLayout::rm(k))
                    });
                    acc(*b, &mut |gb| {
                        gemm(k, m, n, 1.0, av, MatLayout::rm_t(k), dy, MatLayout::rm(n), 1.0, gb, MatLayout::rm(n))
                    });
                }
            }
            Op::AddRow { x, bias } => {
                let n = node.value.cols();
                acc(*x, &mut |g| add_into(g, dy));
                acc(*bias, &mut |g| {
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |g| add_into(g, dy));
                acc(*b, &mut |g| add_into(g, dy));
            }
            Op::Affine { x, scale } => acc(*x, &mut |g| {
                for (gi, d) in g.iter_mut().zip(dy) {
                    *gi += scale * d;
                }
            }),
            Op::Relu { x } => {
                let yv = node.value.data();
                acc(*x, &mut |g| {
                    for ((gi, d), y) in g.iter_mut().zip(dy).zip(yv) {
                        if *y > 0.0 {
                            *gi += d;
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = node.value.cols();
                let gv = self.value(*gain).data();
                acc(*x, &mut |g| {
                    for (i, r) in rstd.iter().enumerate() {
                        let dyr = &dy[i * n..(i + 1) * n];
                        let xh = &xhat[i * n..(i + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let dxh = dyr[j] * gv[j];
                            mean_d += dxh;
                            mean_dx += dxh * xh[j];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for j in 0..n {
                            let dxh = dyr[j] * gv[j];
                            g[i * n + j] += r * (dxh - mean_d - xh[j] * mean_dx);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (drow, xrow) in dy.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            g[j] += drow[j] * xrow[j];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Softmax { x } => {
                let n = node.value.cols();
                let yv = node.value.data();
                acc(*x, &mut |g| {
                    for ((grow, drow), yrow) in g.chunks_mut(n).zip(dy.chunks(n)).zip(yv.chunks(n)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            grow[j] += yrow[j] * (drow[j] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax { x } => {
                let n = node.value.cols();
                let yv = node.value.data();
                acc(*x, &mut |g| {
                    for ((grow, drow), yrow) in g.chunks_mut(n).zip(dy.chunks(n)).zip(yv.chunks(n)) {
                        let total: f64 = drow.iter().sum();
                        for j in 0..n {
                            grow[j] += drow[j] - yrow[j].exp() * total;
                        }
                    }
                })
            }
            Op::SliceCols { x, start } => {
                let len = node.value.cols();
                let n = self.value(*x).cols();
                acc(*x, &mut |g| {
                    for (i, drow) in dy.chunks(len).enumerate() {
                        add_into(&mut g[i * n + start..i * n + start + len], drow);
                    }
                })
            }
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            } => {
                let t = self.value(*x).rows();
                let c = self.value(*x).cols();
                let out_len = node.value.rows();
                acc(*x, &mut |g| {
                    for o in 0..out_len {
                        for j in 0..*kernel {
                            let src = (o * stride + j) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let s = src as usize;
                                add_into(
                                    &mut g[s * c..(s + 1) * c],
                                    &dy[(o * kernel + j) * c..(o * kernel + j + 1) * c],
                                );
                            }
                        }
                    }
                })
            }
            Op::Gather { x, index } => {
                let n = node.value.cols();
                acc(*x, &mut |g| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut g[i * n..(i + 1) * n], &dy[r * n..(r + 1) * n]);
                    }
                })
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                scale,
                probs,
            } => {
                let (t, d) = (node.value.rows(), node.value.cols());
                let s = self.value(*k).rows();
                let dh = d / heads;
                let qv = self.value(*q).data();
                let kv = self.value(*k).data();
                let vv = self.value(*v).data();
                let mut dq = vec![0.0; t * d];
                let mut dk = vec![0.0; s * d];
                let mut dv = vec![0.0; s * d];
                let mut dp = vec![0.0; t * s];
                for h in 0..*heads {
                    let off = h * dh;
                    let p = &probs[h * t * s..(h + 1) * t * s];
                    gemm(t, dh, s, 1.0, dy, MatLayout::rm(d).at(off), vv, MatLayout::rm_t(d).at(off), 0.0, &mut dp, MatLayout::rm(s));
                    gemm(s, t, dh, 1.0, p, MatLayout::rm_t(s), dy, MatLayout::rm(d).at(off), 1.0, &mut dv, MatLayout::rm(d).at(off));
                    for i in 0..t {
                        let prow = &p[i * s..(i + 1) * s];
                        let drow = &mut dp[i * s..(i + 1) * s];
                        let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                        for j in 0..s {
                            drow[j] = prow[j] * (drow[j] - dot);
                        }
                    }
                    gemm(t, s, dh, *scale, &dp, MatLayout::rm(s), kv, MatLayout::rm(d).at(off), 1.0, &mut dq, MatLayout::rm(d).at(off));
                    gemm(s, t, dh, *scale, &dp, MatLayout::rm_t(s), qv, MatLayout::rm(d).at(off), 1.0, &mut dk, MatLayout::rm(d).at(off));
                }
                acc(*q, &mut |g| add_into(g, &dq));
                acc(*k, &mut |g| add_into(g, &dk));
                acc(*v, &mut |g| add_into(g, &dv));
            }
            Op::RowMask { x, keep } => {
                let n = node.value.cols();
                acc(*x, &mut |g| {
                    for ((grow, drow), &k) in g.chunks_mut(n).zip(dy.chunks(n)).zip(keep) {
                        if k {
                            add_into(grow, drow);
                        }
                    }
                })
            }
            Op::SegmentPool {
                states,
                blank,
                spans,
                mu,
                weights,
            } => {
                let d = node.value.cols();
                let sv = self.value(*states).data();
                acc(*states, &mut |g| {
                    for (k, &(a, b)) in spans.iter().enumerate() {
                        let drow = &dy[k * d..(k + 1) * d];
                        for f in a..=b {
                            for (gi, dv) in g[f * d..(f + 1) * d].iter_mut().zip(drow) {
                                *gi += weights[f] * dv;
                            }
                        }
                    }
                });
                if let Some(bk) = blank {
                    acc(*bk, &mut |g| {
                        for (k, &(a, b)) in spans.iter().enumerate() {
                            let drow = &dy[k * d..(k + 1) * d];
                            let dw: Vec<f64> = (a..=b)
                                .map(|f| sv[f * d..(f + 1) * d].iter().zip(drow).map(|(x, y)| x * y).sum())
                                .collect();
                            let mean: f64 = (a..=b).zip(&dw).map(|(f, w)| weights[f] * w).sum();
                            for (f, w) in (a..=b).zip(&dw) {
                                let dz = weights[f] * (w - mean);
                                g[f] -= mu * dz;
                            }
                        }
                    });
                }
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = self.value(*logits).cols();
                let scale = dy[0];
                acc(*logits, &mut |g| {
                    for ((grow, trow), prow) in g.chunks_mut(n).zip(targets.chunks(n)).zip(probs.chunks(n)) {
                        let mass: f64 = trow.iter().sum();
                        for j in 0..n {
                            grow[j] += scale * (prow[j] * mass - trow[j]);
                        }
                    }
                })
            }
            Op::Ctc {
                logprobs,
                occupancy,
            } => {
                let scale = dy[0];
                acc(*logprobs, &mut |g| {
                    for (gi, o) in g.iter_mut().zip(occupancy) {
                        *gi -= scale * o;
                    }
                })
            }
            Op::Sum { x } => {
                let d = dy[0];
                acc(*x, &mut |g| {
                    for gi in g.iter_mut() {
                        *gi += d;
                    }
                })
            }
            Op::LinComb { terms } => {
                for &(v, c) in terms {
                    acc(v, &mut |g| {
                        for (gi, d) in g.iter_mut().zip(dy) {
                            *gi += c * d;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
