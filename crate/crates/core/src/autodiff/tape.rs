use std::mem;

use matrixmultiply::dgemm;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`]. Plain index; cheap to copy, only
/// meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Add { a: Var, b: Var },
    AddBias { a: Var, b: Var },
    AddChannelBias { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { a: Var, mul: f64 },
    ConcatCols { parts: Vec<Var> },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Reshape { a: Var },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Relu { a: Var },
    ClampMin { a: Var, floor: f64 },
    Softmax { a: Var },
    Log { a: Var },
    Exp { a: Var },
    LayerNorm { a: Var, gain: Var, bias: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Dropout { a: Var, mask: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize>, smoothing: f64, scored: usize },
    Sum { a: Var },
    Mean { a: Var },
    Conv2d { input: Var, kernel: Var, patches: Vec<f64>, geom: ConvGeom },
    FlattenTime { a: Var },
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
}

fn ensure_grad(node: &mut Node) {
    if node.grad.is_empty() {
        node.grad = vec![0.0; node.value.len()];
    }
}

/// Borrow two distinct nodes mutably.
fn two(nodes: &mut [Node], a: usize, b: usize) -> (&mut Node, &mut Node) {
    debug_assert_ne!(a, b);
    if a < b {
        let (l, r) = nodes.split_at_mut(b);
        (&mut l[a], &mut r[0])
    } else {
        let (l, r) = nodes.split_at_mut(a);
        (&mut r[0], &mut l[b])
    }
}

/// Reverse-mode computation tape.
///
/// Every operation records a node whose parents always carry smaller
/// indices, so the graph is acyclic by construction and one descending
/// sweep in [`Tape::backward`] visits each node's reverse rule exactly
/// once. Gradients accumulate across `backward` calls until
/// [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input node. Whether it acts as a trainable parameter or a
    /// constant is decided by whoever holds the returned handle.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// Accumulated gradient of `v`; empty slice when the node was never
    /// reached by a backward pass.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.clear();
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, grad: Vec::new(), op });
        Var(self.nodes.len() - 1)
    }

    fn want_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<()> {
        if self.shape(v).len() != rank {
            return Err(Error::shape(
                op,
                format!("expected rank {}, got shape {:?}", rank, self.shape(v)),
            ));
        }
        Ok(())
    }

    /// `a (m x k) . b (k x n)`, dense f64 GEMM.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.want_rank("matmul", a, 2)?;
        self.want_rank("matmul", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {:?} . {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; m * n];
        unsafe {
            dgemm(
                m, k, n, 1.0,
                self.nodes[a.0].value.data.as_ptr(), k as isize, 1,
                self.nodes[b.0].value.data.as_ptr(), n as isize, 1,
                0.0,
                out.as_mut_ptr(), n as isize, 1,
            );
        }
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.want_rank("transpose", a, 2)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        let src = &self.nodes[a.0].value.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::Transpose { a }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }))
    }

    /// `a + b` with the rank-1 bias `b` broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        self.want_rank("add_bias", a, 2)?;
        self.want_rank("add_bias", b, 1)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        if self.shape(b)[0] != n {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} against matrix {:?}", self.shape(b), self.shape(a)),
            ));
        }
        let mut data = self.nodes[a.0].value.data.clone();
        let bias = &self.nodes[b.0].value.data;
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bias[j];
            }
        }
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::AddBias { a, b }))
    }

    /// `a + b` with the rank-1 bias `b` broadcast per channel of the rank-3
    /// `a` (`channels x h x w`).
    pub fn add_channel_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        self.want_rank("add_channel_bias", a, 3)?;
        self.want_rank("add_channel_bias", b, 1)?;
        let (c, hw) = (self.shape(a)[0], self.shape(a)[1] * self.shape(a)[2]);
        if self.shape(b)[0] != c {
            return Err(Error::shape(
                "add_channel_bias",
                format!("bias {:?} against volume {:?}", self.shape(b), self.shape(a)),
            ));
        }
        let mut data = self.nodes[a.0].value.data.clone();
        let bias = &self.nodes[b.0].value.data;
        for ch in 0..c {
            for x in &mut data[ch * hw..(ch + 1) * hw] {
                *x += bias[ch];
            }
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, Op::AddChannelBias { a, b }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }))
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let data = self.nodes[a.0].value.data.iter().map(|x| mul * x + add).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Affine { a, mul })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.affine(a, factor, 0.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Concatenate along the last axis. Rank-2 inputs must agree on rows,
    /// rank-1 inputs are joined end to end.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let rank = self.shape(first).len();
        if rank == 1 {
            let mut data = Vec::new();
            for &p in parts {
                self.want_rank("concat", p, 1)?;
                data.extend_from_slice(&self.nodes[p.0].value.data);
            }
            let len = data.len();
            return Ok(self.push(
                Tensor { shape: vec![len], data },
                Op::ConcatCols { parts: parts.to_vec() },
            ));
        }
        self.want_rank("concat", first, 2)?;
        let rows = self.shape(first)[0];
        let mut total = 0;
        for &p in parts {
            self.want_rank("concat", p, 2)?;
            if self.shape(p)[0] != rows {
                return Err(Error::shape(
                    "concat",
                    format!("row mismatch: {:?} vs {:?}", self.shape(first), self.shape(p)),
                ));
            }
            total += self.shape(p)[1];
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let n = self.shape(p)[1];
            let src = &self.nodes[p.0].value.data;
            for i in 0..rows {
                data[i * total + offset..i * total + offset + n]
                    .copy_from_slice(&src[i * n..(i + 1) * n]);
            }
            offset += n;
        }
        Ok(self.push(
            Tensor { shape: vec![rows, total], data },
            Op::ConcatCols { parts: parts.to_vec() },
        ))
    }

    /// Stack rank-2 tensors along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
        self.want_rank("concat_rows", first, 2)?;
        let cols = self.shape(first)[1];
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            self.want_rank("concat_rows", p, 2)?;
            if self.shape(p)[1] != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column mismatch: {:?} vs {:?}", self.shape(first), self.shape(p)),
                ));
            }
            rows += self.shape(p)[0];
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        Ok(self.push(
            Tensor { shape: vec![rows, cols], data },
            Op::ConcatRows { parts: parts.to_vec() },
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.want_rank("slice_rows", a, 2)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        if start + len > m {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {}..{} out of {}", start, start + len, m),
            ));
        }
        let data = self.nodes[a.0].value.data[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor { shape: vec![len, n], data }, Op::SliceRows { a, start }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.want_rank("slice_cols", a, 2)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        if start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {}..{} out of {}", start, start + len, n),
            ));
        }
        let src = &self.nodes[a.0].value.data;
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(Tensor { shape: vec![m, len], data }, Op::SliceCols { a, start }))
    }

    /// Reinterpret the buffer under a new shape of equal element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let expect: usize = shape.iter().product();
        if expect != self.nodes[a.0].value.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} to {:?}", self.shape(a), shape),
            ));
        }
        let data = self.nodes[a.0].value.data.clone();
        Ok(self.push(Tensor { shape, data }, Op::Reshape { a }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].value.data.iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Tanh { a })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].value.data.iter().map(|x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Relu { a })
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let data = self.nodes[a.0].value.data.iter().map(|x| x.max(floor)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::ClampMin { a, floor })
    }

    /// Row-wise softmax over the last axis of a rank-2 tensor. Rows may
    /// contain `-inf` logits (masked positions) as long as at least one
    /// entry per row is finite.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.want_rank("softmax", a, 2)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        if n == 0 {
            return Err(Error::invalid("softmax", "empty axis"));
        }
        let src = &self.nodes[a.0].value.data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::Softmax { a }))
    }

    /// Natural log; rejects non-positive inputs rather than emitting NaN.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[a.0].value.data.iter().find(|x| **x <= 0.0) {
            return Err(Error::invalid("log", format!("non-positive input {}", bad)));
        }
        let data = self.nodes[a.0].value.data.iter().map(|x| x.ln()).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Log { a }))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].value.data.iter().map(|x| x.exp()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, Op::Exp { a })
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        self.want_rank("layer_norm", a, 2)?;
        self.want_rank("layer_norm", gain, 1)?;
        self.want_rank("layer_norm", bias, 1)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        if self.shape(gain)[0] != n || self.shape(bias)[0] != n {
            return Err(Error::shape(
                "layer_norm",
                format!("gain/bias must have length {}", n),
            ));
        }
        let src = &self.nodes[a.0].value.data;
        let g = &self.nodes[gain.0].value.data;
        let b = &self.nodes[bias.0].value.data;
        let mut normalized = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let xhat = (row[j] - mean) * is;
                normalized[i * n + j] = xhat;
                data[i * n + j] = g[j] * xhat + b[j];
            }
        }
        Ok(self.push(
            Tensor { shape: vec![m, n], data },
            Op::LayerNorm { a, gain, bias, normalized, inv_std },
        ))
    }

    /// Inverted dropout: keep with probability `1 - p` and scale kept
    /// entries by `1/(1-p)`. `p = 0` is the identity and records nothing.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("rate {} outside [0, 1)", p)));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[a.0].value.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Dropout { a, mask }))
    }

    /// Gather rows of `table` by token id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.want_rank("embedding", table, 2)?;
        let (v, d) = (self.shape(table)[0], self.shape(table)[1]);
        if let Some(bad) = ids.iter().find(|id| **id >= v) {
            return Err(Error::invalid(
                "embedding",
                format!("id {} outside table of {} rows", bad, v),
            ));
        }
        let src = &self.nodes[table.0].value.data;
        let mut data = vec![0.0; ids.len() * d];
        for (row, &id) in ids.iter().enumerate() {
            data[row * d..(row + 1) * d].copy_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor { shape: vec![ids.len(), d], data },
            Op::Embedding { table, ids: ids.to_vec() },
        ))
    }

    /// Mean smoothed cross-entropy of `logits` rows against integer
    /// targets. The smoothed target distribution puts `smoothing/V` on
    /// every class plus `1 - smoothing` on the labeled one. Rows whose
    /// target equals `ignore` are excluded from the mean.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        smoothing: f64,
        ignore: Option<usize>,
    ) -> Result<Var> {
        self.want_rank("cross_entropy", logits, 2)?;
        let (m, v) = (self.shape(logits)[0], self.shape(logits)[1]);
        if targets.len() != m {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {} rows", targets.len(), m),
            ));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::invalid("cross_entropy", "smoothing outside [0, 1)"));
        }
        if let Some(bad) = targets.iter().find(|t| **t >= v) {
            return Err(Error::invalid(
                "cross_entropy",
                format!("target id {} outside vocabulary of {}", bad, v),
            ));
        }
        let src = &self.nodes[logits.0].value.data;
        let mut probs = vec![0.0; m * v];
        let mut scored = 0usize;
        let mut total = 0.0;
        let uniform = smoothing / v as f64;
        for (i, &t) in targets.iter().enumerate() {
            if ignore == Some(t) {
                continue;
            }
            scored += 1;
            let row = &src[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[i * v + j] = e;
                sum += e;
            }
            let log_sum = sum.ln() + max;
            let mut loss = 0.0;
            for j in 0..v {
                probs[i * v + j] /= sum;
                let q = uniform + if j == t { 1.0 - smoothing } else { 0.0 };
                if q > 0.0 {
                    loss -= q * (row[j] - log_sum);
                }
            }
            total += loss;
        }
        if scored == 0 {
            return Err(Error::invalid("cross_entropy", "no scored positions"));
        }
        let value = Tensor::scalar(total / scored as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                smoothing,
                scored,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let len = self.nodes[a.0].value.len();
        if len == 0 {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let total: f64 = self.nodes[a.0].value.data.iter().sum();
        Ok(self.push(Tensor::scalar(total / len as f64), Op::Mean { a }))
    }

    /// 2-D convolution of a `cin x h x w` volume with a
    /// `cout x cin x kh x kw` kernel, zero padding `pad`, square stride.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        self.want_rank("conv2d", input, 3)?;
        self.want_rank("conv2d", kernel, 4)?;
        if stride == 0 {
            return Err(Error::invalid("conv2d", "zero stride"));
        }
        let (cin, h, w) = (self.shape(input)[0], self.shape(input)[1], self.shape(input)[2]);
        let ks = self.shape(kernel).to_vec();
        let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
        if ks[1] != cin {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {} input channels, volume has {}", ks[1], cin),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("{}x{} input too small for {}x{} kernel", h, w, kh, kw),
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let ck = cin * kh * kw;
        let src = &self.nodes[input.0].value.data;
        let mut patches = vec![0.0; oh * ow * ck];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for c in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            patches[row * ck + c * kh * kw + ky * kw + kx] =
                                src[c * h * w + iy as usize * w + ix as usize];
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0; cout * oh * ow];
        unsafe {
            // out (cout x oh*ow) = kernel (cout x ck) . patches^T (ck x oh*ow)
            dgemm(
                cout, ck, oh * ow, 1.0,
                self.nodes[kernel.0].value.data.as_ptr(), ck as isize, 1,
                patches.as_ptr(), 1, ck as isize,
                0.0,
                out.as_mut_ptr(), (oh * ow) as isize, 1,
            );
        }
        let geom = ConvGeom { cin, h, w, cout, kh, kw, stride, pad, oh, ow };
        Ok(self.push(
            Tensor { shape: vec![cout, oh, ow], data: out },
            Op::Conv2d { input, kernel, patches, geom },
        ))
    }

    /// Rearrange a `c x t x w` volume into `t` rows of `c*w` features,
    /// channel-major within each row.
    pub fn flatten_time(&mut self, a: Var) -> Result<Var> {
        self.want_rank("flatten_time", a, 3)?;
        let (c, t, w) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
        let src = &self.nodes[a.0].value.data;
        let mut data = vec![0.0; c * t * w];
        for ch in 0..c {
            for frame in 0..t {
                for x in 0..w {
                    data[frame * c * w + ch * w + x] = src[ch * t * w + frame * w + x];
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![t, c * w], data }, Op::FlattenTime { a }))
    }

    /// Propagate gradients from the scalar `loss` to every reachable node,
    /// accumulating on top of whatever previous backward calls left.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::invalid("backward", "unknown variable"))?;
        if !node.value.shape.is_empty() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", node.value.shape),
            ));
        }
        let mut live = vec![false; loss.0 + 1];
        live[loss.0] = true;
        for i in (0..=loss.0).rev() {
            if live[i] {
                mark_parents(&self.nodes[i].op, &mut live);
            }
        }
        // Interior grads are per-call scratch; only leaves accumulate
        // across backward calls.
        for (i, node) in self.nodes.iter_mut().enumerate().take(loss.0 + 1) {
            if live[i] && !matches!(node.op, Op::Leaf) {
                node.grad.clear();
            }
        }
        ensure_grad(&mut self.nodes[loss.0]);
        self.nodes[loss.0].grad[0] += 1.0;
        for i in (0..=loss.0).rev() {
            if live[i] {
                self.step_back(i);
            }
        }
        Ok(())
    }

    fn step_back(&mut self, i: usize) {
        let op = mem::replace(&mut self.nodes[i].op, Op::Leaf);
        {
            let (left, right) = self.nodes.split_at_mut(i);
            let child = &right[0];
            if !child.grad.is_empty() {
                apply_reverse(&op, left, child);
            }
        }
        self.nodes[i].op = op;
    }
}

fn mark_parents(op: &Op, live: &mut [bool]) {
    let mut mark = |v: Var| live[v.0] = true;
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b }
        | Op::Add { a, b }
        | Op::AddBias { a, b }
        | Op::AddChannelBias { a, b }
        | Op::Mul { a, b } => {
            mark(*a);
            mark(*b);
        }
        Op::Transpose { a }
        | Op::Affine { a, .. }
        | Op::SliceRows { a, .. }
        | Op::SliceCols { a, .. }
        | Op::Reshape { a }
        | Op::Sigmoid { a }
        | Op::Tanh { a }
        | Op::Relu { a }
        | Op::ClampMin { a, .. }
        | Op::Softmax { a }
        | Op::Log { a }
        | Op::Exp { a }
        | Op::Dropout { a, .. }
        | Op::Sum { a }
        | Op::Mean { a }
        | Op::FlattenTime { a } => mark(*a),
        Op::ConcatCols { parts } | Op::ConcatRows { parts } => {
            for &p in parts {
                mark(p);
            }
        }
        Op::LayerNorm { a, gain, bias, .. } => {
            mark(*a);
            mark(*gain);
            mark(*bias);
        }
        Op::Embedding { table, .. } => mark(*table),
        Op::CrossEntropy { logits, .. } => mark(*logits),
        Op::Conv2d { input, kernel, .. } => {
            mark(*input);
            mark(*kernel);
        }
    }
}

/// Apply one node's reverse rule: read the child's accumulated gradient and
/// value, accumulate into parent gradients.
fn apply_reverse(op: &Op, left: &mut [Node], child: &Node) {
    let g = &child.grad;
    let y = &child.value.data;
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = (left[a.0].value.rows(), left[a.0].value.cols());
            let n = child.value.cols();
            ensure_grad(&mut left[a.0]);
            ensure_grad(&mut left[b.0]);
            unsafe {
                // da (m x k) += g (m x n) . b^T (n x k)
                let bv = left[b.0].value.data.as_ptr();
                let da = left[a.0].grad.as_mut_ptr();
                dgemm(m, n, k, 1.0, g.as_ptr(), n as isize, 1, bv, 1, n as isize, 1.0, da, k as isize, 1);
                // db (k x n) += a^T (k x m) . g (m x n)
                let av = left[a.0].value.data.as_ptr();
                let db = left[b.0].grad.as_mut_ptr();
                dgemm(k, m, n, 1.0, av, 1, k as isize, g.as_ptr(), n as isize, 1, 1.0, db, n as isize, 1);
            }
        }
        Op::Transpose { a } => {
            let (n, m) = (child.value.rows(), child.value.cols());
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for i in 0..n {
                for j in 0..m {
                    pa.grad[j * n + i] += g[i * m + j];
                }
            }
        }
        Op::Add { a, b } => {
            accumulate(&mut left[a.0], g);
            accumulate(&mut left[b.0], g);
        }
        Op::AddBias { a, b } => {
            accumulate(&mut left[a.0], g);
            let n = left[b.0].value.len();
            let pb = &mut left[b.0];
            ensure_grad(pb);
            for (idx, gv) in g.iter().enumerate() {
                pb.grad[idx % n] += gv;
            }
        }
        Op::AddChannelBias { a, b } => {
            accumulate(&mut left[a.0], g);
            let c = left[b.0].value.len();
            let hw = child.value.len() / c;
            let pb = &mut left[b.0];
            ensure_grad(pb);
            for ch in 0..c {
                pb.grad[ch] += g[ch * hw..(ch + 1) * hw].iter().sum::<f64>();
            }
        }
        Op::Mul { a, b } => {
            if a == b {
                let pa = &mut left[a.0];
                ensure_grad(pa);
                for (idx, gv) in g.iter().enumerate() {
                    pa.grad[idx] += 2.0 * gv * pa.value.data[idx];
                }
            } else {
                let (pa, pb) = two(left, a.0, b.0);
                ensure_grad(pa);
                ensure_grad(pb);
                for (idx, gv) in g.iter().enumerate() {
                    pa.grad[idx] += gv * pb.value.data[idx];
                    pb.grad[idx] += gv * pa.value.data[idx];
                }
            }
        }
        Op::Affine { a, mul } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                pa.grad[idx] += mul * gv;
            }
        }
        Op::ConcatCols { parts } => {
            if child.value.rank() == 1 {
                let mut offset = 0;
                for &p in parts {
                    let len = left[p.0].value.len();
                    accumulate_at(&mut left[p.0], &g[offset..offset + len], 0);
                    offset += len;
                }
                return;
            }
            let rows = child.value.rows();
            let total = child.value.cols();
            let mut offset = 0;
            for &p in parts {
                let n = left[p.0].value.cols();
                let pp = &mut left[p.0];
                ensure_grad(pp);
                for i in 0..rows {
                    for j in 0..n {
                        pp.grad[i * n + j] += g[i * total + offset + j];
                    }
                }
                offset += n;
            }
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            for &p in parts {
                let len = left[p.0].value.len();
                accumulate_at(&mut left[p.0], &g[offset..offset + len], 0);
                offset += len;
            }
        }
        Op::SliceRows { a, start } => {
            let n = left[a.0].value.cols();
            accumulate_at(&mut left[a.0], g, start * n);
        }
        Op::SliceCols { a, start } => {
            let n = left[a.0].value.cols();
            let len = child.value.cols();
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for i in 0..child.value.rows() {
                for j in 0..len {
                    pa.grad[i * n + start + j] += g[i * len + j];
                }
            }
        }
        Op::Reshape { a } => accumulate(&mut left[a.0], g),
        Op::Sigmoid { a } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                pa.grad[idx] += gv * y[idx] * (1.0 - y[idx]);
            }
        }
        Op::Tanh { a } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                pa.grad[idx] += gv * (1.0 - y[idx] * y[idx]);
            }
        }
        Op::Relu { a } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                if pa.value.data[idx] > 0.0 {
                    pa.grad[idx] += gv;
                }
            }
        }
        Op::ClampMin { a, floor } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                if pa.value.data[idx] > *floor {
                    pa.grad[idx] += gv;
                }
            }
        }
        Op::Softmax { a } => {
            let (m, n) = (child.value.rows(), child.value.cols());
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for i in 0..m {
                let row_y = &y[i * n..(i + 1) * n];
                let row_g = &g[i * n..(i + 1) * n];
                let dot: f64 = row_y.iter().zip(row_g).map(|(yv, gv)| yv * gv).sum();
                for j in 0..n {
                    pa.grad[i * n + j] += row_y[j] * (row_g[j] - dot);
                }
            }
        }
        Op::Log { a } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                pa.grad[idx] += gv / pa.value.data[idx];
            }
        }
        Op::Exp { a } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                pa.grad[idx] += gv * y[idx];
            }
        }
        Op::LayerNorm { a, gain, bias, normalized, inv_std } => {
            let (m, n) = (child.value.rows(), child.value.cols());
            let gain_vals = left[gain.0].value.data.clone();
            {
                let pg = &mut left[gain.0];
                ensure_grad(pg);
                for i in 0..m {
                    for j in 0..n {
                        pg.grad[j] += g[i * n + j] * normalized[i * n + j];
                    }
                }
            }
            {
                let pb = &mut left[bias.0];
                ensure_grad(pb);
                for (idx, gv) in g.iter().enumerate() {
                    pb.grad[idx % n] += gv;
                }
            }
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for i in 0..m {
                let mut mean_dx = 0.0;
                let mut mean_dx_xhat = 0.0;
                for j in 0..n {
                    let dxhat = g[i * n + j] * gain_vals[j];
                    mean_dx += dxhat;
                    mean_dx_xhat += dxhat * normalized[i * n + j];
                }
                mean_dx /= n as f64;
                mean_dx_xhat /= n as f64;
                for j in 0..n {
                    let dxhat = g[i * n + j] * gain_vals[j];
                    pa.grad[i * n + j] +=
                        inv_std[i] * (dxhat - mean_dx - normalized[i * n + j] * mean_dx_xhat);
                }
            }
        }
        Op::Dropout { a, mask } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for (idx, gv) in g.iter().enumerate() {
                pa.grad[idx] += gv * mask[idx];
            }
        }
        Op::Embedding { table, ids } => {
            let d = left[table.0].value.cols();
            let pt = &mut left[table.0];
            ensure_grad(pt);
            for (row, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    pt.grad[id * d + j] += g[row * d + j];
                }
            }
        }
        Op::CrossEntropy { logits, probs, targets, smoothing, scored } => {
            let v = left[logits.0].value.cols();
            let uniform = smoothing / v as f64;
            let gs = g[0] / *scored as f64;
            let pl = &mut left[logits.0];
            ensure_grad(pl);
            for (i, &t) in targets.iter().enumerate() {
                let row = &probs[i * v..(i + 1) * v];
                if row.iter().all(|p| *p == 0.0) {
                    continue;
                }
                for j in 0..v {
                    let q = uniform + if j == t { 1.0 - smoothing } else { 0.0 };
                    pl.grad[i * v + j] += gs * (row[j] - q);
                }
            }
        }
        Op::Sum { a } => {
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for gr in pa.grad.iter_mut() {
                *gr += g[0];
            }
        }
        Op::Mean { a } => {
            let len = left[a.0].value.len() as f64;
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for gr in pa.grad.iter_mut() {
                *gr += g[0] / len;
            }
        }
        Op::Conv2d { input, kernel, patches, geom } => {
            let ck = geom.cin * geom.kh * geom.kw;
            let ohow = geom.oh * geom.ow;
            ensure_grad(&mut left[kernel.0]);
            unsafe {
                // dkernel (cout x ck) += g (cout x ohow) . patches (ohow x ck)
                let dk = left[kernel.0].grad.as_mut_ptr();
                dgemm(
                    geom.cout, ohow, ck, 1.0,
                    g.as_ptr(), ohow as isize, 1,
                    patches.as_ptr(), ck as isize, 1,
                    1.0,
                    dk, ck as isize, 1,
                );
            }
            let mut dpatches = vec![0.0; ohow * ck];
            unsafe {
                // dpatches (ohow x ck) = g^T (ohow x cout) . kernel (cout x ck)
                dgemm(
                    ohow, geom.cout, ck, 1.0,
                    g.as_ptr(), 1, ohow as isize,
                    left[kernel.0].value.data.as_ptr(), ck as isize, 1,
                    0.0,
                    dpatches.as_mut_ptr(), ck as isize, 1,
                );
            }
            let pi = &mut left[input.0];
            ensure_grad(pi);
            for oy in 0..geom.oh {
                for ox in 0..geom.ow {
                    let row = oy * geom.ow + ox;
                    for c in 0..geom.cin {
                        for ky in 0..geom.kh {
                            for kx in 0..geom.kw {
                                let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= geom.h as isize
                                    || ix >= geom.w as isize
                                {
                                    continue;
                                }
                                pi.grad[c * geom.h * geom.w
                                    + iy as usize * geom.w
                                    + ix as usize] +=
                                    dpatches[row * ck + c * geom.kh * geom.kw + ky * geom.kw + kx];
                            }
                        }
                    }
                }
            }
        }
        Op::FlattenTime { a } => {
            let shape = left[a.0].value.shape.clone();
            let (c, t, w) = (shape[0], shape[1], shape[2]);
            let pa = &mut left[a.0];
            ensure_grad(pa);
            for ch in 0..c {
                for frame in 0..t {
                    for x in 0..w {
                        pa.grad[ch * t * w + frame * w + x] += g[frame * c * w + ch * w + x];
                    }
                }
            }
        }
    }
}

fn accumulate(node: &mut Node, g: &[f64]) {
    accumulate_at(node, g, 0);
}

fn accumulate_at(node: &mut Node, g: &[f64], offset: usize) {
    ensure_grad(node);
    for (dst, src) in node.grad[offset..offset + g.len()].iter_mut().zip(g) {
        *dst += src;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn leaf(tape: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        tape.leaf(Tensor::matrix(rows, cols, data).unwrap())
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data[0], 0.5);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 5, vec![3.0; 5]);
        let y = tape.softmax(x).unwrap();
        for &p in &tape.value(y).data {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = leaf(&mut tape, 2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), &[1.0; 6]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let w = leaf(&mut tape, 2, 2, data.clone());
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        for (g, x) in tape.grad(w).iter().zip(&data) {
            assert!((g - 2.0 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![2.0]));
        let loss = tape.sum(w);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), &[2.0]);
        tape.zero_grad();
        assert!(tape.grad(w).is_empty());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = leaf(&mut tape, 3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = tape.matmul(a, b).unwrap();
        let expect = grf_asr_oracles::matmul_loop(
            &tape.value(a).data.clone(), 2, 3, &tape.value(b).data.clone(), 2,
        );
        assert_eq!(tape.value(c).data, expect);
        assert!(tape.matmul(a, a).is_err());
    }

    #[test]
    fn concat_slice_round_trip() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut tape, 2, 1, vec![5.0, 6.0]);
        let cat = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).data, vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.slice_cols(cat, 0, 2).unwrap();
        assert_eq!(tape.value(back).data, tape.value(a).data);
        let rows = tape.slice_rows(cat, 1, 1).unwrap();
        assert_eq!(tape.value(rows).data, vec![3.0, 4.0, 6.0]);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = tape.leaf(Tensor::vector(vec![1.0; 1000]));
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let kept: Vec<f64> = tape.value(y).data.iter().cloned().filter(|v| *v != 0.0).collect();
        assert!(kept.iter().all(|v| (*v - 2.0).abs() < 1e-15));
        assert!(kept.len() > 400 && kept.len() < 600);
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let mut tape = Tape::new();
        let table = leaf(&mut tape, 3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let e = tape.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(e).data, vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = tape.sum(e);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(table), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(tape.embedding(table, &[3]).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_log_vocab() {
        let mut tape = Tape::new();
        let logits = leaf(&mut tape, 2, 8, vec![0.25; 16]);
        let loss = tape.cross_entropy(logits, &[3, 5], 0.0, None).unwrap();
        assert!((tape.value(loss).item().unwrap() - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_peaked_target_is_near_zero() {
        let mut tape = Tape::new();
        let mut data = vec![0.0; 6];
        data[2] = 50.0;
        let logits = leaf(&mut tape, 1, 6, data);
        let loss = tape.cross_entropy(logits, &[2], 0.0, None).unwrap();
        assert!(tape.value(loss).item().unwrap().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_skips_ignored_rows() {
        let mut tape = Tape::new();
        let logits = leaf(&mut tape, 2, 4, vec![0.0, 9.0, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
        let with_pad = tape.cross_entropy(logits, &[1, 0], 0.0, Some(0)).unwrap();
        let alone = {
            let l = tape.slice_rows(logits, 0, 1).unwrap();
            tape.cross_entropy(l, &[1], 0.0, None).unwrap()
        };
        let a = tape.value(with_pad).item().unwrap();
        let b = tape.value(alone).item().unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        assert!(tape.log(x).is_err());
    }

    #[test]
    fn masked_softmax_zeroes_blocked_positions() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 1, 3, vec![1.0, f64::NEG_INFINITY, 2.0]);
        let y = tape.softmax(x).unwrap();
        let p = &tape.value(y).data;
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conv_output_geometry() {
        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::zeros(vec![1, 8, 6]));
        let kernel = tape.leaf(Tensor::zeros(vec![4, 1, 3, 3]));
        let out = tape.conv2d(input, kernel, 2, 1).unwrap();
        assert_eq!(tape.shape(out), &[4, 4, 3]);
    }

    #[test]
    fn flatten_time_orders_channels_within_frame() {
        let mut tape = Tape::new();
        // 2 channels, 2 frames, 1 column
        let x = tape.leaf(Tensor::new(vec![2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let f = tape.flatten_time(x).unwrap();
        assert_eq!(tape.shape(f), &[2, 2]);
        assert_eq!(tape.value(f).data, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, 2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0]);
        let gain = tape.leaf(Tensor::vector(vec![1.0; 4]));
        let bias = tape.leaf(Tensor::vector(vec![0.0; 4]));
        let y = tape.layer_norm(x, gain, bias).unwrap();
        for row in tape.value(y).data.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
