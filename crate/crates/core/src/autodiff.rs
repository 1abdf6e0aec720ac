//! Reverse-mode automatic differentiation over flat f64 tensors.
//!
//! A [`Tape`] owns every tensor created during one forward pass. Operations
//! append nodes in topological order and record what they need for the
//! backward pass; [`Tape::backward`] replays the record in reverse, so each
//! operation is visited exactly once and fan-out gradients accumulate
//! additively. Tensors are immutable after creation except for their
//! gradient buffers, and a tape is confined to a single thread.
//!
//! All storage is row-major. The only broadcasting supported is bias
//! addition along the last axis ([`Tape::add_bias`]), which keeps every
//! backward rule auditable.

use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::{Error, Result};

/// Handle to a tensor on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Transpose { a: TensorId },
    Reshape { a: TensorId },
    ConcatCols { parts: Vec<TensorId> },
    SliceCols { a: TensorId, start: usize },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddBias { a: TensorId, bias: TensorId },
    Affine { a: TensorId, scale: f64 },
    Clamp { a: TensorId, lo: f64, hi: f64 },
    Relu { a: TensorId },
    Sigmoid { a: TensorId },
    Ln { a: TensorId },
    Softmax { a: TensorId, axis: usize },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, inv_std: Vec<f64> },
    Dropout { a: TensorId, mask: Vec<f64> },
    MeanAxis { a: TensorId, axis: usize },
    SumAll { a: TensorId },
    MeanAll { a: TensorId },
}

/// Wengert tape: arena of tensors plus the operation record.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { shape, data, requires_grad, op });
        self.grads.push(None);
        id
    }

    fn rg(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ── Leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if shape.iter().any(|&d| d == 0) || shape.is_empty() {
            return Err(Error::Shape(format!("leaf shape {shape:?} has zero or no dimensions")));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "leaf shape {shape:?} implies {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    pub fn leaf_matrix(&mut self, m: &Matrix, requires_grad: bool) -> TensorId {
        self.push(vec![m.rows(), m.cols()], m.data().to_vec(), requires_grad, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    // ── Accessors ────────────────────────────────────────────────────

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn len(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Scalar value of a [1]-shaped tensor.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.len(id), 1);
        self.nodes[id.0].data[0]
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.rg(id)
    }

    /// Gradient buffer, if the tensor requires grad and backward reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    fn rows_cols(&self, id: TensorId) -> Result<(usize, usize)> {
        match *self.nodes[id.0].shape.as_slice() {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Shape(format!("expected 2-d tensor, got shape {s:?}"))),
        }
    }

    fn same_shape(&self, what: &str, a: TensorId, b: TensorId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    // ── Operations ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.rows_cols(a)?;
        let (kb, n) = self.rows_cols(b)?;
        if ka != kb {
            return Err(Error::Shape(format!("matmul: [{m}, {ka}] x [{kb}, {n}]")));
        }
        let data = mm(&self.nodes[a.0].data, &self.nodes[b.0].data, m, ka, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], data, rg, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.rows_cols(a)?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], data, rg, Op::Transpose { a }))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        if shape.iter().product::<usize>() != self.len(a) {
            return Err(Error::Shape(format!(
                "reshape: {:?} -> {shape:?}",
                self.nodes[a.0].shape
            )));
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.rg(a);
        Ok(self.push(shape, data, rg, Op::Reshape { a }))
    }

    /// Concatenate 2-d tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Param("concat_cols: no inputs".into()));
        }
        let (rows, _) = self.rows_cols(parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rows_cols(p)?;
            if r != rows {
                return Err(Error::Shape(format!(
                    "concat_cols: {:?} vs {:?}",
                    self.nodes[parts[0].0].shape, self.nodes[p.0].shape
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = &self.nodes[p.0].data;
            for i in 0..rows {
                data[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![rows, total], data, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Columns `[start, start+len)` of a 2-d tensor.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.rows_cols(a)?;
        if start + len > c {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) out of [{r}, {c}]",
                start + len
            )));
        }
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * len];
        for i in 0..r {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(vec![r, len], data, rg, Op::SliceCols { a, start }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, data, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, data, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, data, rg, Op::Mul { a, b }))
    }

    /// Broadcast `bias` (length = last dimension) over the leading axes.
    pub fn add_bias(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let d = *self.nodes[a.0].shape.last().unwrap();
        if self.nodes[bias.0].shape != [d] {
            return Err(Error::Shape(format!(
                "add_bias: {:?} with bias {:?}",
                self.nodes[a.0].shape, self.nodes[bias.0].shape
            )));
        }
        let bdata = &self.nodes[bias.0].data;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + bdata[i % d])
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(shape, data, rg, Op::AddBias { a, bias }))
    }

    /// Elementwise `scale * a + shift`.
    pub fn affine(&mut self, a: TensorId, scale: f64, shift: f64) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| scale * x + shift).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push(shape, data, rg, Op::Affine { a, scale })
    }

    /// Elementwise clamp to [lo, hi]; gradient is zero where clamping bites.
    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.clamp(lo, hi)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push(shape, data, rg, Op::Clamp { a, lo, hi })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push(shape, data, rg, Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push(shape, data, rg, Op::Sigmoid { a })
    }

    /// Natural log; the caller is responsible for keeping inputs positive
    /// (the losses clamp first).
    pub fn ln(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.ln()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        self.push(shape, data, rg, Op::Ln { a })
    }

    /// Softmax over `axis`, computed with max-subtraction. Each slice along
    /// the axis sums to 1.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() {
            return Err(Error::Param(format!("softmax axis {axis} invalid for shape {shape:?}")));
        }
        let (rows, cols) = match *shape.as_slice() {
            [n] => (1, n),
            [r, c] => (r, c),
            ref s => return Err(Error::Shape(format!("softmax supports 1-d/2-d, got {s:?}"))),
        };
        // Normalize over columns; transpose bookkeeping handles axis 0.
        let over_cols = shape.len() == 1 || axis == 1;
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        let (nslices, slice_len) = if over_cols { (rows, cols) } else { (cols, rows) };
        for s in 0..nslices {
            let idx = |k: usize| if over_cols { s * cols + k } else { k * cols + s };
            let mut maxv = f64::NEG_INFINITY;
            for k in 0..slice_len {
                maxv = maxv.max(src[idx(k)]);
            }
            let mut sum = 0.0;
            for k in 0..slice_len {
                let e = (src[idx(k)] - maxv).exp();
                data[idx(k)] = e;
                sum += e;
            }
            for k in 0..slice_len {
                data[idx(k)] /= sum;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(shape, data, rg, Op::Softmax { a, axis }))
    }

    /// Per-row layer normalization over the last axis, then affine by
    /// `gain`/`bias`. Variance is the population variance; `eps` goes inside
    /// the square root.
    pub fn layer_norm(&mut self, a: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let shape = self.nodes[a.0].shape.clone();
        let d = *shape.last().unwrap();
        for (name, t) in [("gain", gain), ("bias", bias)] {
            if self.nodes[t.0].shape != [d] {
                return Err(Error::Shape(format!(
                    "layer_norm {name}: {:?} for input {:?}",
                    self.nodes[t.0].shape, shape
                )));
            }
        }
        let rows = self.len(a) / d;
        let src = &self.nodes[a.0].data;
        let g = &self.nodes[gain.0].data;
        let b = &self.nodes[bias.0].data;
        let mut data = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..d {
                data[r * d + k] = (row[k] - mean) * is * g[k] + b[k];
            }
        }
        let rg = self.rg(a) || self.rg(gain) || self.rg(bias);
        Ok(self.push(shape, data, rg, Op::LayerNorm { a, gain, bias, inv_std }))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by 1/(1-p). In eval mode the
    /// input tensor is returned unchanged.
    pub fn dropout(&mut self, a: TensorId, p: f64, training: bool, rng: &mut Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.len(a))
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = self.nodes[a.0].data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(a);
        Ok(self.push(shape, data, rg, Op::Dropout { a, mask }))
    }

    /// Mean over one axis of a 2-d tensor; axis 0 averages rows away.
    pub fn mean_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let (r, c) = self.rows_cols(a)?;
        if axis > 1 {
            return Err(Error::Param(format!("mean_axis axis {axis} invalid for 2-d")));
        }
        let src = &self.nodes[a.0].data;
        let data = if axis == 0 {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    out[j] += src[i * c + j];
                }
            }
            out.iter_mut().for_each(|v| *v /= r as f64);
            out
        } else {
            let mut out = vec![0.0; r];
            for i in 0..r {
                out[i] = src[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64;
            }
            out
        };
        let n = if axis == 0 { c } else { r };
        let rg = self.rg(a);
        Ok(self.push(vec![n], data, rg, Op::MeanAxis { a, axis }))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s = self.nodes[a.0].data.iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], rg, Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let n = self.len(a) as f64;
        let s = self.nodes[a.0].data.iter().sum::<f64>() / n;
        let rg = self.rg(a);
        self.push(vec![1], vec![s], rg, Op::MeanAll { a })
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Populates gradient buffers for every
    /// tensor with `requires_grad` reachable from `loss`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.len(loss) != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.rg(loss) {
            return Err(Error::Autodiff(
                "loss does not depend on any tensor with requires_grad".into(),
            ));
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i);
        }
        Ok(())
    }

    fn backward_node(&mut self, out: usize) {
        let Tape { nodes, grads } = self;
        let (lo, hi) = grads.split_at_mut(out);
        let dout = hi[0].as_deref().expect("checked by caller");
        let node = &nodes[out];

        let accum = |lo: &mut [Option<Vec<f64>>], id: TensorId, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[id.0].requires_grad {
                return;
            }
            let buf = lo[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].data.len()]);
            f(buf);
        };

        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if nodes[a.0].requires_grad {
                    let da = mm_nt(dout, &nodes[b.0].data, m, n, k);
                    accum(lo, *a, &mut |g| add_into(g, &da));
                }
                if nodes[b.0].requires_grad {
                    let db = mm_tn(&nodes[a.0].data, dout, m, k, n);
                    accum(lo, *b, &mut |g| add_into(g, &db));
                }
            }
            Op::Transpose { a } => {
                let (c, r) = (node.shape[0], node.shape[1]);
                accum(lo, *a, &mut |g| {
                    for i in 0..c {
                        for j in 0..r {
                            g[j * c + i] += dout[i * r + j];
                        }
                    }
                });
            }
            Op::Reshape { a } => accum(lo, *a, &mut |g| add_into(g, dout)),
            Op::ConcatCols { parts } => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut off = 0;
                for &p in parts {
                    let w = nodes[p.0].shape[1];
                    accum(lo, p, &mut |g| {
                        for i in 0..rows {
                            for j in 0..w {
                                g[i * w + j] += dout[i * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { a, start } => {
                let (r, len) = (node.shape[0], node.shape[1]);
                let c = nodes[a.0].shape[1];
                let start = *start;
                accum(lo, *a, &mut |g| {
                    for i in 0..r {
                        for j in 0..len {
                            g[i * c + start + j] += dout[i * len + j];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                accum(lo, *a, &mut |g| add_into(g, dout));
                accum(lo, *b, &mut |g| add_into(g, dout));
            }
            Op::Sub { a, b } => {
                accum(lo, *a, &mut |g| add_into(g, dout));
                accum(lo, *b, &mut |g| {
                    for (gi, d) in g.iter_mut().zip(dout) {
                        *gi -= d;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
                accum(lo, *a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * bv[i];
                    }
                });
                accum(lo, *b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * av[i];
                    }
                });
            }
            Op::AddBias { a, bias } => {
                let d = nodes[bias.0].data.len();
                accum(lo, *a, &mut |g| add_into(g, dout));
                accum(lo, *bias, &mut |g| {
                    for (i, dv) in dout.iter().enumerate() {
                        g[i % d] += dv;
                    }
                });
            }
            Op::Affine { a, scale } => {
                let s = *scale;
                accum(lo, *a, &mut |g| {
                    for (gi, d) in g.iter_mut().zip(dout) {
                        *gi += s * d;
                    }
                });
            }
            Op::Clamp { a, lo: l, hi: h } => {
                let (l, h) = (*l, *h);
                let av = &nodes[a.0].data;
                accum(lo, *a, &mut |g| {
                    for i in 0..g.len() {
                        if av[i] > l && av[i] < h {
                            g[i] += dout[i];
                        }
                    }
                });
            }
            Op::Relu { a } => {
                let av = &nodes[a.0].data;
                accum(lo, *a, &mut |g| {
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            g[i] += dout[i];
                        }
                    }
                });
            }
            Op::Sigmoid { a } => {
                let yv = &node.data;
                accum(lo, *a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * yv[i] * (1.0 - yv[i]);
                    }
                });
            }
            Op::Ln { a } => {
                let av = &nodes[a.0].data;
                accum(lo, *a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] / av[i];
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let y = &node.data;
                let (rows, cols) = match *node.shape.as_slice() {
                    [n] => (1, n),
                    [r, c] => (r, c),
                    _ => unreachable!(),
                };
                let over_cols = node.shape.len() == 1 || *axis == 1;
                let (nslices, slice_len) = if over_cols { (rows, cols) } else { (cols, rows) };
                accum(lo, *a, &mut |g| {
                    for s in 0..nslices {
                        let idx = |k: usize| if over_cols { s * cols + k } else { k * cols + s };
                        let mut dot = 0.0;
                        for k in 0..slice_len {
                            dot += dout[idx(k)] * y[idx(k)];
                        }
                        for k in 0..slice_len {
                            g[idx(k)] += y[idx(k)] * (dout[idx(k)] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { a, gain, bias, inv_std } => {
                let d = *node.shape.last().unwrap();
                let rows = node.data.len() / d;
                let src = &nodes[a.0].data;
                let g_ = &nodes[gain.0].data;
                // x_hat recomputed from input and saved inverse std.
                let xhat = |r: usize, k: usize| {
                    let row = &src[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    (row[k] - mean) * inv_std[r]
                };
                accum(lo, *a, &mut |g| {
                    for r in 0..rows {
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for k in 0..d {
                            let dy = dout[r * d + k] * g_[k];
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat(r, k);
                        }
                        for k in 0..d {
                            let dy = dout[r * d + k] * g_[k];
                            g[r * d + k] += inv_std[r]
                                * (dy - sum_dy / d as f64 - xhat(r, k) * sum_dy_xhat / d as f64);
                        }
                    }
                });
                accum(lo, *gain, &mut |g| {
                    for r in 0..rows {
                        for k in 0..d {
                            g[k] += dout[r * d + k] * xhat(r, k);
                        }
                    }
                });
                accum(lo, *bias, &mut |g| {
                    for r in 0..rows {
                        for k in 0..d {
                            g[k] += dout[r * d + k];
                        }
                    }
                });
            }
            Op::Dropout { a, mask } => {
                accum(lo, *a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * mask[i];
                    }
                });
            }
            Op::MeanAxis { a, axis } => {
                let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                if *axis == 0 {
                    accum(lo, *a, &mut |g| {
                        for i in 0..r {
                            for j in 0..c {
                                g[i * c + j] += dout[j] / r as f64;
                            }
                        }
                    });
                } else {
                    accum(lo, *a, &mut |g| {
                        for i in 0..r {
                            for j in 0..c {
                                g[i * c + j] += dout[i] / c as f64;
                            }
                        }
                    });
                }
            }
            Op::SumAll { a } => {
                accum(lo, *a, &mut |g| {
                    for gi in g.iter_mut() {
                        *gi += dout[0];
                    }
                });
            }
            Op::MeanAll { a } => {
                let n = nodes[a.0].data.len() as f64;
                accum(lo, *a, &mut |g| {
                    for gi in g.iter_mut() {
                        *gi += dout[0] / n;
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// C = A[m×k] · B[k×n].
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// C = A[m×k] · B[n×k]ᵀ.
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C = A[k×m]ᵀ · B[k×n].
fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += api * brow[j];
            }
        }
    }
    c
}
