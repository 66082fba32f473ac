use rand::Rng;

use super::gemm::{gemm, View, ViewMut};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    LeakyRelu {
        x: Var,
        alpha: T,
    },
    Conv1d {
        x: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
    },
    Conv2d {
        x: Var,
        kernels: Var,
        bias: Var,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Dense {
        x: Var,
        weights: Var,
        bias: Var,
    },
    Embedding {
        table: Var,
        indices: Vec<u8>,
    },
    EmbedConv1d {
        table: Var,
        kernels: Var,
        bias: Var,
        indices: Vec<u8>,
        time: usize,
        stride: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracks_grad: bool,
}

/// Append-only computation tape.
///
/// Nodes are created in topological order, so [`Graph::backward`] walks the
/// tape in reverse. A graph is single-owner; build one per batch.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` into (product of leading axes, trailing `tail` axes).
fn split_lead<'a>(shape: &'a [usize], tail: usize, what: &str) -> Result<(usize, &'a [usize])> {
    if shape.len() < tail {
        return Err(Error::Shape(format!(
            "{what} needs at least {tail} axes, got {shape:?}"
        )));
    }
    let (lead, rest) = shape.split_at(shape.len() - tail);
    Ok((lead.iter().product(), rest))
}

fn out_shape(shape: &[usize], tail: usize, new_tail: &[usize]) -> Vec<usize> {
    let mut out = shape[..shape.len() - tail].to_vec();
    out.extend_from_slice(new_tail);
    out
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut probs = vec![T::zero(); logits.len()];
    for (row, out) in logits.chunks(classes).zip(probs.chunks_mut(classes)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o = *o / sum;
        }
    }
    probs
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf; receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracks_grad: bool) -> Var {
        self.nodes.push(Node { value, op, tracks_grad });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracks_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn vals(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.values()
    }

    /// Elementwise `x` for `x >= 0`, `alpha * x` otherwise.
    pub fn leaky_relu(&mut self, x: Var, alpha: T) -> Result<Var> {
        if !(alpha >= T::zero() && alpha < T::one()) {
            return Err(Error::InvalidInput(format!(
                "LeakyReLU slope must lie in [0, 1), got {alpha:?}"
            )));
        }
        let input = self.value(x);
        let values = input
            .values()
            .iter()
            .map(|&v| if v >= T::zero() { v } else { alpha * v })
            .collect();
        let value = Tensor::new(input.shape(), values)?;
        let tracks = self.tracks(&[x]);
        Ok(self.push(value, Op::LeakyRelu { x, alpha }, tracks))
    }

    /// Valid 1-D convolution of `x: [.., time, channels]` with
    /// `kernels: [filters, width, channels]` and `bias: [filters]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        let (lead, tail) = split_lead(self.shape(x), 2, "conv1d input")?;
        let (time, channels) = (tail[0], tail[1]);
        let (filters, width) = self.check_kernels(kernels, bias, channels, 3)?;
        let width = width[0];
        if stride == 0 {
            return Err(Error::InvalidArchitecture("convolution stride must be >= 1".into()));
        }
        if width > time {
            return Err(Error::InvalidArchitecture(format!(
                "kernel width {width} exceeds input length {time}"
            )));
        }
        let out_time = (time - width) / stride + 1;
        let window = width * channels;
        let shape = out_shape(self.shape(x), 2, &[out_time, filters]);
        let mut out = vec![T::zero(); lead * out_time * filters];
        let (xv, kv, bv) = (self.vals(x), self.vals(kernels), self.vals(bias));
        for b in 0..lead {
            let y = &mut out[b * out_time * filters..(b + 1) * out_time * filters];
            for row in y.chunks_mut(filters) {
                row.copy_from_slice(bv);
            }
            gemm(
                out_time,
                window,
                filters,
                T::one(),
                View {
                    data: xv,
                    offset: b * time * channels,
                    row_stride: stride * channels,
                    col_stride: 1,
                },
                View::transposed(kv, window),
                T::one(),
                ViewMut::row_major(y, filters),
            );
        }
        let value = Tensor::new(&shape, out)?;
        let tracks = self.tracks(&[x, kernels, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                kernels,
                bias,
                stride,
            },
            tracks,
        ))
    }

    /// Validates `kernels: [filters, spatial.., channels]` against `bias` and
    /// returns the filter count and spatial extents.
    fn check_kernels(&self, kernels: Var, bias: Var, channels: usize, rank: usize) -> Result<(usize, Vec<usize>)> {
        let ks = self.shape(kernels);
        if ks.len() != rank || ks[rank - 1] != channels {
            return Err(Error::Shape(format!(
                "kernels {ks:?} do not match {channels} input channels"
            )));
        }
        if self.shape(bias) != [ks[0]] {
            return Err(Error::Shape(format!(
                "bias {:?} does not match {} filters",
                self.shape(bias),
                ks[0]
            )));
        }
        Ok((ks[0], ks[1..rank - 1].to_vec()))
    }

    /// Valid stride-1 2-D convolution of `x: [.., height, width, channels]`
    /// with `kernels: [filters, kh, kw, channels]`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (lead, tail) = split_lead(self.shape(x), 3, "conv2d input")?;
        let (height, width, channels) = (tail[0], tail[1], tail[2]);
        let (filters, spatial) = self.check_kernels(kernels, bias, channels, 4)?;
        let (kh, kw) = (spatial[0], spatial[1]);
        if kh > height || kw > width {
            return Err(Error::InvalidArchitecture(format!(
                "kernel {kh}x{kw} exceeds input {height}x{width}"
            )));
        }
        let (oh, ow) = (height - kh + 1, width - kw + 1);
        let shape = out_shape(self.shape(x), 3, &[oh, ow, filters]);
        let mut out = vec![T::zero(); lead * oh * ow * filters];
        let (xv, kv, bv) = (self.vals(x), self.vals(kernels), self.vals(bias));
        let kstride = kh * kw * channels;
        for row in out.chunks_mut(filters) {
            row.copy_from_slice(bv);
        }
        for b in 0..lead {
            let x_off = b * height * width * channels;
            for i in 0..oh {
                let y_off = ((b * oh + i) * ow) * filters;
                for di in 0..kh {
                    gemm(
                        ow,
                        kw * channels,
                        filters,
                        T::one(),
                        View {
                            data: xv,
                            offset: x_off + (i + di) * width * channels,
                            row_stride: channels,
                            col_stride: 1,
                        },
                        View::transposed(kv, kstride).at(di * kw * channels),
                        T::one(),
                        ViewMut {
                            data: &mut out,
                            offset: y_off,
                            row_stride: filters,
                            col_stride: 1,
                        },
                    );
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let tracks = self.tracks(&[x, kernels, bias]);
        Ok(self.push(value, Op::Conv2d { x, kernels, bias }, tracks))
    }

    /// Non-overlapping max pooling over the temporal axis of `[.., time, channels]`.
    /// A trailing remainder shorter than `size` is dropped.
    pub fn max_pool1d(&mut self, x: Var, size: usize) -> Result<Var> {
        let (lead, tail) = split_lead(self.shape(x), 2, "max_pool1d input")?;
        let (time, channels) = (tail[0], tail[1]);
        if size == 0 {
            return Err(Error::InvalidArchitecture("pool size must be >= 1".into()));
        }
        if time < size {
            return Err(Error::InvalidArchitecture(format!(
                "pool size {size} exceeds input length {time}"
            )));
        }
        let out_time = time / size;
        let shape = out_shape(self.shape(x), 2, &[out_time, channels]);
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(lead * out_time * channels);
        let mut argmax = Vec::with_capacity(lead * out_time * channels);
        for b in 0..lead {
            for t in 0..out_time {
                let start = (b * time + t * size) * channels;
                for c in 0..channels {
                    let mut best = start + c;
                    for w in 1..size {
                        let idx = start + w * channels + c;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        let tracks = self.tracks(&[x]);
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, tracks))
    }

    /// Mean over the temporal axis: `[.., time, channels] -> [.., channels]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (lead, tail) = split_lead(self.shape(x), 2, "global_avg_pool input")?;
        let (time, channels) = (tail[0], tail[1]);
        let shape = out_shape(self.shape(x), 2, &[channels]);
        let xv = self.vals(x);
        let scale = T::one() / T::from_f64(time as f64);
        let mut out = vec![T::zero(); lead * channels];
        for b in 0..lead {
            let acc = &mut out[b * channels..(b + 1) * channels];
            for row in xv[b * time * channels..(b + 1) * time * channels].chunks(channels) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a *= scale;
            }
        }
        let value = Tensor::new(&shape, out)?;
        let tracks = self.tracks(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool { x }, tracks))
    }

    /// Affine map `y = weights·x + bias` with `weights: [out, in]` over the
    /// last axis of `x`.
    pub fn dense(&mut self, x: Var, weights: Var, bias: Var) -> Result<Var> {
        let (lead, tail) = split_lead(self.shape(x), 1, "dense input")?;
        let inputs = tail[0];
        let ws = self.shape(weights);
        if ws.len() != 2 || ws[1] != inputs || self.shape(bias) != [ws[0]] {
            return Err(Error::Shape(format!(
                "dense weights {ws:?} / bias {:?} do not fit input {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let outputs = ws[0];
        let shape = out_shape(self.shape(x), 1, &[outputs]);
        let bv = self.vals(bias);
        let mut out = Vec::with_capacity(lead * outputs);
        for _ in 0..lead {
            out.extend_from_slice(bv);
        }
        gemm(
            lead,
            inputs,
            outputs,
            T::one(),
            View::row_major(self.vals(x), inputs),
            View::transposed(self.vals(weights), inputs),
            T::one(),
            ViewMut::row_major(&mut out, outputs),
        );
        let value = Tensor::new(&shape, out)?;
        let tracks = self.tracks(&[x, weights, bias]);
        Ok(self.push(value, Op::Dense { x, weights, bias }, tracks))
    }

    /// Row lookup `table[indices]`; output shape is `index_shape + [dim]`.
    pub fn embedding(&mut self, table: Var, indices: &[u8], index_shape: &[usize]) -> Result<Var> {
        let dim = self.check_table(table, indices, index_shape)?;
        let tv = self.vals(table);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            let i = i as usize;
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(dim);
        let value = Tensor::new(&shape, out)?;
        let tracks = self.tracks(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            tracks,
        ))
    }

    fn check_table(&self, table: Var, indices: &[u8], index_shape: &[usize]) -> Result<usize> {
        let ts = self.shape(table);
        if ts.len() != 2 || ts[0] < 256 {
            return Err(Error::Shape(format!("embedding table {ts:?} must be [256, dim]")));
        }
        if index_shape.iter().product::<usize>() != indices.len() || index_shape.is_empty() {
            return Err(Error::Shape(format!(
                "{} indices do not fill shape {index_shape:?}",
                indices.len()
            )));
        }
        Ok(ts[1])
    }

    /// Embedding lookup followed by a valid 1-D convolution, computed in one
    /// step.
    ///
    /// Since the convolution is linear in the embedded rows, each kernel tap
    /// `w` folds into a `[256, filters]` response table `table · kernels[:, w, :]ᵀ`,
    /// and the output at `t` is `bias + Σ_w response_w[bytes[t*stride + w]]`.
    /// The result equals `conv1d(embedding(..))` up to rounding.
    pub fn embed_conv1d(
        &mut self,
        table: Var,
        kernels: Var,
        bias: Var,
        indices: &[u8],
        index_shape: &[usize],
        stride: usize,
    ) -> Result<Var> {
        let dim = self.check_table(table, indices, index_shape)?;
        let time = *index_shape.last().expect("checked non-empty");
        let lead = indices.len() / time;
        let (filters, width) = self.check_kernels(kernels, bias, dim, 3)?;
        let width = width[0];
        if stride == 0 {
            return Err(Error::InvalidArchitecture("convolution stride must be >= 1".into()));
        }
        if width > time {
            return Err(Error::InvalidArchitecture(format!(
                "kernel width {width} exceeds input length {time}"
            )));
        }
        let out_time = (time - width) / stride + 1;
        let response = self.tap_responses(table, kernels, width, filters, dim);
        let bv = self.vals(bias);
        let mut out = vec![T::zero(); lead * out_time * filters];
        for b in 0..lead {
            let bytes = &indices[b * time..(b + 1) * time];
            for t in 0..out_time {
                let row = &mut out[(b * out_time + t) * filters..(b * out_time + t + 1) * filters];
                row.copy_from_slice(bv);
                for w in 0..width {
                    let v = bytes[t * stride + w] as usize;
                    let r = &response[(w * 256 + v) * filters..(w * 256 + v + 1) * filters];
                    for (o, &x) in row.iter_mut().zip(r) {
                        *o += x;
                    }
                }
            }
        }
        let mut shape = index_shape[..index_shape.len() - 1].to_vec();
        shape.extend_from_slice(&[out_time, filters]);
        let value = Tensor::new(&shape, out)?;
        let tracks = self.tracks(&[table, kernels, bias]);
        Ok(self.push(
            value,
            Op::EmbedConv1d {
                table,
                kernels,
                bias,
                indices: indices.to_vec(),
                time,
                stride,
            },
            tracks,
        ))
    }

    /// `[width, 256, filters]` tables of per-byte responses for each kernel tap.
    fn tap_responses(&self, table: Var, kernels: Var, width: usize, filters: usize, dim: usize) -> Vec<T> {
        let (tv, kv) = (self.vals(table), self.vals(kernels));
        let mut response = vec![T::zero(); width * 256 * filters];
        for (w, block) in response.chunks_mut(256 * filters).enumerate() {
            gemm(
                256,
                dim,
                filters,
                T::one(),
                View::row_major(tv, dim),
                View::transposed(kv, width * dim).at(w * dim),
                T::zero(),
                ViewMut::row_major(block, filters),
            );
        }
        response
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidInput(format!(
                "dropout probability must lie in [0, 1), got {p}"
            )));
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let input = self.value(x);
        let mask: Vec<T> = (0..input.len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let values = input.values().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(input.shape(), values)?;
        let tracks = self.tracks(&[x]);
        Ok(self.push(value, Op::Dropout { x, mask }, tracks))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let tracks = self.tracks(&[x]);
        Ok(self.push(value, Op::Reshape { x }, tracks))
    }

    /// Mean cross-entropy of `logits: [classes]` or `[batch, classes]`
    /// against `labels`. Returns the scalar loss node and the softmax
    /// probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<T>)> {
        let shape = self.shape(logits).to_vec();
        let (batch, classes) = match shape.as_slice() {
            [c] => (1, *c),
            [b, c] => (*b, *c),
            _ => {
                return Err(Error::Shape(format!(
                    "logits must be [classes] or [batch, classes], got {shape:?}"
                )))
            }
        };
        if classes < 2 {
            return Err(Error::Shape(format!("need at least 2 classes, got {classes}")));
        }
        if labels.len() != batch {
            return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let probs = softmax_rows(self.vals(logits), classes);
        // log p computed from the shifted logits keeps the loss finite even
        // when a probability underflows to zero.
        let lv = self.vals(logits);
        let mut loss = T::zero();
        for (b, &label) in labels.iter().enumerate() {
            let row = &lv[b * classes..(b + 1) * classes];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += log_sum - (row[label] - max);
        }
        loss = loss / T::from_f64(batch as f64);
        let probs_tensor = Tensor::new(&shape, probs.clone())?;
        let tracks = self.tracks(&[logits]);
        let node = self.push(
            Tensor::new(&[1], vec![loss])?,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            tracks,
        );
        Ok((node, probs_tensor))
    }

    fn take_grad(&mut self, v: Var) -> Vec<T> {
        let node = &mut self.nodes[v.0].value;
        let len = node.len();
        node.grad.take().unwrap_or_else(|| vec![T::zero(); len])
    }

    fn put_grad(&mut self, v: Var, grad: Vec<T>) {
        self.nodes[v.0].value.grad = Some(grad);
    }

    /// Accumulates d`loss`/d`node` into every node that tracks gradients.
    /// `loss` must hold a single element.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.nodes[loss.0].value.grad_mut_or_zero()[0] = T::one();
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracks_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(dy) = self.nodes[i].value.grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_op(i, &op, &dy)?;
            self.nodes[i].op = op;
            self.nodes[i].value.grad = Some(dy);
        }
        Ok(())
    }

    fn backward_op(&mut self, node: usize, op: &Op<T>, dy: &[T]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::LeakyRelu { x, alpha } => {
                if self.tracks(&[*x]) {
                    let mut gx = self.take_grad(*x);
                    for ((g, &v), &d) in gx.iter_mut().zip(self.vals(*x)).zip(dy) {
                        *g += if v >= T::zero() { d } else { *alpha * d };
                    }
                    self.put_grad(*x, gx);
                }
            }
            Op::Conv1d {
                x,
                kernels,
                bias,
                stride,
            } => self.backward_conv1d(node, *x, *kernels, *bias, *stride, dy)?,
            Op::Conv2d { x, kernels, bias } => self.backward_conv2d(node, *x, *kernels, *bias, dy)?,
            Op::MaxPool1d { x, argmax } => {
                if self.tracks(&[*x]) {
                    let mut gx = self.take_grad(*x);
                    for (&idx, &d) in argmax.iter().zip(dy) {
                        gx[idx] += d;
                    }
                    self.put_grad(*x, gx);
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.tracks(&[*x]) {
                    let (lead, tail) = split_lead(self.shape(*x), 2, "global_avg_pool input")?;
                    let (time, channels) = (tail[0], tail[1]);
                    let scale = T::one() / T::from_f64(time as f64);
                    let mut gx = self.take_grad(*x);
                    for b in 0..lead {
                        let d = &dy[b * channels..(b + 1) * channels];
                        for row in gx[b * time * channels..(b + 1) * time * channels].chunks_mut(channels) {
                            for (g, &dv) in row.iter_mut().zip(d) {
                                *g += dv * scale;
                            }
                        }
                    }
                    self.put_grad(*x, gx);
                }
            }
            Op::Dense { x, weights, bias } => {
                let (lead, tail) = split_lead(self.shape(*x), 1, "dense input")?;
                let inputs = tail[0];
                let outputs = self.shape(*weights)[0];
                if self.tracks(&[*x]) {
                    let mut gx = self.take_grad(*x);
                    gemm(
                        lead,
                        outputs,
                        inputs,
                        T::one(),
                        View::row_major(dy, outputs),
                        View::row_major(self.vals(*weights), inputs),
                        T::one(),
                        ViewMut::row_major(&mut gx, inputs),
                    );
                    self.put_grad(*x, gx);
                }
                if self.tracks(&[*weights]) {
                    let mut gw = self.take_grad(*weights);
                    gemm(
                        outputs,
                        lead,
                        inputs,
                        T::one(),
                        View::transposed(dy, outputs),
                        View::row_major(self.vals(*x), inputs),
                        T::one(),
                        ViewMut::row_major(&mut gw, inputs),
                    );
                    self.put_grad(*weights, gw);
                }
                self.accumulate_bias(*bias, dy, outputs);
            }
            Op::Embedding { table, indices } => {
                if self.tracks(&[*table]) {
                    let dim = self.shape(*table)[1];
                    let mut gt = self.take_grad(*table);
                    for (&i, d) in indices.iter().zip(dy.chunks(dim)) {
                        let i = i as usize;
                        for (g, &dv) in gt[i * dim..(i + 1) * dim].iter_mut().zip(d) {
                            *g += dv;
                        }
                    }
                    self.put_grad(*table, gt);
                }
            }
            Op::EmbedConv1d {
                table,
                kernels,
                bias,
                indices,
                time,
                stride,
            } => self.backward_embed_conv1d(*table, *kernels, *bias, indices, *time, *stride, dy)?,
            Op::Dropout { x, mask } => {
                if self.tracks(&[*x]) {
                    let mut gx = self.take_grad(*x);
                    for ((g, &m), &d) in gx.iter_mut().zip(mask).zip(dy) {
                        *g += m * d;
                    }
                    self.put_grad(*x, gx);
                }
            }
            Op::Reshape { x } => {
                if self.tracks(&[*x]) {
                    let mut gx = self.take_grad(*x);
                    for (g, &d) in gx.iter_mut().zip(dy) {
                        *g += d;
                    }
                    self.put_grad(*x, gx);
                }
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                if self.tracks(&[*logits]) {
                    let classes = probs.len() / labels.len();
                    let scale = dy[0] / T::from_f64(labels.len() as f64);
                    let mut gl = self.take_grad(*logits);
                    for (b, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let target = if c == label { T::one() } else { T::zero() };
                            gl[b * classes + c] += (probs[b * classes + c] - target) * scale;
                        }
                    }
                    self.put_grad(*logits, gl);
                }
            }
        }
        Ok(())
    }

    fn accumulate_bias(&mut self, bias: Var, dy: &[T], filters: usize) {
        if self.tracks(&[bias]) {
            let mut gb = self.take_grad(bias);
            for row in dy.chunks(filters) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            self.put_grad(bias, gb);
        }
    }

    fn backward_conv1d(&mut self, node: usize, x: Var, kernels: Var, bias: Var, stride: usize, dy: &[T]) -> Result<()> {
        let (lead, tail) = split_lead(self.shape(x), 2, "conv1d input")?;
        let (time, channels) = (tail[0], tail[1]);
        let ks = self.shape(kernels).to_vec();
        let (filters, width) = (ks[0], ks[1]);
        let window = width * channels;
        let out_time = self.nodes[node].value.shape()[self.nodes[node].value.rank() - 2];

        if self.tracks(&[kernels]) {
            let mut gk = self.take_grad(kernels);
            for b in 0..lead {
                gemm(
                    filters,
                    out_time,
                    window,
                    T::one(),
                    View::transposed(dy, filters).at(b * out_time * filters),
                    View {
                        data: self.vals(x),
                        offset: b * time * channels,
                        row_stride: stride * channels,
                        col_stride: 1,
                    },
                    T::one(),
                    ViewMut::row_major(&mut gk, window),
                );
            }
            self.put_grad(kernels, gk);
        }
        if self.tracks(&[x]) {
            let mut gx = self.take_grad(x);
            for b in 0..lead {
                for w in 0..width {
                    gemm(
                        out_time,
                        filters,
                        channels,
                        T::one(),
                        View::row_major(dy, filters).at(b * out_time * filters),
                        View {
                            data: self.vals(kernels),
                            offset: w * channels,
                            row_stride: window,
                            col_stride: 1,
                        },
                        T::one(),
                        ViewMut {
                            data: &mut gx,
                            offset: b * time * channels + w * channels,
                            row_stride: stride * channels,
                            col_stride: 1,
                        },
                    );
                }
            }
            self.put_grad(x, gx);
        }
        self.accumulate_bias(bias, dy, filters);
        Ok(())
    }

    fn backward_conv2d(&mut self, node: usize, x: Var, kernels: Var, bias: Var, dy: &[T]) -> Result<()> {
        let (lead, tail) = split_lead(self.shape(x), 3, "conv2d input")?;
        let (height, width, channels) = (tail[0], tail[1], tail[2]);
        let ks = self.shape(kernels).to_vec();
        let (filters, kh, kw) = (ks[0], ks[1], ks[2]);
        let kstride = kh * kw * channels;
        let os = self.nodes[node].value.shape().to_vec();
        let (oh, ow) = (os[os.len() - 3], os[os.len() - 2]);

        if self.tracks(&[kernels]) {
            let mut gk = self.take_grad(kernels);
            for b in 0..lead {
                let x_off = b * height * width * channels;
                for i in 0..oh {
                    let y_off = ((b * oh + i) * ow) * filters;
                    for di in 0..kh {
                        gemm(
                            filters,
                            ow,
                            kw * channels,
                            T::one(),
                            View::transposed(dy, filters).at(y_off),
                            View {
                                data: self.vals(x),
                                offset: x_off + (i + di) * width * channels,
                                row_stride: channels,
                                col_stride: 1,
                            },
                            T::one(),
                            ViewMut {
                                data: &mut gk,
                                offset: di * kw * channels,
                                row_stride: kstride,
                                col_stride: 1,
                            },
                        );
                    }
                }
            }
            self.put_grad(kernels, gk);
        }
        if self.tracks(&[x]) {
            let mut gx = self.take_grad(x);
            for b in 0..lead {
                let x_off = b * height * width * channels;
                for i in 0..oh {
                    let y_off = ((b * oh + i) * ow) * filters;
                    for di in 0..kh {
                        for dj in 0..kw {
                            gemm(
                                ow,
                                filters,
                                channels,
                                T::one(),
                                View::row_major(dy, filters).at(y_off),
                                View {
                                    data: self.vals(kernels),
                                    offset: (di * kw + dj) * channels,
                                    row_stride: kstride,
                                    col_stride: 1,
                                },
                                T::one(),
                                ViewMut {
                                    data: &mut gx,
                                    offset: x_off + ((i + di) * width + dj) * channels,
                                    row_stride: channels,
                                    col_stride: 1,
                                },
                            );
                        }
                    }
                }
            }
            self.put_grad(x, gx);
        }
        self.accumulate_bias(bias, dy, filters);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_embed_conv1d(
        &mut self,
        table: Var,
        kernels: Var,
        bias: Var,
        indices: &[u8],
        time: usize,
        stride: usize,
        dy: &[T],
    ) -> Result<()> {
        let dim = self.shape(table)[1];
        let ks = self.shape(kernels).to_vec();
        let (filters, width) = (ks[0], ks[1]);
        let lead = indices.len() / time;
        let out_time = (time - width) / stride + 1;

        if self.tracks(&[table, kernels]) {
            // Gradient with respect to each tap's response table, gathered by byte value.
            let mut gresp = vec![T::zero(); width * 256 * filters];
            for b in 0..lead {
                let bytes = &indices[b * time..(b + 1) * time];
                for t in 0..out_time {
                    let d = &dy[(b * out_time + t) * filters..(b * out_time + t + 1) * filters];
                    for w in 0..width {
                        let v = bytes[t * stride + w] as usize;
                        let g = &mut gresp[(w * 256 + v) * filters..(w * 256 + v + 1) * filters];
                        for (gv, &dv) in g.iter_mut().zip(d) {
                            *gv += dv;
                        }
                    }
                }
            }
            let window = width * dim;
            if self.tracks(&[table]) {
                let mut gt = self.take_grad(table);
                for w in 0..width {
                    gemm(
                        256,
                        filters,
                        dim,
                        T::one(),
                        View::row_major(&gresp, filters).at(w * 256 * filters),
                        View {
                            data: self.vals(kernels),
                            offset: w * dim,
                            row_stride: window,
                            col_stride: 1,
                        },
                        T::one(),
                        ViewMut::row_major(&mut gt[..256 * dim], dim),
                    );
                }
                self.put_grad(table, gt);
            }
            if self.tracks(&[kernels]) {
                let mut gk = self.take_grad(kernels);
                for w in 0..width {
                    gemm(
                        filters,
                        256,
                        dim,
                        T::one(),
                        View::transposed(&gresp, filters).at(w * 256 * filters),
                        View::row_major(self.vals(table), dim),
                        T::one(),
                        ViewMut {
                            data: &mut gk,
                            offset: w * dim,
                            row_stride: window,
                            col_stride: 1,
                        },
                    );
                }
                self.put_grad(kernels, gk);
            }
        }
        self.accumulate_bias(bias, dy, filters);
        Ok(())
    }
}
