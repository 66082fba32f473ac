use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{ActShape, InputKind, LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::features::{cooccurrence, global_features, COOCCURRENCE_POOLED, FEATURE_COUNT};
use crate::tensor::{softmax_rows, Graph, Scalar, Tensor, Var};

/// Half-width of the uniform embedding initializer.
pub const EMBEDDING_INIT: f64 = 0.05;

/// A model specification together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    params: Vec<Tensor<T>>,
    fused: bool,
}

/// Result of a forward pass built on a fresh graph.
pub struct Forward<T: Scalar> {
    pub graph: Graph<T>,
    pub params: Vec<Var>,
    pub logits: Var,
}

impl<T: Scalar> Model<T> {
    /// Seeded initialization: conv and dense weights uniform in
    /// `±sqrt(3 / fan_in)`, zero biases, embedding uniform in `±0.05`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shapes.len());
        let mut shapes = shapes.into_iter();
        for layer in &spec.layers {
            let n_tensors = match layer {
                LayerSpec::Embedding { .. } => 1,
                LayerSpec::Conv1d { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => 2,
                _ => 0,
            };
            for k in 0..n_tensors {
                let shape = shapes.next().expect("one shape per parameter tensor");
                let len: usize = shape.iter().product();
                let values: Vec<T> = if k == 1 {
                    vec![T::zero(); len]
                } else {
                    let limit = match layer {
                        LayerSpec::Embedding { .. } => EMBEDDING_INIT,
                        _ => (3.0 / shape[1..].iter().product::<usize>() as f64).sqrt(),
                    };
                    (0..len).map(|_| T::from_f64(rng.gen_range(-limit..=limit))).collect()
                };
                params.push(Tensor::new(&shape, values)?);
            }
        }
        Ok(Model {
            spec: spec.clone(),
            params,
            fused: true,
        })
    }

    /// Wraps existing parameters after checking them against the spec.
    pub fn from_params(spec: &ModelSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(Error::Shape(format!(
                "spec needs {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            if s.as_slice() != p.shape() {
                return Err(Error::Shape(format!(
                    "parameter {i} has shape {:?}, spec needs {s:?}",
                    p.shape()
                )));
            }
        }
        Ok(Model {
            spec: spec.clone(),
            params,
            fused: true,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Whether an embedding directly followed by a convolution is evaluated
    /// as one fused lookup-convolution (the default) or as two separate ops.
    /// Both give the same values up to rounding.
    pub fn set_fused_embedding(&mut self, fused: bool) {
        self.fused = fused;
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            fused: self.fused,
        }
    }

    fn check_blocks(&self, blocks: &[&[u8]]) -> Result<()> {
        if blocks.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for (index, b) in blocks.iter().enumerate() {
            if b.len() != self.spec.block_size {
                return Err(Error::BlockLength {
                    index,
                    len: b.len(),
                    expected: self.spec.block_size,
                });
            }
        }
        Ok(())
    }

    /// Records the network on a new graph and returns the logits node.
    /// Dropout is applied only when `training` is set, drawing its masks
    /// from `rng`.
    pub fn build<R: Rng + ?Sized>(&self, blocks: &[&[u8]], training: bool, rng: &mut R) -> Result<Forward<T>> {
        self.check_blocks(blocks)?;
        let batch = blocks.len();
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let mut next_param = params.iter().copied();
        let mut take = || next_param.next().expect("parameters match the spec");

        let layers = &self.spec.layers;
        let mut start = 0;
        let mut x = match self.spec.input {
            InputKind::Bytes => {
                let indices: Vec<u8> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
                let shape = [batch, self.spec.block_size];
                let table = take();
                match layers.get(1) {
                    Some(LayerSpec::Conv1d { stride, .. }) if self.fused => {
                        start = 2;
                        let (k, b) = (take(), take());
                        g.embed_conv1d(table, k, b, &indices, &shape, *stride)?
                    }
                    _ => {
                        start = 1;
                        g.embedding(table, &indices, &shape)?
                    }
                }
            }
            InputKind::GlobalFeatures => {
                let mut values = Vec::with_capacity(batch * FEATURE_COUNT);
                for b in blocks {
                    values.extend(global_features(b)?.scaled(b.len()).map(T::from_f64));
                }
                g.input(Tensor::new(&[batch, FEATURE_COUNT], values)?)
            }
            InputKind::Cooccurrence => {
                let side = COOCCURRENCE_POOLED;
                let mut values = Vec::with_capacity(batch * side * side);
                for b in blocks {
                    values.extend(cooccurrence_input(b)?.into_iter().map(T::from_f64));
                }
                g.input(Tensor::new(&[batch, side, side, 1], values)?)
            }
        };

        for layer in &layers[start..] {
            x = match *layer {
                LayerSpec::Embedding { .. } => {
                    return Err(Error::InvalidArchitecture("embedding must be the first layer".into()))
                }
                LayerSpec::Conv1d { stride, .. } => {
                    let (k, b) = (take(), take());
                    g.conv1d(x, k, b, stride)?
                }
                LayerSpec::Conv2d { .. } => {
                    let (k, b) = (take(), take());
                    g.conv2d(x, k, b)?
                }
                LayerSpec::Dense { .. } => {
                    let (w, b) = (take(), take());
                    g.dense(x, w, b)?
                }
                LayerSpec::LeakyRelu { alpha } => g.leaky_relu(x, T::from_f64(alpha))?,
                LayerSpec::MaxPool1d { size } => g.max_pool1d(x, size)?,
                LayerSpec::GlobalAvgPool => g.global_avg_pool(x)?,
                LayerSpec::Dropout { p } if training && p > 0.0 => g.dropout(x, p, rng)?,
                LayerSpec::Dropout { .. } => x,
                LayerSpec::Flatten => {
                    let len = g.value(x).len() / batch;
                    g.reshape(x, &[batch, len])?
                }
            };
        }
        debug_assert_eq!(
            g.value(x).shape(),
            &[batch, ActShape::Vector(self.spec.n_classes).len()]
        );
        Ok(Forward {
            graph: g,
            params,
            logits: x,
        })
    }

    /// Class probabilities `[batch, n_classes]`; each row sums to one.
    pub fn forward<R: Rng + ?Sized>(&self, blocks: &[&[u8]], training: bool, rng: &mut R) -> Result<Tensor<T>> {
        let f = self.build(blocks, training, rng)?;
        let logits = f.graph.value(f.logits);
        Tensor::new(logits.shape(), softmax_rows(logits.values(), self.spec.n_classes))
    }

    /// Inference-mode probabilities; no randomness is involved.
    pub fn predict_proba(&self, blocks: &[&[u8]]) -> Result<Tensor<T>> {
        // The generator is never drawn from when dropout is inactive.
        self.forward(blocks, false, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Most probable class and its probability for every block.
    pub fn predict(&self, blocks: &[&[u8]]) -> Result<Vec<(usize, f64)>> {
        let probs = self.predict_proba(blocks)?;
        Ok(probs.values().chunks(self.spec.n_classes).map(argmax_row).collect())
    }

    /// Mean cross-entropy of the batch and, per parameter tensor, its
    /// gradient.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        blocks: &[&[u8]],
        labels: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Tensor<T>, Vec<Vec<T>>)> {
        let mut f = self.build(blocks, training, rng)?;
        let (loss, probs) = f.graph.softmax_cross_entropy(f.logits, labels)?;
        f.graph.backward(loss)?;
        let grads = f
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                f.graph
                    .grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); p.len()])
            })
            .collect();
        Ok((f.graph.value(loss).values()[0].as_f64(), probs, grads))
    }

    /// Mean cross-entropy of the batch without gradients.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        blocks: &[&[u8]],
        labels: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<f64> {
        let mut f = self.build(blocks, training, rng)?;
        let (loss, _) = f.graph.softmax_cross_entropy(f.logits, labels)?;
        Ok(f.graph.value(loss).values()[0].as_f64())
    }
}

/// Index and value of the largest entry; ties go to the lower index.
pub(crate) fn argmax_row<T: Scalar>(row: &[T]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best].as_f64())
}

/// Pooled co-occurrence map normalized to unit mean and log-compressed,
/// `ln(1 + pooled / mean)`.
fn cooccurrence_input(block: &[u8]) -> Result<Vec<f64>> {
    let m = cooccurrence(block)?;
    let cells = (COOCCURRENCE_POOLED * COOCCURRENCE_POOLED) as f64;
    let mean = (block.len() - 1) as f64 / (4.0 * cells);
    Ok(m.pooled_values().iter().map(|&v| (v / mean).ln_1p()).collect())
}
