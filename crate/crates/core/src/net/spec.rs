use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{COOCCURRENCE_POOLED, FEATURE_COUNT};

/// Slope of every hidden LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.3;

/// Size of the byte alphabet seen by an embedding layer.
pub const BYTE_VOCAB: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Embedding {
        dim: usize,
    },
    Conv1d {
        filters: usize,
        width: usize,
        stride: usize,
    },
    LeakyRelu {
        alpha: f64,
    },
    MaxPool1d {
        size: usize,
    },
    GlobalAvgPool,
    Dropout {
        p: f64,
    },
    Dense {
        units: usize,
    },
    /// Square, stride-1, valid 2-D convolution.
    Conv2d {
        filters: usize,
        kernel: usize,
    },
    Flatten,
}

/// What a model consumes from each block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Raw bytes, fed to an embedding layer.
    Bytes,
    /// The global statistical feature vector of a block.
    GlobalFeatures,
    /// The average-pooled byte co-occurrence map of a block.
    Cooccurrence,
}

/// Intermediate activation shape, excluding the batch axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Bytes(usize),
    Sequence {
        time: usize,
        channels: usize,
    },
    Grid {
        height: usize,
        width: usize,
        channels: usize,
    },
    Vector(usize),
}

impl ActShape {
    pub fn dims(self) -> Vec<usize> {
        match self {
            ActShape::Bytes(n) | ActShape::Vector(n) => vec![n],
            ActShape::Sequence { time, channels } => vec![time, channels],
            ActShape::Grid {
                height,
                width,
                channels,
            } => vec![height, width, channels],
        }
    }

    pub fn len(self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub block_size: usize,
    pub input: InputKind,
    pub layers: Vec<LayerSpec>,
    pub n_classes: usize,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArchitecture(msg.into())
}

impl ModelSpec {
    pub fn input_shape(&self) -> ActShape {
        match self.input {
            InputKind::Bytes => ActShape::Bytes(self.block_size),
            InputKind::GlobalFeatures => ActShape::Vector(FEATURE_COUNT),
            InputKind::Cooccurrence => ActShape::Grid {
                height: COOCCURRENCE_POOLED,
                width: COOCCURRENCE_POOLED,
                channels: 1,
            },
        }
    }

    /// Activation shape after every layer, or the first layer that cannot be
    /// applied.
    pub fn shapes(&self) -> Result<Vec<ActShape>> {
        let mut shape = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = next_shape(shape, layer).map_err(|e| match e {
                Error::InvalidArchitecture(m) => invalid(format!("layer {i} ({layer:?}): {m}")),
                other => other,
            })?;
            out.push(shape);
        }
        Ok(out)
    }

    /// Checks that the layer stack is realizable and ends in
    /// `Dense(n_classes)`.
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.block_size == 0 {
            return Err(invalid("block size must be positive"));
        }
        match (self.input, self.layers.first()) {
            (InputKind::Bytes, Some(LayerSpec::Embedding { .. })) => {}
            (InputKind::Bytes, _) => return Err(invalid("byte models must start with an embedding")),
            (_, Some(LayerSpec::Embedding { .. })) => return Err(invalid("only byte models may contain an embedding")),
            _ => {}
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == self.n_classes => {}
            _ => return Err(invalid(format!("last layer must be Dense({})", self.n_classes))),
        }
        let shapes = self.shapes()?;
        if shapes.last() != Some(&ActShape::Vector(self.n_classes)) {
            return Err(invalid("output is not a class vector"));
        }
        Ok(())
    }

    /// Exact number of trainable scalars.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|s| s.iter().product::<usize>()).sum())
    }

    /// Shapes of the parameter tensors in storage order (weights then bias,
    /// layer by layer).
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut shape = self.input_shape();
        let mut out = Vec::new();
        for layer in &self.layers {
            match (*layer, shape) {
                (LayerSpec::Embedding { dim }, _) => out.push(vec![BYTE_VOCAB, dim]),
                (LayerSpec::Conv1d { filters, width, .. }, ActShape::Sequence { channels, .. }) => {
                    out.push(vec![filters, width, channels]);
                    out.push(vec![filters]);
                }
                (LayerSpec::Conv2d { filters, kernel }, ActShape::Grid { channels, .. }) => {
                    out.push(vec![filters, kernel, kernel, channels]);
                    out.push(vec![filters]);
                }
                (LayerSpec::Dense { units }, ActShape::Vector(n)) => {
                    out.push(vec![units, n]);
                    out.push(vec![units]);
                }
                _ => {}
            }
            shape = next_shape(shape, layer)?;
        }
        Ok(out)
    }

    /// Parses the compact layer notation, e.g.
    /// `E (64) - C1D (128, 27) - MP (4) - AP - D (0.1) - F (256) - F (75)`.
    ///
    /// `C1D (a, b)` is `a` filters of width `b` at stride 1. A LeakyReLU is
    /// inserted after every convolution and every dense layer except the
    /// last. The input kind follows from the first layer: `E` reads bytes,
    /// `C2D` reads the co-occurrence map and `F` reads the feature vector.
    pub fn from_notation(text: &str, block_size: usize) -> Result<ModelSpec> {
        let tokens: Vec<&str> = text.split('-').map(str::trim).collect();
        let mut layers = Vec::new();
        for (i, token) in tokens.iter().enumerate() {
            let (name, args) = parse_token(token)?;
            let last = i + 1 == tokens.len();
            let arity = |n: usize| -> Result<()> {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(Error::format(
                        "architecture notation",
                        format!("`{token}` takes {n} argument(s)"),
                    ))
                }
            };
            let leaky = LayerSpec::LeakyRelu { alpha: LEAKY_SLOPE };
            match name {
                "E" => {
                    arity(1)?;
                    layers.push(LayerSpec::Embedding {
                        dim: as_count(args[0], token)?,
                    });
                }
                "C1D" => {
                    arity(2)?;
                    layers.push(LayerSpec::Conv1d {
                        filters: as_count(args[0], token)?,
                        width: as_count(args[1], token)?,
                        stride: 1,
                    });
                    layers.push(leaky);
                }
                "C2D" => {
                    arity(2)?;
                    layers.push(LayerSpec::Conv2d {
                        filters: as_count(args[0], token)?,
                        kernel: as_count(args[1], token)?,
                    });
                    layers.push(leaky);
                }
                "MP" => {
                    arity(1)?;
                    layers.push(LayerSpec::MaxPool1d {
                        size: as_count(args[0], token)?,
                    });
                }
                "AP" => {
                    arity(0)?;
                    layers.push(LayerSpec::GlobalAvgPool);
                }
                "D" => {
                    arity(1)?;
                    let p: f64 = args[0]
                        .parse()
                        .map_err(|_| Error::format("architecture notation", format!("bad dropout in `{token}`")))?;
                    layers.push(LayerSpec::Dropout { p });
                }
                "F" => {
                    arity(1)?;
                    layers.push(LayerSpec::Dense {
                        units: as_count(args[0], token)?,
                    });
                    if !last {
                        layers.push(leaky);
                    }
                }
                "V" => {
                    arity(0)?;
                    layers.push(LayerSpec::Flatten);
                }
                other => {
                    return Err(Error::format(
                        "architecture notation",
                        format!("unknown layer `{other}`"),
                    ))
                }
            }
        }
        let input = match layers.first() {
            Some(LayerSpec::Embedding { .. }) => InputKind::Bytes,
            Some(LayerSpec::Conv2d { .. }) => InputKind::Cooccurrence,
            _ => InputKind::GlobalFeatures,
        };
        let n_classes = match layers.last() {
            Some(LayerSpec::Dense { units }) => *units,
            _ => return Err(invalid("notation must end with a dense layer")),
        };
        let spec = ModelSpec {
            block_size,
            input,
            layers,
            n_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Renders the compact notation; implicit activations are omitted.
    pub fn notation(&self) -> String {
        let parts: Vec<String> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Embedding { dim } => Some(format!("E ({dim})")),
                LayerSpec::Conv1d { filters, width, .. } => Some(format!("C1D ({filters}, {width})")),
                LayerSpec::Conv2d { filters, kernel } => Some(format!("C2D ({filters}, {kernel})")),
                LayerSpec::MaxPool1d { size } => Some(format!("MP ({size})")),
                LayerSpec::GlobalAvgPool => Some("AP".to_string()),
                LayerSpec::Dropout { p } => Some(format!("D ({p})")),
                LayerSpec::Dense { units } => Some(format!("F ({units})")),
                LayerSpec::Flatten => Some("V".to_string()),
                LayerSpec::LeakyRelu { .. } => None,
            })
            .collect();
        parts.join(" - ")
    }

    /// Copy with the output layer resized to `n_classes`.
    pub fn with_classes(&self, n_classes: usize) -> Result<ModelSpec> {
        let mut spec = self.clone();
        if let Some(LayerSpec::Dense { units }) = spec.layers.last_mut() {
            *units = n_classes;
        }
        spec.n_classes = n_classes;
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.notation())
    }
}

fn parse_token(token: &str) -> Result<(&str, Vec<&str>)> {
    match token.find('(') {
        None => Ok((token.trim(), Vec::new())),
        Some(open) => {
            let close = token
                .rfind(')')
                .filter(|&c| c > open)
                .ok_or_else(|| Error::format("architecture notation", format!("unbalanced `{token}`")))?;
            let args = token[open + 1..close].split(',').map(str::trim).collect();
            Ok((token[..open].trim(), args))
        }
    }
}

fn as_count(arg: &str, token: &str) -> Result<usize> {
    match arg.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::format(
            "architecture notation",
            format!("expected a positive integer in `{token}`"),
        )),
    }
}

fn next_shape(shape: ActShape, layer: &LayerSpec) -> Result<ActShape> {
    use ActShape::*;
    let mismatch = || invalid(format!("cannot apply to activation {shape:?}"));
    Ok(match (*layer, shape) {
        (LayerSpec::Embedding { dim }, Bytes(time)) => {
            if dim == 0 {
                return Err(invalid("embedding dimension must be positive"));
            }
            Sequence { time, channels: dim }
        }
        (LayerSpec::Conv1d { filters, width, stride }, Sequence { time, .. }) => {
            if filters == 0 || width == 0 || stride == 0 {
                return Err(invalid("convolution sizes must be positive"));
            }
            if width > time {
                return Err(invalid(format!("kernel width {width} exceeds length {time}")));
            }
            Sequence {
                time: (time - width) / stride + 1,
                channels: filters,
            }
        }
        (LayerSpec::MaxPool1d { size }, Sequence { time, channels }) => {
            if size == 0 {
                return Err(invalid("pool size must be positive"));
            }
            if time < size {
                return Err(invalid(format!("pool size {size} exceeds length {time}")));
            }
            Sequence {
                time: time / size,
                channels,
            }
        }
        (LayerSpec::GlobalAvgPool, Sequence { channels, .. }) => Vector(channels),
        (LayerSpec::LeakyRelu { alpha }, s) if !matches!(s, Bytes(_)) => {
            if !(0.0..1.0).contains(&alpha) {
                return Err(invalid(format!("LeakyReLU slope {alpha} outside [0, 1)")));
            }
            s
        }
        (LayerSpec::Dropout { p }, s) if !matches!(s, Bytes(_)) => {
            if !(0.0..1.0).contains(&p) {
                return Err(invalid(format!("dropout {p} outside [0, 1)")));
            }
            s
        }
        (LayerSpec::Dense { units }, Vector(_)) => {
            if units == 0 {
                return Err(invalid("dense layer needs at least one unit"));
            }
            Vector(units)
        }
        (LayerSpec::Conv2d { filters, kernel }, Grid { height, width, .. }) => {
            if filters == 0 || kernel == 0 {
                return Err(invalid("convolution sizes must be positive"));
            }
            if kernel > height || kernel > width {
                return Err(invalid(format!("kernel {kernel} exceeds {height}x{width}")));
            }
            Grid {
                height: height - kernel + 1,
                width: width - kernel + 1,
                channels: filters,
            }
        }
        (LayerSpec::Flatten, s @ (Grid { .. } | Sequence { .. } | Vector(_))) => Vector(s.len()),
        _ => return Err(mismatch()),
    })
}
