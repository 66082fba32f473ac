use serde::{Deserialize, Serialize};

use super::spec::{InputKind, LayerSpec, ModelSpec, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::features::FEATURE_COUNT;

pub const DENSE_UNITS: [usize; 5] = [16, 32, 64, 128, 256];
pub const EMBEDDING_DIMS: [usize; 4] = [16, 32, 48, 64];
/// Filters per convolution.
pub const CONV_FILTERS: [usize; 4] = [16, 32, 64, 128];
/// Kernel width of each convolution.
pub const CONV_WIDTHS: [usize; 5] = [3, 11, 18, 27, 35];
pub const CONV_BLOCKS: [usize; 3] = [1, 2, 3];
pub const POOL_SIZES: [usize; 4] = [2, 4, 6, 8];

/// Dropout applied after global average pooling.
pub const DROPOUT: f64 = 0.1;

/// One point of the six-dimensional architecture grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperParams {
    pub dense_units: usize,
    pub embedding_dim: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub conv_blocks: usize,
    pub pool_size: usize,
}

impl HyperParams {
    pub const NAMES: [&'static str; 6] = [
        "dense_units",
        "embedding_dim",
        "conv_filters",
        "conv_width",
        "conv_blocks",
        "pool_size",
    ];

    pub fn candidates() -> [&'static [usize]; 6] {
        [
            &DENSE_UNITS,
            &EMBEDDING_DIMS,
            &CONV_FILTERS,
            &CONV_WIDTHS,
            &CONV_BLOCKS,
            &POOL_SIZES,
        ]
    }

    pub fn values(&self) -> [usize; 6] {
        [
            self.dense_units,
            self.embedding_dim,
            self.conv_filters,
            self.conv_width,
            self.conv_blocks,
            self.pool_size,
        ]
    }

    pub fn from_values(v: [usize; 6]) -> Self {
        HyperParams {
            dense_units: v[0],
            embedding_dim: v[1],
            conv_filters: v[2],
            conv_width: v[3],
            conv_blocks: v[4],
            pool_size: v[5],
        }
    }

    pub fn in_candidate_sets(&self) -> bool {
        self.values()
            .iter()
            .zip(Self::candidates())
            .all(|(v, set)| set.contains(v))
    }
}

/// The embedding / convolutional-block / pooled-head architecture for `hp`,
/// with stride-1 convolutions.
pub fn build_model(hp: &HyperParams, block_size: usize, n_classes: usize) -> Result<ModelSpec> {
    build_model_strided(hp, block_size, n_classes, 1)
}

/// [`build_model`] with an explicit convolution stride.
pub fn build_model_strided(hp: &HyperParams, block_size: usize, n_classes: usize, stride: usize) -> Result<ModelSpec> {
    if !hp.in_candidate_sets() {
        return Err(Error::InvalidInput(format!(
            "hyper-parameters {hp:?} fall outside the candidate grid"
        )));
    }
    let mut layers = vec![LayerSpec::Embedding { dim: hp.embedding_dim }];
    for _ in 0..hp.conv_blocks {
        layers.push(LayerSpec::Conv1d {
            filters: hp.conv_filters,
            width: hp.conv_width,
            stride,
        });
        layers.push(LayerSpec::LeakyRelu { alpha: LEAKY_SLOPE });
        layers.push(LayerSpec::MaxPool1d { size: hp.pool_size });
    }
    layers.extend([
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dropout { p: DROPOUT },
        LayerSpec::Dense { units: hp.dense_units },
        LayerSpec::LeakyRelu { alpha: LEAKY_SLOPE },
        LayerSpec::Dense { units: n_classes },
    ]);
    let spec = ModelSpec {
        block_size,
        input: InputKind::Bytes,
        layers,
        n_classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// Dense baseline over the global feature vector.
pub fn build_nn_gf(n_classes: usize) -> Result<ModelSpec> {
    let leaky = LayerSpec::LeakyRelu { alpha: LEAKY_SLOPE };
    let spec = ModelSpec {
        block_size: 4096,
        input: InputKind::GlobalFeatures,
        layers: vec![
            LayerSpec::Dense { units: 256 },
            leaky,
            LayerSpec::Dense { units: 256 },
            leaky,
            LayerSpec::Dense { units: 256 },
            leaky,
            LayerSpec::Dense { units: n_classes },
        ],
        n_classes,
    };
    debug_assert_eq!(spec.input_shape().len(), FEATURE_COUNT);
    spec.validate()?;
    Ok(spec)
}

/// Convolutional baseline over the pooled co-occurrence map.
pub fn build_nn_co(n_classes: usize) -> Result<ModelSpec> {
    let leaky = LayerSpec::LeakyRelu { alpha: LEAKY_SLOPE };
    let mut layers = Vec::new();
    for _ in 0..4 {
        layers.push(LayerSpec::Conv2d { filters: 48, kernel: 3 });
        layers.push(leaky);
    }
    layers.extend([
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 64 },
        leaky,
        LayerSpec::Dense { units: n_classes },
    ]);
    let spec = ModelSpec {
        block_size: 4096,
        input: InputKind::Cooccurrence,
        layers,
        n_classes,
    };
    spec.validate()?;
    Ok(spec)
}

/// A tuned architecture: scenario, block size, layer notation and its
/// reported trainable-parameter total.
#[derive(Clone, Copy, Debug)]
pub struct TunedModel {
    pub scenario: u8,
    pub block_size: usize,
    pub notation: &'static str,
    pub params: usize,
}

impl TunedModel {
    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_notation(self.notation, self.block_size)
    }
}

/// The twelve tuned byte-level architectures, one per scenario and block size.
pub const TUNED: [TunedModel; 12] = [
    TunedModel {
        scenario: 1,
        block_size: 512,
        notation: "E (64) - C1D (128, 27) - MP (4) - AP - D (0.1) - F (256) - F (75)",
        params: 289_995,
    },
    TunedModel {
        scenario: 2,
        block_size: 512,
        notation: "E (48) - C1D (128, 11) - MP (4) - C1D (128, 11) - MP (4) - AP - D (0.1) - F (64) - F (11)",
        params: 269_323,
    },
    TunedModel {
        scenario: 3,
        block_size: 512,
        notation: "E (64) - C1D (128, 27) - MP (2) - C1D (128, 27) - MP (2) - AP - D (0.1) - F (64) - F (25)",
        params: 690_073,
    },
    TunedModel {
        scenario: 4,
        block_size: 512,
        notation: "E (48) - C1D (128, 19) - MP (4) - C1D (128, 19) - MP (4) - AP - D (0.1) - F (256) - F (5)",
        params: 474_885,
    },
    TunedModel {
        scenario: 5,
        block_size: 512,
        notation: "E (64) - C1D (128, 35) - MP (8) - AP - D (0.1) - F (256) - F (2)",
        params: 336_770,
    },
    TunedModel {
        scenario: 6,
        block_size: 512,
        notation: "E (32) - C1D (128, 11) - MP (6) - C1D (128, 11) - MP (6) - AP - D (0.1) - F (64) - F (2)",
        params: 242_114,
    },
    TunedModel {
        scenario: 1,
        block_size: 4096,
        notation: "E (32) - C1D (128, 19) - MP (4) - C1D (128, 19) - MP (4) - AP - D (0.1) - F (256) - F (75)",
        params: 449_867,
    },
    TunedModel {
        scenario: 2,
        block_size: 4096,
        notation: "E (32) - C1D (128, 27) - MP (8) - C1D (128, 27) - MP (8) - AP - D (0.1) - F (256) - F (11)",
        params: 597_259,
    },
    TunedModel {
        scenario: 3,
        block_size: 4096,
        notation: "E (32) - C1D (128, 11) - MP (6) - C1D (128, 11) - MP (6) - C1D (128, 11) - MP (6) - AP - D (0.1) - F (256) - F (25)",
        params: 453_529,
    },
    TunedModel {
        scenario: 4,
        block_size: 4096,
        notation: "E (64) - C1D (128, 27) - MP (6) - C1D (128, 27) - MP (6) - AP - D (0.1) - F (32) - F (5)",
        params: 684_485,
    },
    TunedModel {
        scenario: 5,
        block_size: 4096,
        notation: "E (48) - C1D (32, 35) - MP (6) - C1D (32, 35) - MP (6) - C1D (32, 35) - MP (6) - AP - D (0.1) - F (16) - F (2)",
        params: 138_386,
    },
    TunedModel {
        scenario: 6,
        block_size: 4096,
        notation: "E (16) - C1D (128, 35) - MP (8) - C1D (128, 35) - MP (8) - AP - D (0.1) - F (128) - F (2)",
        params: 666_242,
    },
];

/// Reported size of the co-occurrence baseline.
pub const NN_CO_PARAMS: usize = 44_304_571;

/// The tuned architecture for a scenario and block size, if one exists.
pub fn tuned(scenario: u8, block_size: usize) -> Option<&'static TunedModel> {
    TUNED
        .iter()
        .find(|m| m.scenario == scenario && m.block_size == block_size)
}
