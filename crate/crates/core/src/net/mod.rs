//! Architecture descriptions, model construction and parameter counting,
//! training and inference for the convolutional byte classifier and the two
//! feature-based baselines.

mod builder;
mod io;
mod model;
mod spec;
mod train;

pub use builder::{
    build_model, build_model_strided, build_nn_co, build_nn_gf, tuned, HyperParams, TunedModel, CONV_BLOCKS,
    CONV_FILTERS, CONV_WIDTHS, DENSE_UNITS, DROPOUT, EMBEDDING_DIMS, NN_CO_PARAMS, POOL_SIZES, TUNED,
};
pub use io::{SavedModel, FORMAT_VERSION, MODEL_MAGIC};
pub use model::{Forward, Model, EMBEDDING_INIT};
pub use spec::{ActShape, InputKind, LayerSpec, ModelSpec, BYTE_VOCAB, LEAKY_SLOPE};
pub use train::{
    evaluate, train, write_history_csv, Adam, EpochRecord, Evaluation, TrainConfig, TrainOutcome, EVAL_BATCH,
};
