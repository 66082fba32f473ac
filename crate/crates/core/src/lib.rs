//! Block-level file-type identification: a byte-embedding convolutional
//! classifier built on a small autodiff core, hand-crafted feature
//! baselines, corpus tooling, and a discrete Tree-structured Parzen
//! Estimator for architecture search.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod features;
pub mod net;
pub mod tensor;
pub mod tpe;

pub use error::{Error, Result};
