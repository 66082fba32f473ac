//! Model container: `FRAGNETM`, format version (`u32`), training seed
//! (`u64`), header length (`u32`), a JSON header with the spec and class
//! names, the scalar count (`u64`), then every parameter as a
//! little-endian `f32` in storage order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 8] = b"FRAGNETM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    class_names: Vec<String>,
    param_count: usize,
}

/// A trained model with the names of its classes and the seed it was
/// trained with.
#[derive(Clone, Debug)]
pub struct SavedModel {
    pub model: Model<f32>,
    pub class_names: Vec<String>,
    pub seed: u64,
}

impl SavedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let spec = self.model.spec();
        if self.class_names.len() != spec.n_classes {
            return Err(Error::InvalidInput(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                spec.n_classes
            )));
        }
        let header = serde_json::to_vec(&Header {
            spec: spec.clone(),
            class_names: self.class_names.clone(),
            param_count: self.model.param_count(),
        })?;
        let n = self.model.param_count();
        let mut out = Vec::with_capacity(32 + header.len() + 4 * n);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for p in self.model.params() {
            for v in p.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::format("model file", reason);
        let mut cursor = data;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor.len() < n {
                return Err(bad("truncated".into()));
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        if take(8)? != MODEL_MAGIC {
            return Err(bad("not a model file".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let header_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
        let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let expected = header.spec.param_count()?;
        if n != expected || header.param_count != expected {
            return Err(bad(format!("spec needs {expected} parameters, file declares {n}")));
        }
        let payload = take(4 * n)?;
        if !cursor.is_empty() {
            return Err(bad(format!("{} trailing bytes", cursor.len())));
        }
        if header.class_names.len() != header.spec.n_classes {
            return Err(bad("class names do not match the class count".into()));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let params = header
            .spec
            .param_shapes()?
            .iter()
            .map(|shape| {
                let len = shape.iter().product();
                Tensor::new(shape, values.by_ref().take(len).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SavedModel {
            model: Model::from_params(&header.spec, params)?,
            class_names: header.class_names,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::file(path, e))?;
        SavedModel::from_bytes(&data)
    }
}
