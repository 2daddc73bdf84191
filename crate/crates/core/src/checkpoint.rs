//! Parameter checkpoints: head name → list of named tensors (shape + flat data).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("parameter `{0}` missing from checkpoint")]
    Missing(String),
    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("parameter `{0}`: data length does not match shape")]
    Length(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Free-form description of what produced the parameters (model spec, epoch, …).
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub heads: BTreeMap<String, Vec<TensorRecord>>,
}

/// Head a parameter belongs to: the part of its name before the first `.`.
fn head_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: serde_json::Value) -> Self {
        let mut heads: BTreeMap<String, Vec<TensorRecord>> = BTreeMap::new();
        for (name, t) in store.names().iter().zip(store.tensors()) {
            heads.entry(head_of(name).to_string()).or_default().push(TensorRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            });
        }
        Self { format_version: CHECKPOINT_FORMAT_VERSION, metadata, heads }
    }

    /// Copies every parameter of `store` from the checkpoint, matching by name
    /// and checking shapes.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::Version(self.format_version));
        }
        let by_name: BTreeMap<&str, &TensorRecord> =
            self.heads.values().flatten().map(|r| (r.name.as_str(), r)).collect();
        let names = store.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let rec = by_name.get(name.as_str()).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let target = &mut store.tensors_mut()[i];
            if rec.shape != target.shape() {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    expected: target.shape().to_vec(),
                    found: rec.shape.clone(),
                });
            }
            let t = Tensor::try_new(rec.shape.clone(), rec.data.clone())
                .ok_or_else(|| CheckpointError::Length(name.clone()))?;
            *target = t;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(CheckpointError::Version(ck.format_version));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("potential.0.weight", Tensor::matrix(1, 2, vec![0.5, -1.0]));
        s.add("potential.0.bias", Tensor::vector(vec![0.1, 0.2]));
        s.add("encoder.0.weight", Tensor::matrix(2, 1, vec![3.0, 4.0]));
        s
    }

    #[test]
    fn groups_by_head_and_restores() {
        let s = store();
        let ck = Checkpoint::from_store(&s, serde_json::json!({"variant": "vv-fvin"}));
        assert_eq!(ck.heads.keys().collect::<Vec<_>>(), ["encoder", "potential"]);
        assert_eq!(ck.heads["potential"].len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let mut fresh = store();
        for t in fresh.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        loaded.restore_into(&mut fresh).unwrap();
        assert_eq!(fresh, s);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ck = Checkpoint::from_store(&store(), serde_json::Value::Null);
        ck.heads.get_mut("encoder").unwrap()[0].shape = vec![1, 2];
        let mut s = store();
        assert!(matches!(ck.restore_into(&mut s), Err(CheckpointError::Shape { .. })));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut ck = Checkpoint::from_store(&store(), serde_json::Value::Null);
        ck.format_version = 99;
        assert!(matches!(ck.restore_into(&mut store()), Err(CheckpointError::Version(99))));
    }
}
