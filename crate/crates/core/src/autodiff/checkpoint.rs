//! Versioned JSON checkpoints: named row-major matrices plus optimizer and
//! batchnorm state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::batchnorm::BatchNormState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "fairgraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl TensorRecord {
    pub fn from_array(a: &Array2<f64>) -> Self {
        TensorRecord {
            shape: [a.nrows(), a.ncols()],
            values: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.values.clone())
            .map_err(|e| Error::Structural(format!("checkpoint tensor: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: BTreeMap<String, TensorRecord>,
    pub batchnorm: BTreeMap<String, BatchNormState>,
    pub adam: Option<AdamState>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: BTreeMap::new(),
            batchnorm: BTreeMap::new(),
            adam: None,
            metadata,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, a: &Array2<f64>) {
        self.params.insert(name.into(), TensorRecord::from_array(a));
    }

    pub fn get(&self, name: &str) -> Result<Array2<f64>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Structural(format!("checkpoint has no parameter '{name}'")))?
            .to_array()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn save_load_preserves_bits() {
        let mut ck = Checkpoint::new(serde_json::json!({"seed": 1}));
        let w = array![[0.1, 1.0 / 3.0], [-2.5e-300, 7.0]];
        ck.insert("w", &w);
        ck.batchnorm.insert("bn".into(), BatchNormState::new(2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("w").unwrap(), w);
        assert!(back.get("missing").is_err());
    }

    #[test]
    fn rejects_foreign_format() {
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.version = 99;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
