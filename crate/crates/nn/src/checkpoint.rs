//! JSON checkpoints of trained models.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::network::{Model, ModelConfig};
use crate::params::ParamStore;

const FORMAT: &str = "trussmodal-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Column-major values.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub train_seed: u64,
    pub epoch: usize,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train_seed: u64, epoch: usize) -> Self {
        let tensors =
            model.params.iter().map(|(_, name, v)| Tensor { name: name.to_string(), rows: v.nrows(), cols: v.ncols(), data: v.as_slice().to_vec() }).collect();
        Self { format: FORMAT.into(), version: VERSION, config: model.config.clone(), train_seed, epoch, tensors }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != FORMAT {
            return Err(NnError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut store = ParamStore::new();
        for t in self.tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(NnError::Checkpoint(format!("tensor {} holds {} values for shape {}x{}", t.name, t.data.len(), t.rows, t.cols)));
            }
            store.add(t.name, DMatrix::from_vec(t.rows, t.cols, t.data));
        }
        Model::with_params(self.config, store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    #[test]
    fn round_trip_is_exact() {
        let config = ModelConfig { input_len: 16, hidden_dim: 8, n_modes: 3, n_inducing_points: 4, variant: Variant::SetLstm, ..ModelConfig::default() };
        let model = Model::new(config, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        Checkpoint::from_model(&model, 11, 7).save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!((ck.train_seed, ck.epoch), (11, 7));
        let back = ck.into_model().unwrap();
        assert_eq!(back.params, model.params);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let config = ModelConfig { input_len: 16, hidden_dim: 8, n_modes: 3, n_inducing_points: 4, ..ModelConfig::default() };
        let mut ck = Checkpoint::from_model(&Model::new(config, 1).unwrap(), 0, 0);
        ck.tensors[0].rows += 1;
        let cols = ck.tensors[0].cols;
        ck.tensors[0].data.extend(std::iter::repeat_n(0.0, cols));
        assert!(matches!(ck.into_model(), Err(NnError::Checkpoint(_))));
    }
}
