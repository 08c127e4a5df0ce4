use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Ta3nModel};
use crate::autodiff::{GrlConfig, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ta3n-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: a single JSON object. Parameter keys are module paths
/// (`spatial.weight`, `relation.<n>.bias`, `relation_disc.<n>.fc1.weight`, ...),
/// each holding `{"shape": [rows, cols], "data": [...]}` in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub scales: Vec<usize>,
    pub grl: GrlConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &Ta3nModel) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            scales: model.config().scales(),
            grl: model.grl,
            params: model.params.clone(),
        }
    }

    pub fn into_model(self) -> Result<Ta3nModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if self.scales != self.config.scales() {
            return Err(Error::Config(format!("checkpoint scales {:?} disagree with config", self.scales)));
        }
        let mut model = Ta3nModel::from_parts(self.config, self.params)?;
        model.grl = self.grl;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Ta3nModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model)).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Ta3nModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    ckpt.into_model()
}
