//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{GnnModel, LayerPlan, NormStats};

pub const FORMAT: &str = "cfmm-gnn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub plan: LayerPlan,
    pub norm: NormStats,
    /// SHA-256 of the canonical training configuration.
    pub config_fingerprint: String,
    pub init: String,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_model(model: &GnnModel, config_fingerprint: impl Into<String>, init: impl Into<String>) -> Self {
        let tensors = model
            .layout()
            .blocks()
            .iter()
            .map(|b| TensorRecord {
                name: b.name.clone(),
                shape: b.shape.clone(),
                data: model.params()[b.offset..b.offset + b.len()].to_vec(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            plan: model.plan().clone(),
            norm: model.norm,
            config_fingerprint: config_fingerprint.into(),
            init: init.into(),
            tensors,
            epoch: None,
            best_val_loss: None,
            adam: None,
        }
    }

    pub fn to_model(&self) -> Result<GnnModel> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {} v{}",
                self.format, self.version
            )));
        }
        let mut model = GnnModel::from_params(
            self.plan.clone(),
            vec![0.0; super::ParamLayout::new(&self.plan)?.len()],
            self.norm,
        )?;
        let blocks = model.layout().blocks().to_vec();
        if blocks.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, plan needs {}",
                self.tensors.len(),
                blocks.len()
            )));
        }
        for (b, t) in blocks.iter().zip(&self.tensors) {
            if b.name != t.name || b.shape != t.shape || t.data.len() != b.len() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, b.name, b.shape
                )));
            }
            model.params_mut()[b.offset..b.offset + b.len()].copy_from_slice(&t.data);
        }
        if let Some(adam) = &self.adam {
            if adam.m.len() != model.num_params() || adam.v.len() != model.num_params() {
                return Err(Error::Shape("optimizer state does not match parameter count".into()));
            }
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        if self.tensors.iter().flat_map(|t| &t.data).any(|v| !v.is_finite()) {
            return Err(Error::Domain("refusing to serialize non-finite parameters".into()));
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let tmp = path.with_extension("json.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                location: path.display().to_string(),
                message: j.to_string(),
            },
            other => other,
        })
    }
}
