//! Self-describing JSON checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::CoseModel;
use crate::params::ParamStore;
use crate::tensor::Mat;
use crate::train::{AdamState, TrainConfig, Trainer};

pub const SCHEMA_VERSION: u32 = 1;

/// File name used when a checkpoint path names a directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub step: usize,
    pub params: Vec<ParamRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let mut ck = Self::from_params(&t.cfg, t.step, &t.model.params);
        ck.optimizer = Some(t.optimizer.clone());
        ck
    }

    pub fn from_params(cfg: &TrainConfig, step: usize, params: &ParamStore) -> Self {
        let params = params
            .iter()
            .map(|(_, name, m)| ParamRecord { name: name.to_string(), shape: [m.rows(), m.cols()], data: m.data().to_vec() })
            .collect();
        Self { schema_version: SCHEMA_VERSION, config: cfg.clone(), step, params, optimizer: None }
    }

    /// Rebuilds the model, checking every stored shape against the one the
    /// configuration implies.
    pub fn model(&self) -> Result<CoseModel> {
        let mut model = CoseModel::new(self.config.model.clone(), self.config.seed)?;
        let mut stored = ParamStore::new();
        for r in &self.params {
            if r.data.len() != r.shape[0] * r.shape[1] {
                return Err(Error::Checkpoint(format!(
                    "parameter {} declares shape {:?} but holds {} values",
                    r.name,
                    r.shape,
                    r.data.len()
                )));
            }
            if stored.id(&r.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {}", r.name)));
            }
            stored.insert(r.name.clone(), Mat::from_vec(r.shape[0], r.shape[1], r.data.clone()));
        }
        model.params.load_from(&stored)?;
        Ok(model)
    }

    pub fn trainer(&self) -> Result<Trainer> {
        let model = self.model()?;
        let optimizer = match &self.optimizer {
            Some(o) => {
                let shapes_match = o.m.len() == model.params.len()
                    && o.v.len() == model.params.len()
                    && model.params.iter().all(|(id, _, p)| {
                        o.m[id.index()].shape() == p.shape() && o.v[id.index()].shape() == p.shape()
                    });
                if !shapes_match {
                    return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
                }
                o.clone()
            }
            None => AdamState::new(&model.params),
        };
        self.config.validate()?;
        Ok(Trainer { cfg: self.config.clone(), model, optimizer, step: self.step })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Checkpoint("missing schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::CheckpointVersion { found: found.min(u32::MAX as u64) as u32, expected: SCHEMA_VERSION });
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// `path` itself if it is a file path, or the checkpoint file inside it if
/// it is a directory (or ends with a separator).
pub fn resolve_path(path: &Path) -> PathBuf {
    if path.is_dir() || path.as_os_str().to_string_lossy().ends_with('/') {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Writes atomically through a temporary file in the same directory.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<PathBuf> {
    let file = resolve_path(path);
    if let Some(dir) = file.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = file.with_extension("json.tmp");
    fs::write(&tmp, ck.to_json()?)?;
    fs::rename(&tmp, &file)?;
    Ok(file)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&fs::read_to_string(resolve_path(path))?)
}

/// Short content hash identifying a checkpoint file.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..6])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::model::ModelConfig;
    use crate::relational::RelationalConfig;

    fn tiny() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                codec: CodecConfig { enc_layers: 1, d_model: 8, d_ff: 8, heads: 2, dec_layers: 1, dec_width: 8, dec_components: 2, ..Default::default() },
                relational: RelationalConfig { layers: 1, d_model: 8, d_ff: 8, heads: 2, gmm_components: 2, ..Default::default() },
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let cfg = tiny();
        let model = CoseModel::new(cfg.model.clone(), 7).unwrap();
        let ck = Checkpoint::from_params(&cfg, 12, &model.params);
        let dir = tempfile::tempdir().unwrap();
        let file = save_checkpoint(&ck, dir.path()).unwrap();
        assert!(file.ends_with(CHECKPOINT_FILE));
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ck);
        let restored = back.model().unwrap();
        for ((_, _, a), (_, _, b)) in model.params.iter().zip(restored.params.iter()) {
            let bits = |m: &Mat| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn tampered_shape_is_an_error() {
        let cfg = tiny();
        let model = CoseModel::new(cfg.model.clone(), 7).unwrap();
        let mut ck = Checkpoint::from_params(&cfg, 0, &model.params);
        ck.params[0].shape[0] += 1;
        assert!(matches!(ck.model(), Err(Error::Checkpoint(_))));
        let mut ck = Checkpoint::from_params(&cfg, 0, &model.params);
        let n = ck.params[0].data.len();
        ck.params[0].shape = [1, n];
        assert!(matches!(ck.model(), Err(Error::Checkpoint(_))));
        let mut ck = Checkpoint::from_params(&cfg, 0, &model.params);
        ck.params.pop();
        assert!(ck.model().is_err());
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let cfg = tiny();
        let model = CoseModel::new(cfg.model.clone(), 7).unwrap();
        let mut ck = Checkpoint::from_params(&cfg, 0, &model.params);
        ck.schema_version = 99;
        let text = ck.to_json().unwrap();
        assert!(matches!(
            Checkpoint::from_json(&text),
            Err(Error::CheckpointVersion { found: 99, expected: SCHEMA_VERSION })
        ));
        assert!(Checkpoint::from_json("{}").is_err());
        assert!(Checkpoint::from_json("not json").is_err());
    }

    #[test]
    fn id_is_stable_hex() {
        assert_eq!(checkpoint_id(b"abc"), checkpoint_id(b"abc"));
        assert_ne!(checkpoint_id(b"abc"), checkpoint_id(b"abd"));
        assert_eq!(checkpoint_id(b"abc").len(), 12);
    }
}
