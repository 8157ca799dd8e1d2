//! The full model: stroke codec plus relational model sharing one parameter
//! store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{CodecConfig, StrokeCodec, StrokeEmbedding};
use crate::error::Result;
use crate::ink::Stroke;
use crate::params::ParamStore;
use crate::relational::{RelationalConfig, RelationalModel};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    pub relational: RelationalConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.relational.validate()
    }
}

#[derive(Clone, Debug)]
pub struct CoseModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub codec: StrokeCodec,
    pub relational: RelationalModel,
}

impl CoseModel {
    /// Builds the model with parameters initialized from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let codec = StrokeCodec::new(&mut params, &cfg.codec, &mut rng);
        let relational = RelationalModel::new(&mut params, &cfg.relational, cfg.codec.latent_dim, &mut rng);
        Ok(Self { cfg, params, codec, relational })
    }

    pub fn encode(&self, s: &Stroke) -> Result<StrokeEmbedding> {
        Ok(self.codec.encode_batch(&self.params, &[s])?.remove(0))
    }

    pub fn encode_strokes(&self, strokes: &[Stroke]) -> Result<Vec<StrokeEmbedding>> {
        let refs: Vec<&Stroke> = strokes.iter().collect();
        self.codec.encode_batch(&self.params, &refs)
    }

    /// Parameter names belonging to the stroke encoder.
    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("encoder.")
    }
}
