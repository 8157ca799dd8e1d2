//! Compositional stroke model: a stroke auto-encoder, an order-invariant
//! relational model over stroke embeddings, and the training, evaluation and
//! inference code around them.

pub mod checkpoint;
pub mod codec;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod infer;
pub mod ink;
pub mod model;
pub mod nn;
pub mod params;
pub mod relational;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use codec::{CodecConfig, DecodeMode, ReconstructionObjective, StrokeCodec, StrokeEmbedding};
pub use error::{Error, Result};
pub use gmm::{GmmLayout, GmmParams, ScaleKind};
pub use ink::{Drawing, Point, Stroke};
pub use model::{CoseModel, ModelConfig};
pub use relational::{DrawingContext, Readout, RelationalConfig, RelationalModel};
pub use train::{LrSchedule, StepMetrics, TrainConfig, Trainer};
