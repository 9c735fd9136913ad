//! Masked generative modelling of multi-layer audio token grids, with
//! semantic distillation, guided iterative decoding and a duration
//! predictor, exercised end to end on a deterministic synthetic token world.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod masking;
pub mod nn;
pub mod objectives;
pub mod rng;
pub mod sampler;
pub mod toy_world;
pub mod trainer;
pub mod types;

pub use config::{ExperimentConfig, ModelConfig, SamplerConfig, SkdMode, TrainConfig, Variant};
pub use error::{Error, Result};
pub use rng::SeededRng;
pub use types::{MaskGrid, PhonemeSeq, Rate, SpeakerEmbedding, Split, TokenGrid, Utterance};
