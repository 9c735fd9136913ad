//! Network definitions: the masked audio token Transformer and the duration
//! predictor, with hand-written backward passes in `f64`.

pub mod duration;
pub mod layers;
pub mod network;
pub mod ops;
pub mod params;

pub use duration::{predicted_frames, DurationNet};
pub use network::{Network, NetworkInput, NetworkOutput, OutputGrad, Prefix, SemanticOutput};
pub use params::{ParamId, ParamStore};
