//! Single-image snow removal: synthetic degradation, an encoder-decoder
//! restoration network with hand-written backward passes, training, metrics
//! and complexity analysis. Everything runs on CPU with `f32` weights;
//! every numeric routine is generic over `f32`/`f64` so gradient checks and
//! oracles run in double precision.

pub mod bench;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod image_io;
pub mod loss;
pub mod net;
pub mod nn;
pub mod snow;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
