//! Neural network building blocks: flat parameter storage, tensor ops with
//! hand-written backward passes, and the composite blocks built from them.

pub mod blocks;
pub mod ops;
pub mod param;
