//! Minimal CPU tensor engine: named parameter storage, layers with hand-derived
//! backward passes, and adaptive-moment optimizers.

pub mod gemm;
pub mod layers;
pub mod optim;
pub mod params;

pub use layers::{Fmap, Tokens};
pub use optim::{Adam, OptimizerKind};
pub use params::{Grads, ParamEntry, ParamId, ParamStore, TensorRole};

#[cfg(test)]
mod gradcheck;
