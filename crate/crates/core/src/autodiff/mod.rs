//! Dense reverse-mode differentiation, spectral norms, batchnorm, Adam and
//! checkpoints.

pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod spectral;
pub mod tape;

#[cfg(test)]
mod gradcheck;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNormState, BnMode};
pub use checkpoint::Checkpoint;
pub use spectral::{lipschitz_normalize, spectral_norm, spectral_norm_with, PowerIteration};
pub use tape::{sigmoid, Tape, Var};
