//! Skill learning from offline trajectories and KL-regularized transfer.
//!
//! The crate is organized around a three-level latent model: a discrete
//! high-level skill selector, per-skill continuous mid-level latents, and a
//! latent-conditioned low-level controller. Skills are learned offline from
//! demonstration data and then reused by off-policy RL agents on new tasks
//! inside a small planar manipulation simulator.
//!
//! Modules:
//! - [`numerics`]: dense f64 tensors, a per-step reverse-mode tape,
//!   distribution math, Adam, and checkpoint I/O.
//! - [`simenv`]: the 2-D gripper/blocks world, reward primitives, staged
//!   task rewards, and a scripted stacking expert.
//! - [`datasets`]: episode storage, information-asymmetric views, and
//!   fixed-length training windows.
//! - [`skillmodel`]: the hierarchical mixture model, its marginalized
//!   evidence bound, offline training, and behavior cloning.
//! - [`transfer`]: replay, trust-region policy optimization for categorical
//!   and mixture agents, baselines, and exploration analysis.
//! - [`cli`]: the command-line pipeline.

pub mod cli;
pub mod datasets;
pub mod numerics;
pub mod simenv;
pub mod skillmodel;
pub mod transfer;

/// Crate-wide error type. Variants map onto process exit codes in the CLI:
/// `Config` exits 2, everything else exits 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed data: {0}")]
    Data(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
