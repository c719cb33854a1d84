//! Learning algorithms and datasets for the piano task.
//!
//! Three layers sit on top of the environment and network substrate:
//!
//! - [`sac`] trains one specialist per clip with an entropy-regularized
//!   actor-critic: M critics with a min target, tanh-squashed Gaussian
//!   policy ([`policy`]), FIFO replay ([`replay`]).
//! - [`collect`] rolls experts out and runs the relabeling loop that
//!   stores student-visited states with expert actions, persisting
//!   episodes as checksummed shards ([`shard`]).
//! - [`generative`] trains multi-song policies on those shards: a
//!   conditional flow-matching head ([`flow`]) and denoising-diffusion
//!   baselines ([`diffusion`]) over MLP or transformer [`backbone`]s.

pub mod backbone;
pub mod collect;
pub mod diffusion;
pub mod flow;
pub mod generative;
pub mod policy;
pub mod replay;
pub mod sac;
pub mod shard;

pub use pianoforte_core::Real;

/// Errors from trainers and collectors.
#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("checkpoint does not fit this configuration: {0}")]
    CheckpointMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("environment error: {0}")]
    Env(String),
    #[error(transparent)]
    Shard(#[from] shard::ShardError),
    #[error(transparent)]
    Nn(#[from] pianoforte_nn::NnError),
}
