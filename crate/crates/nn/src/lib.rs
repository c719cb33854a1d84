//! Dense neural-network substrate for the piano policies.
//!
//! The crate deliberately stays small: row-major 2-D tensors, the handful
//! of layers the policies need (linear, GELU and friends, layer norm,
//! dropout, softmax attention), explicit forward caches with hand-written
//! backward passes, Adam/AdamW with schedules and EMA shadows, and a
//! versioned checkpoint container. There is no autodiff graph; every
//! network composes layer caches in a struct and runs them in reverse.
//!
//! All arithmetic is 64-bit. Gradient correctness is enforced by central
//! finite differences in the tests, which only discriminate analytic
//! errors cleanly at f64 precision.

pub mod attention;
pub mod checkpoint;
pub mod embed;
pub mod init;
pub mod layers;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use attention::{AttentionCache, AttentionGrads, MultiHeadAttention};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use embed::sinusoidal_embedding;
pub use init::truncated_normal;
pub use layers::{
    softmax_backward, softmax_rows, Activation, Dropout, LayerNorm, LayerNormGrads, Linear,
    LinearGrads,
};
pub use mlp::{Mlp, MlpCache, MlpGrads, MlpSpec};
pub use optim::{cosine_lr, ema_decay, ema_update, AdamConfig, AdamState, OptimizerKind};
pub use tensor::Tensor2;

/// Scalar type used throughout the networks.
pub type Real = f64;

/// Errors shared by the network operations.
#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("cache does not match this network or input")]
    StaleCache,
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
