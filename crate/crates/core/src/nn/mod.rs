//! Small fully-connected direction-field network with exact reverse-mode
//! gradients and an Adam optimizer.
//!
//! The network takes `depth` (space, time) slots. Every slot has its own
//! linear layer for the space input and its own sinusoidal embedding plus
//! linear layer for the time input. The slot representations are
//! concatenated, passed through the activation, and then through a shared
//! fully-connected trunk whose last layer emits a `space_dim` vector.

mod adam;
mod checkpoint;
mod embed;
mod gemm;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use embed::{embedding_frequency, sinusoidal_embed, sinusoidal_embed_into};
pub use mlp::{finite_diff_grad, Activation, Batch, Mlp, MlpConfig, Workspace};
