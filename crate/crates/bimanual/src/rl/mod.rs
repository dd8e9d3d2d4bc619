//! Policy optimization: networks, advantage estimation, the clipped
//! surrogate update, and checkpointing.

pub mod adam;
pub mod checkpoint;
pub mod gae;
pub mod gaussian;
pub mod mlp;
pub mod ppo;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointError};
pub use gae::gae_advantages;
pub use mlp::{Mlp, MlpGrads};
pub use ppo::{
    adaptive_lr, ppo_update, ActorCritic, Optimizer, PpoConfig, RlError, RolloutBuffer,
    UpdateStats,
};
