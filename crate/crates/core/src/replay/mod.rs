//! Fixed-capacity replay memory with reservoir and distribution-balancing
//! write policies, uniform and interference-based reads, and the per-word
//! forgetting tracker.

pub mod balanced;
pub mod memory;
pub mod mir;
pub mod tracker;

pub use balanced::{
    balanced_update, smoothed_kl, target_distribution, BalancePolicy, BalancedOutcome,
    BalancedStep, KL_SMOOTHING,
};
pub use memory::{reservoir_update, sample_batch, sample_indices, MemorySidecar, ReplayMemory};
pub use mir::{interference_deltas, mir_select, mir_select_with, MirVariant};
pub use tracker::{tracker_update, ForgettingTracker, DEFAULT_FORGET_DECAY};
