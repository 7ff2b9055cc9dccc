//! Task-free online continual learning for visually grounded masked-span
//! prediction: stream construction, a compact cross-modal learner, replay
//! memories and the evaluation of forgetting and compositional generalization.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod replay;
pub mod stream;
pub mod trainers;

pub use error::{Error, Result};
