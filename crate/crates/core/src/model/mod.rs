//! Compact cross-modal masked-token predictor with hand-written gradients.

pub mod checkpoint;
pub mod encoder;
pub mod ops;
pub mod optim;
pub mod params;

pub use encoder::{
    batch_loss, forward, loss_and_grad, predict_span, token_losses, LossOutput, ModelState,
};
pub use optim::{optimizer_step, AdamState};
pub use params::{EncoderConfig, Gradients, LayerLayout, Layout, ParamSet, Tensor};

use crate::corpus::TokenId;

/// Per-position argmax; ties go to the lowest id.
pub fn decode_span(rows: &[Vec<f64>]) -> Vec<TokenId> {
    rows.iter()
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best as TokenId
        })
        .collect()
}
