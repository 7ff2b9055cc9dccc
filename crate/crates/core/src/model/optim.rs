//! AdamW: bias-corrected adaptive moments with decoupled weight decay.

use super::encoder::ModelState;
use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p`.
pub fn optimizer_step(state: &mut ModelState, grads: &Gradients) -> Result<()> {
    if let Some(i) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(
            state.params.tensors[i].name.clone(),
        ));
    }
    if grads.tensors.len() != state.params.tensors.len() {
        return Err(Error::Config(
            "gradient does not match the parameter set".into(),
        ));
    }
    let cfg = &state.config;
    let (lr, wd, b1, b2, eps) = (cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
    let opt = &mut state.optimizer;
    opt.step += 1;
    let bc1 = 1.0 - b1.powi(opt.step as i32);
    let bc2 = 1.0 - b2.powi(opt.step as i32);
    for (ti, tensor) in state.params.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[ti];
        let m = &mut opt.m[ti];
        let v = &mut opt.v[ti];
        for (k, p) in tensor.data.iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            let old = *p as f64;
            *p = (old - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * old) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{EncoderConfig, Tensor};
    use crate::model::Layout;

    fn scalar_state(p: f32, lr: f64, wd: f64) -> ModelState {
        let params = ParamSet {
            tensors: vec![Tensor {
                name: "p".into(),
                shape: vec![1],
                data: vec![p],
            }],
        };
        ModelState {
            config: EncoderConfig {
                vocab_size: 1,
                lr,
                weight_decay: wd,
                ..Default::default()
            },
            layout: Layout {
                tok_emb: 0,
                pos_emb: 0,
                type_emb: 0,
                vis_w: 0,
                vis_b: 0,
                emb_ln_g: 0,
                emb_ln_b: 0,
                out_b: 0,
                layers: vec![],
            },
            optimizer: AdamState::new(&params),
            params,
        }
    }

    fn grad(g: f64) -> Gradients {
        Gradients {
            tensors: vec![vec![g]],
        }
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut s = scalar_state(0.37, 0.1, 0.0);
        optimizer_step(&mut s, &grad(0.0)).unwrap();
        assert_eq!(s.params.tensors[0].data[0], 0.37);
        assert_eq!(s.optimizer.step, 1);
    }

    #[test]
    fn first_step_hand_evaluated() {
        // m_hat = 1, v_hat = 1, p' = 1 - 0.1 / (1 + 1e-8)
        let mut s = scalar_state(1.0, 0.1, 0.0);
        optimizer_step(&mut s, &grad(1.0)).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.params.tensors[0].data[0] as f64 - expected).abs() < 1e-7);
        assert!((s.params.tensors[0].data[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn pure_decoupled_decay() {
        let mut s = scalar_state(2.0, 0.1, 0.01);
        optimizer_step(&mut s, &grad(0.0)).unwrap();
        let expected = 2.0 * (1.0 - 0.1 * 0.01);
        assert!((s.params.tensors[0].data[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let mut s = scalar_state(1.0, 0.1, 0.0);
        assert!(matches!(
            optimizer_step(&mut s, &grad(f64::INFINITY)),
            Err(Error::NonFiniteGradient(_))
        ));
        assert_eq!(s.optimizer.step, 0);
        assert_eq!(s.params.tensors[0].data[0], 1.0);
    }
}
