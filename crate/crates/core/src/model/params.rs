use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward inner width.
    pub ffn: usize,
    pub visual_dim: usize,
    pub max_objects: usize,
    pub max_text_len: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 0,
            hidden: 64,
            layers: 2,
            heads: 2,
            ffn: 256,
            visual_dim: 32,
            max_objects: 8,
            max_text_len: 24,
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn", self.ffn),
            ("visual_dim", self.visual_dim),
            ("max_text_len", self.max_text_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::Config(
                "lr must be > 0, weight_decay >= 0, eps > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    fn new(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name,
            shape,
            data: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerLayout {
    pub q_w: usize,
    pub q_b: usize,
    pub k_w: usize,
    pub k_b: usize,
    pub v_w: usize,
    pub v_b: usize,
    pub o_w: usize,
    pub o_b: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// Tensor indices into a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub type_emb: usize,
    pub vis_w: usize,
    pub vis_b: usize,
    pub emb_ln_g: usize,
    pub emb_ln_b: usize,
    pub out_b: usize,
    pub layers: Vec<LayerLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Builds the tensor list and its layout.
///
/// Weights draw from N(0, init_std); biases and layer-norm offsets are zero,
/// layer-norm gains one. The output projection reuses `tok_emb`.
pub fn init_params(cfg: &EncoderConfig) -> Result<(ParamSet, Layout)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tensors = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init, rng: &mut ChaCha8Rng| {
        let mut t = Tensor::new(name, shape);
        match init {
            Init::Normal => {
                for v in &mut t.data {
                    *v = (cfg.init_std * rng.sample::<f64, _>(StandardNormal)) as f32;
                }
            }
            Init::Zeros => {}
            Init::Ones => t.data.fill(1.0),
        }
        tensors.push(t);
        tensors.len() - 1
    };
    let (d, f) = (cfg.hidden, cfg.ffn);
    let tok_emb = add(
        "tok_emb".into(),
        vec![cfg.vocab_size, d],
        Init::Normal,
        &mut rng,
    );
    let pos_emb = add(
        "pos_emb".into(),
        vec![cfg.max_text_len, d],
        Init::Normal,
        &mut rng,
    );
    let type_emb = add("type_emb".into(), vec![2, d], Init::Normal, &mut rng);
    let vis_w = add(
        "vis_w".into(),
        vec![cfg.visual_dim, d],
        Init::Normal,
        &mut rng,
    );
    let vis_b = add("vis_b".into(), vec![d], Init::Zeros, &mut rng);
    let emb_ln_g = add("emb_ln_g".into(), vec![d], Init::Ones, &mut rng);
    let emb_ln_b = add("emb_ln_b".into(), vec![d], Init::Zeros, &mut rng);
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let mut p = |s: &str, shape: Vec<usize>, init: Init| {
            add(format!("layer{l}.{s}"), shape, init, &mut rng)
        };
        layers.push(LayerLayout {
            q_w: p("q_w", vec![d, d], Init::Normal),
            q_b: p("q_b", vec![d], Init::Zeros),
            k_w: p("k_w", vec![d, d], Init::Normal),
            k_b: p("k_b", vec![d], Init::Zeros),
            v_w: p("v_w", vec![d, d], Init::Normal),
            v_b: p("v_b", vec![d], Init::Zeros),
            o_w: p("o_w", vec![d, d], Init::Normal),
            o_b: p("o_b", vec![d], Init::Zeros),
            ln1_g: p("ln1_g", vec![d], Init::Ones),
            ln1_b: p("ln1_b", vec![d], Init::Zeros),
            ff1_w: p("ff1_w", vec![d, f], Init::Normal),
            ff1_b: p("ff1_b", vec![f], Init::Zeros),
            ff2_w: p("ff2_w", vec![f, d], Init::Normal),
            ff2_b: p("ff2_b", vec![d], Init::Zeros),
            ln2_g: p("ln2_g", vec![d], Init::Ones),
            ln2_b: p("ln2_b", vec![d], Init::Zeros),
        });
    }
    let out_b = add("out_b".into(), vec![cfg.vocab_size], Init::Zeros, &mut rng);
    Ok((
        ParamSet { tensors },
        Layout {
            tok_emb,
            pos_emb,
            type_emb,
            vis_w,
            vis_b,
            emb_ln_g,
            emb_ln_b,
            out_b,
            layers,
        },
    ))
}

/// One f64 buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            tensors: params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn from_flat(template: &Gradients, flat: &[f64]) -> Self {
        let mut out = template.clone();
        let mut off = 0;
        for t in &mut out.tensors {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn same_shape(&self, other: &Gradients) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn dot(&self, other: &Gradients) -> f64 {
        debug_assert!(self.same_shape(other));
        self.tensors
            .iter()
            .zip(&other.tensors)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Gradients) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.tensors.iter_mut().flatten() {
            *v *= alpha;
        }
    }

    /// Index of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors
            .iter()
            .position(|t| t.iter().any(|v| !v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 11,
            hidden: 8,
            layers: 1,
            heads: 2,
            ffn: 16,
            visual_dim: 4,
            max_text_len: 6,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_heads_not_dividing_hidden() {
        let c = EncoderConfig { heads: 3, ..cfg() };
        assert!(init_params(&c).is_err());
    }

    #[test]
    fn init_shapes_and_constants() {
        let (p, l) = init_params(&cfg()).unwrap();
        assert_eq!(p.tensors[l.tok_emb].shape, vec![11, 8]);
        assert!(p.tensors[l.layers[0].ln1_g].data.iter().all(|&v| v == 1.0));
        assert!(p.tensors[l.layers[0].q_b].data.iter().all(|&v| v == 0.0));
        assert!(p.all_finite());
        let (q, _) = init_params(&cfg()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn gradient_algebra() {
        let (p, _) = init_params(&cfg()).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.tensors[0][0] = 3.0;
        g.tensors[1][1] = 4.0;
        assert_eq!(g.norm_sq(), 25.0);
        let h = g.clone();
        g.axpy(-2.0, &h);
        assert_eq!(g.tensors[0][0], -3.0);
        assert_eq!(Gradients::from_flat(&g, &g.flatten()), g);
        g.tensors[2][0] = f64::NAN;
        assert_eq!(g.first_non_finite(), Some(2));
    }
}
