//! Cross-modal masked-span predictor: visual slots (image + objects) and text
//! tokens share one bidirectional transformer encoder (post-LN), and masked
//! text positions are decoded through the tied token embedding.

use std::borrow::Borrow;

use super::ops::{self, LnCache};
use super::optim::AdamState;
use super::params::{init_params, EncoderConfig, Gradients, LayerLayout, Layout, ParamSet};
use crate::corpus::{Instance, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: EncoderConfig,
    pub layout: Layout,
    pub params: ParamSet,
    pub optimizer: AdamState,
}

impl ModelState {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let (params, layout) = init_params(&config)?;
        let optimizer = AdamState::new(&params);
        Ok(ModelState {
            config,
            layout,
            params,
            optimizer,
        })
    }

    fn w(&self, idx: usize) -> &[f32] {
        &self.params.tensors[idx].data
    }

    fn validate(&self, inst: &Instance) -> Result<()> {
        let c = &self.config;
        if inst.tokens.len() > c.max_text_len {
            return Err(Error::InputTooLong {
                what: "tokens",
                got: inst.tokens.len(),
                limit: c.max_text_len,
            });
        }
        if inst.object_features.len() > c.max_objects {
            return Err(Error::InputTooLong {
                what: "object_features",
                got: inst.object_features.len(),
                limit: c.max_objects,
            });
        }
        for v in std::iter::once(&inst.image_feature).chain(&inst.object_features) {
            if v.len() != c.visual_dim {
                return Err(Error::DimensionMismatch {
                    what: "visual feature".into(),
                    expected: c.visual_dim,
                    got: v.len(),
                });
            }
        }
        if let Some(&t) = inst.tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
            return Err(Error::DimensionMismatch {
                what: format!("token id {t} vs vocabulary"),
                expected: c.vocab_size,
                got: t as usize + 1,
            });
        }
        if inst.mask_span.end > inst.tokens.len() || inst.mask_span.is_empty() {
            return Err(Error::Schema("mask span out of range".into()));
        }
        Ok(())
    }
}

struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads x n x n attention weights.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
    ln2: LnCache,
}

struct ForwardCache {
    n_vis: usize,
    n: usize,
    visual: Vec<f64>,
    token_ids: Vec<u32>,
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    output: Vec<f64>,
    /// Row-major probabilities for each masked position.
    probs: Vec<Vec<f64>>,
    /// log-sum-exp of each masked row's logits.
    lse: Vec<f64>,
    logits: Vec<Vec<f64>>,
}

fn forward_one(state: &ModelState, inst: &Instance, zero_visual: bool) -> Result<ForwardCache> {
    state.validate(inst)?;
    let cfg = &state.config;
    let lay = &state.layout;
    let d = cfg.hidden;
    let n_vis = 1 + inst.object_features.len();
    let n_tok = inst.tokens.len();
    let n = n_vis + n_tok;

    let mut visual = vec![0.0; n_vis * cfg.visual_dim];
    if !zero_visual {
        for (row, feat) in std::iter::once(&inst.image_feature)
            .chain(&inst.object_features)
            .enumerate()
        {
            for (dst, &src) in visual[row * cfg.visual_dim..(row + 1) * cfg.visual_dim]
                .iter_mut()
                .zip(feat)
            {
                *dst = src as f64;
            }
        }
    }
    let vis = ops::linear(
        &visual,
        n_vis,
        cfg.visual_dim,
        state.w(lay.vis_w),
        state.w(lay.vis_b),
        d,
    );

    let token_ids: Vec<u32> = inst
        .tokens
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            if inst.mask_span.range().contains(&j) {
                Vocabulary::MASK
            } else {
                t
            }
        })
        .collect();

    let tok = state.w(lay.tok_emb);
    let pos = state.w(lay.pos_emb);
    let typ = state.w(lay.type_emb);
    let mut x = vec![0.0; n * d];
    for i in 0..n_vis {
        for c in 0..d {
            x[i * d + c] = vis[i * d + c] + typ[c] as f64;
        }
    }
    for (j, &t) in token_ids.iter().enumerate() {
        let row = n_vis + j;
        let t = t as usize;
        for c in 0..d {
            x[row * d + c] = tok[t * d + c] as f64 + pos[j * d + c] as f64 + typ[d + c] as f64;
        }
    }
    let (mut h, emb_ln) = ops::layer_norm(&x, n, d, state.w(lay.emb_ln_g), state.w(lay.emb_ln_b));

    let mut layers = Vec::with_capacity(cfg.layers);
    for ll in &lay.layers {
        let (out, cache) = layer_forward(state, ll, h, n);
        layers.push(cache);
        h = out;
    }

    let v = cfg.vocab_size;
    let out_b = state.w(lay.out_b);
    let mut probs = Vec::with_capacity(inst.mask_span.len());
    let mut lse = Vec::with_capacity(inst.mask_span.len());
    let mut logits_all = Vec::with_capacity(inst.mask_span.len());
    for j in inst.mask_span.range() {
        let hr = &h[(n_vis + j) * d..(n_vis + j + 1) * d];
        let mut logits: Vec<f64> = (0..v)
            .map(|t| {
                let e = &tok[t * d..(t + 1) * d];
                hr.iter().zip(e).map(|(a, &b)| a * b as f64).sum::<f64>() + out_b[t] as f64
            })
            .collect();
        logits_all.push(logits.clone());
        lse.push(ops::softmax_in_place(&mut logits));
        probs.push(logits);
    }

    Ok(ForwardCache {
        n_vis,
        n,
        visual,
        token_ids,
        emb_ln,
        layers,
        output: h,
        probs,
        lse,
        logits: logits_all,
    })
}

fn layer_forward(
    state: &ModelState,
    ll: &LayerLayout,
    input: Vec<f64>,
    n: usize,
) -> (Vec<f64>, LayerCache) {
    let cfg = &state.config;
    let (d, f, heads, dh) = (cfg.hidden, cfg.ffn, cfg.heads, cfg.head_dim());
    let q = ops::linear(&input, n, d, state.w(ll.q_w), state.w(ll.q_b), d);
    let k = ops::linear(&input, n, d, state.w(ll.k_w), state.w(ll.k_b), d);
    let v = ops::linear(&input, n, d, state.w(ll.v_w), state.w(ll.v_b), d);
    let scale = 1.0 / (dh as f64).sqrt();

    let mut probs = vec![0.0; heads * n * n];
    let mut ctx = vec![0.0; n * d];
    for hd in 0..heads {
        let off = hd * dh;
        for i in 0..n {
            let row = &mut probs[(hd * n + i) * n..(hd * n + i + 1) * n];
            let qi = &q[i * d + off..i * d + off + dh];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            ops::softmax_in_place(row);
            let ci = &mut ctx[i * d + off..i * d + off + dh];
            for (j, &p) in row.iter().enumerate() {
                let vj = &v[j * d + off..j * d + off + dh];
                for (c, &vv) in ci.iter_mut().zip(vj) {
                    *c += p * vv;
                }
            }
        }
    }
    let a = ops::linear(&ctx, n, d, state.w(ll.o_w), state.w(ll.o_b), d);
    let r1: Vec<f64> = input.iter().zip(&a).map(|(x, y)| x + y).collect();
    let (h1, ln1) = ops::layer_norm(&r1, n, d, state.w(ll.ln1_g), state.w(ll.ln1_b));
    let u = ops::linear(&h1, n, d, state.w(ll.ff1_w), state.w(ll.ff1_b), f);
    let g: Vec<f64> = u.iter().map(|&x| ops::gelu(x)).collect();
    let ff = ops::linear(&g, n, f, state.w(ll.ff2_w), state.w(ll.ff2_b), d);
    let r2: Vec<f64> = h1.iter().zip(&ff).map(|(x, y)| x + y).collect();
    let (out, ln2) = ops::layer_norm(&r2, n, d, state.w(ll.ln2_g), state.w(ll.ln2_b));
    (
        out,
        LayerCache {
            input,
            q,
            k,
            v,
            probs,
            ctx,
            ln1,
            h1,
            u,
            g,
            ln2,
        },
    )
}

fn layer_backward(
    state: &ModelState,
    ll: &LayerLayout,
    cache: &LayerCache,
    dout: Vec<f64>,
    n: usize,
    grads: &mut Gradients,
) -> Vec<f64> {
    let cfg = &state.config;
    let (d, f, heads, dh) = (cfg.hidden, cfg.ffn, cfg.heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();
    let t = &mut grads.tensors;

    let (dg2, db2) = pair_mut(t, ll.ln2_g, ll.ln2_b);
    let dr2 = ops::layer_norm_backward(&dout, &cache.ln2, n, d, state.w(ll.ln2_g), dg2, db2);
    // r2 = h1 + ff
    let (dw, db) = pair_mut(t, ll.ff2_w, ll.ff2_b);
    let dg = ops::linear_backward(&cache.g, &dr2, n, f, d, state.w(ll.ff2_w), dw, db);
    let du: Vec<f64> = dg
        .iter()
        .zip(&cache.u)
        .map(|(a, &u)| a * ops::gelu_grad(u))
        .collect();
    let (dw, db) = pair_mut(t, ll.ff1_w, ll.ff1_b);
    let mut dh1 = ops::linear_backward(&cache.h1, &du, n, d, f, state.w(ll.ff1_w), dw, db);
    for (a, b) in dh1.iter_mut().zip(&dr2) {
        *a += b;
    }
    let (dg1, db1) = pair_mut(t, ll.ln1_g, ll.ln1_b);
    let dr1 = ops::layer_norm_backward(&dh1, &cache.ln1, n, d, state.w(ll.ln1_g), dg1, db1);
    // r1 = input + attn
    let (dw, db) = pair_mut(t, ll.o_w, ll.o_b);
    let dctx = ops::linear_backward(&cache.ctx, &dr1, n, d, d, state.w(ll.o_w), dw, db);

    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dp = vec![0.0; n];
    for hd in 0..heads {
        let off = hd * dh;
        for i in 0..n {
            let p = &cache.probs[(hd * n + i) * n..(hd * n + i + 1) * n];
            let dci = &dctx[i * d + off..i * d + off + dh];
            for j in 0..n {
                let vj = &cache.v[j * d + off..j * d + off + dh];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                let dvj = &mut dv[j * d + off..j * d + off + dh];
                for (g, &c) in dvj.iter_mut().zip(dci) {
                    *g += p[j] * c;
                }
            }
            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..n {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + off + c] += ds * cache.k[j * d + off + c];
                    dk[j * d + off + c] += ds * cache.q[i * d + off + c];
                }
            }
        }
    }
    let mut dinput = dr1;
    for (proj_w, proj_b, dproj) in [
        (ll.q_w, ll.q_b, &dq),
        (ll.k_w, ll.k_b, &dk),
        (ll.v_w, ll.v_b, &dv),
    ] {
        let (dw, db) = pair_mut(t, proj_w, proj_b);
        let dx = ops::linear_backward(&cache.input, dproj, n, d, d, state.w(proj_w), dw, db);
        for (a, b) in dinput.iter_mut().zip(&dx) {
            *a += b;
        }
    }
    dinput
}

fn pair_mut(t: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b, "layout places weights before biases");
    let (lo, hi) = t.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Backpropagates `dlogits` (one row per masked position) through the encoder.
fn backward_one(
    state: &ModelState,
    inst: &Instance,
    cache: &ForwardCache,
    dlogits: &[Vec<f64>],
    grads: &mut Gradients,
) {
    let cfg = &state.config;
    let lay = &state.layout;
    let d = cfg.hidden;
    let (n, n_vis) = (cache.n, cache.n_vis);
    let tok = state.w(lay.tok_emb);

    let mut dh = vec![0.0; n * d];
    for (row_i, j) in inst.mask_span.range().enumerate() {
        let r = n_vis + j;
        let hr = &cache.output[r * d..(r + 1) * d];
        let dl = &dlogits[row_i];
        {
            let dob = &mut grads.tensors[lay.out_b];
            for (g, &x) in dob.iter_mut().zip(dl) {
                *g += x;
            }
        }
        let dtok = &mut grads.tensors[lay.tok_emb];
        let dhr = &mut dh[r * d..(r + 1) * d];
        for (t, &g) in dl.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let e = &tok[t * d..(t + 1) * d];
            let de = &mut dtok[t * d..(t + 1) * d];
            for c in 0..d {
                de[c] += g * hr[c];
                dhr[c] += g * e[c] as f64;
            }
        }
    }

    for (ll, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        dh = layer_backward(state, ll, lc, dh, n, grads);
    }

    let (dg, db) = pair_mut(&mut grads.tensors, lay.emb_ln_g, lay.emb_ln_b);
    let dx = ops::layer_norm_backward(&dh, &cache.emb_ln, n, d, state.w(lay.emb_ln_g), dg, db);

    let dvis = &dx[..n_vis * d];
    {
        let dtype = &mut grads.tensors[lay.type_emb];
        for i in 0..n {
            let seg = if i < n_vis { 0 } else { d };
            for c in 0..d {
                dtype[seg + c] += dx[i * d + c];
            }
        }
    }
    {
        let (dw, db) = pair_mut(&mut grads.tensors, lay.vis_w, lay.vis_b);
        ops::linear_backward(
            &cache.visual,
            dvis,
            n_vis,
            cfg.visual_dim,
            d,
            state.w(lay.vis_w),
            dw,
            db,
        );
    }
    for (j, &t) in cache.token_ids.iter().enumerate() {
        let src = &dx[(n_vis + j) * d..(n_vis + j + 1) * d];
        let t = t as usize;
        for c in 0..d {
            grads.tensors[lay.tok_emb][t * d + c] += src[c];
            grads.tensors[lay.pos_emb][j * d + c] += src[c];
        }
    }
}

/// Probability rows over the vocabulary for every masked position of every
/// instance, instance-major.
pub fn forward<I: Borrow<Instance>>(
    state: &ModelState,
    batch: &[I],
    zero_visual: bool,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for inst in batch {
        rows.extend(forward_one(state, inst.borrow(), zero_visual)?.probs);
    }
    Ok(rows)
}

/// Probability rows for one instance's masked span.
pub fn predict_span(
    state: &ModelState,
    inst: &Instance,
    zero_visual: bool,
) -> Result<Vec<Vec<f64>>> {
    Ok(forward_one(state, inst, zero_visual)?.probs)
}

/// Per-token cross-entropy `-log p(label)` for each instance's masked span.
pub fn token_losses<I: Borrow<Instance>>(
    state: &ModelState,
    batch: &[I],
    zero_visual: bool,
) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|inst| {
            let inst = inst.borrow();
            let cache = forward_one(state, inst, zero_visual)?;
            Ok(inst
                .label_tokens
                .iter()
                .enumerate()
                .map(|(r, &y)| cache.lse[r] - cache.logits[r][y as usize])
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean cross-entropy over all masked tokens of the batch.
    pub loss: f64,
    pub grads: Gradients,
    pub token_losses: Vec<Vec<f64>>,
}

pub fn loss_and_grad<I: Borrow<Instance>>(
    state: &ModelState,
    batch: &[I],
    zero_visual: bool,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Config(
            "loss_and_grad needs a non-empty batch".into(),
        ));
    }
    let total: usize = batch.iter().map(|i| i.borrow().mask_span.len()).sum();
    let inv = 1.0 / total as f64;
    let mut grads = Gradients::zeros_like(&state.params);
    let mut loss = 0.0;
    let mut token_losses = Vec::with_capacity(batch.len());
    for inst in batch {
        let inst = inst.borrow();
        let cache = forward_one(state, inst, zero_visual)?;
        let mut losses = Vec::with_capacity(inst.label_tokens.len());
        let dlogits: Vec<Vec<f64>> = inst
            .label_tokens
            .iter()
            .enumerate()
            .map(|(r, &y)| {
                let l = cache.lse[r] - cache.logits[r][y as usize];
                losses.push(l);
                loss += l;
                let mut g: Vec<f64> = cache.probs[r].iter().map(|p| p * inv).collect();
                g[y as usize] -= inv;
                g
            })
            .collect();
        backward_one(state, inst, &cache, &dlogits, &mut grads);
        token_losses.push(losses);
    }
    Ok(LossOutput {
        loss: loss * inv,
        grads,
        token_losses,
    })
}

/// Mean masked-token cross-entropy without gradients.
pub fn batch_loss<I: Borrow<Instance>>(
    state: &ModelState,
    batch: &[I],
    zero_visual: bool,
) -> Result<f64> {
    let losses = token_losses(state, batch, zero_visual)?;
    let n: usize = losses.iter().map(Vec::len).sum();
    Ok(losses.iter().flatten().sum::<f64>() / n.max(1) as f64)
}
