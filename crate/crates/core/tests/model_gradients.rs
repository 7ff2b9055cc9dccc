//! Central finite differences against the hand-written backward pass, plus
//! the forward-pass contracts of the encoder.

use drift_core::corpus::Instance;
use drift_core::experiment::checks::{
    max_gradient_error, random_instance, randomize_params, small_encoder_config,
};
use drift_core::model::{
    batch_loss, checkpoint, forward, loss_and_grad, optimizer_step, EncoderConfig, ModelState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> EncoderConfig {
    small_encoder_config()
}

fn check_gradients(batch: &[Instance], state: &ModelState) -> (f64, String) {
    max_gradient_error(state, batch).unwrap()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut state = ModelState::new(cfg.clone()).unwrap();
    randomize_params(&mut state, &mut rng);
    let batch = vec![random_instance(&mut rng, &cfg, 5, (1, 3))];
    let (worst, at) = check_gradients(&batch, &state);
    eprintln!("worst relative error {worst:e} at {at}");
    assert!(worst < 1e-4, "max relative error {worst:e} at {at}");
}

#[test]
fn gradient_check_multi_instance_two_layers() {
    let cfg = EncoderConfig {
        layers: 2,
        ..small_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = ModelState::new(cfg.clone()).unwrap();
    randomize_params(&mut state, &mut rng);
    let batch = vec![
        random_instance(&mut rng, &cfg, 6, (0, 3)),
        random_instance(&mut rng, &cfg, 4, (2, 4)),
    ];
    let (worst, at) = check_gradients(&batch, &state);
    eprintln!("worst relative error {worst:e} at {at}");
    assert!(worst < 1e-4, "max relative error {worst:e} at {at}");
}

#[test]
fn probability_rows_sum_to_one() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let state = ModelState::new(cfg.clone()).unwrap();
    let batch: Vec<Instance> = (0..4)
        .map(|_| random_instance(&mut rng, &cfg, 5, (0, 3)))
        .collect();
    let rows = forward(&state, &batch, false).unwrap();
    assert_eq!(rows.len(), 12);
    for r in rows {
        assert_eq!(r.len(), cfg.vocab_size);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn fresh_default_init_is_near_uniform() {
    let cfg = EncoderConfig {
        init_std: 0.02,
        vocab_size: 100,
        ..small_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let state = ModelState::new(cfg.clone()).unwrap();
    let batch: Vec<Instance> = (0..8)
        .map(|_| random_instance(&mut rng, &cfg, 5, (1, 4)))
        .collect();
    let loss = batch_loss(&state, &batch, false).unwrap();
    assert!((loss - (100f64).ln()).abs() < 0.1, "{loss}");
}

#[test]
fn uniform_predictions_cost_ln_v() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut state = ModelState::new(cfg.clone()).unwrap();
    state.params.tensors[state.layout.tok_emb].data.fill(0.0);
    let batch = vec![random_instance(&mut rng, &cfg, 5, (1, 4))];
    let out = loss_and_grad(&state, &batch, false).unwrap();
    assert!((out.loss - (11f64).ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_predictions_cost_nothing() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut state = ModelState::new(cfg.clone()).unwrap();
    let inst = random_instance(&mut rng, &cfg, 3, (2, 3));
    let label = inst.label_tokens[0] as usize;
    state.params.tensors[state.layout.out_b].data[label] = 200.0;
    let out = loss_and_grad(&state, &[inst], false).unwrap();
    assert!(out.loss < 1e-12);
    // Gradient at the logits is p - onehot, which reaches the output bias unchanged.
    assert!(out.grads.tensors[state.layout.out_b]
        .iter()
        .all(|g| g.abs() < 1e-12));
}

#[test]
fn zero_visual_ignores_feature_content() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut state = ModelState::new(cfg.clone()).unwrap();
    randomize_params(&mut state, &mut rng);
    let a = random_instance(&mut rng, &cfg, 5, (1, 3));
    let mut b = a.clone();
    for v in b
        .image_feature
        .iter_mut()
        .chain(b.object_features.iter_mut().flatten())
    {
        *v = *v * 3.0 + 1.0;
    }
    let ra = forward(&state, &[&a], true).unwrap();
    let rb = forward(&state, &[&b], true).unwrap();
    assert_eq!(ra, rb);
    let ra_vis = forward(&state, &[&a], false).unwrap();
    assert_ne!(ra, ra_vis);
}

#[test]
fn over_length_input_is_rejected() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = ModelState::new(cfg.clone()).unwrap();
    let long = random_instance(&mut rng, &cfg, 7, (1, 3));
    assert!(forward(&state, &[&long], false).is_err());
    let mut crowded = random_instance(&mut rng, &cfg, 5, (1, 3));
    crowded.object_features = vec![crowded.image_feature.clone(); 4];
    assert!(forward(&state, &[&crowded], false).is_err());
}

#[test]
fn training_is_deterministic_and_stays_finite() {
    let cfg = EncoderConfig {
        lr: 1e-2,
        ..small_config()
    };
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<Instance> = (0..16)
            .map(|_| random_instance(&mut rng, &cfg, 5, (1, 3)))
            .collect();
        let mut state = ModelState::new(cfg.clone()).unwrap();
        let first = batch_loss(&state, &data, false).unwrap();
        for step in 0..1000 {
            let batch = &data[(step % 4) * 4..(step % 4) * 4 + 4];
            let out = loss_and_grad(&state, batch, false).unwrap();
            assert!(out.loss.is_finite());
            optimizer_step(&mut state, &out.grads).unwrap();
        }
        assert!(state.params.all_finite());
        let last = batch_loss(&state, &data, false).unwrap();
        assert!(last < first, "{first} -> {last}");
        state
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut state = ModelState::new(cfg).unwrap();
    randomize_params(&mut state, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&state, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    for (a, b) in state.params.tensors.iter().zip(&back.params.tensors) {
        assert_eq!(a.name, b.name);
        let bits_a: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
    let bytes = std::fs::read(&path).unwrap();
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}
