//! The training step against independent references: finite differences,
//! a naive reimplementation of the forward pass and loss, and modality
//! symmetry.

mod common;

use common::{random_pairs, seeded_state};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xmoco::gradcheck::{max_relative_error, numeric_gradient};
use xmoco::{training_step, EncoderParams, ModalityPair, TwoTowerState};

fn batch_for(seed: u64) -> Vec<ModalityPair> {
    random_pairs(&mut ChaCha8Rng::seed_from_u64(seed + 100), 4, 6, 5)
}

/// Plain nested-loop forward pass straight from the parameter tensors.
#[allow(clippy::needless_range_loop)]
fn naive_encode(enc: &EncoderParams, x: &[f64]) -> Vec<f64> {
    let cfg = enc.config();
    let mut names: Vec<String> = (0..cfg.hidden_dims.len()).map(|i| format!("backbone.{i}")).collect();
    names.push("head.0".into());
    names.push("head.1".into());
    let mut h = x.to_vec();
    for (li, name) in names.iter().enumerate() {
        let w = enc.params().get(&format!("{name}.weight")).unwrap();
        let b = enc.params().get(&format!("{name}.bias")).unwrap();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        assert_eq!(cols, h.len());
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += w.data()[r * cols + c] * h[c];
            }
            out[r] = acc + b.data()[r];
        }
        if li + 1 < names.len() {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = out;
    }
    let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter().map(|v| v / n).collect()
}

/// `-Σ log softmax` of the positive with explicit exponentials.
fn naive_nce(z: &[Vec<f64>], pos: &[Vec<f64>], negs: &[Vec<f64>], tau: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    z.iter()
        .zip(pos)
        .map(|(zi, pi)| {
            let e_pos = (dot(zi, pi) / tau).exp();
            let e_neg: f64 = negs.iter().map(|n| (dot(zi, n) / tau).exp()).sum();
            -(e_pos / (e_pos + e_neg)).ln()
        })
        .sum()
}

#[test]
fn gradients_match_finite_differences_across_seeds() {
    for seed in 0..4 {
        let state = seeded_state(seed, 12);
        let pairs = batch_for(seed);
        let batch: Vec<&ModalityPair> = pairs.iter().collect();
        let (_, analytic) = training_step(&state, &batch).unwrap();
        let numeric = numeric_gradient(&state, &batch, 1e-5).unwrap();
        let (worst, name, i) = max_relative_error(&analytic, &numeric, 1e-3).unwrap();
        assert!(worst < 1e-4, "seed {seed}: {worst:e} at {name}[{i}]");
    }
}

#[test]
fn loss_matches_naive_reimplementation() {
    for seed in 0..6 {
        let state = seeded_state(seed, (seed as usize * 5) % 17);
        let pairs = batch_for(seed);
        let batch: Vec<&ModalityPair> = pairs.iter().collect();
        let (out, _) = training_step(&state, &batch).unwrap();

        let enc_all = |e: &EncoderParams, xs: Vec<&[f64]>| -> Vec<Vec<f64>> {
            xs.into_iter().map(|x| naive_encode(e, x)).collect()
        };
        let fa: Vec<&[f64]> = pairs.iter().map(|p| p.feat_a.as_slice()).collect();
        let fb: Vec<&[f64]> = pairs.iter().map(|p| p.feat_b.as_slice()).collect();
        let z_a = enc_all(&state.query_a, fa.clone());
        let z_b = enc_all(&state.query_b, fb.clone());
        let p_a = enc_all(&state.momentum_a, fa);
        let p_b = enc_all(&state.momentum_b, fb);
        let qa: Vec<Vec<f64>> = state.queue_a.entries().cloned().collect();
        let qb: Vec<Vec<f64>> = state.queue_b.entries().cloned().collect();
        let tau = state.tau();
        let a2b = naive_nce(&z_a, &p_b, &qb, tau);
        let b2a = naive_nce(&z_b, &p_a, &qa, tau);

        for (got, want) in [
            (out.loss_a2b, a2b),
            (out.loss_b2a, b2a),
            (out.loss_total, a2b + b2a),
        ] {
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "seed {seed}: {got} vs {want}");
        }
        for (x, y) in out.z_a.iter().flatten().zip(z_a.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in out.p_b.iter().flatten().zip(p_b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn momentum_towers_and_queues_are_untouched_and_not_differentiated() {
    let state = seeded_state(9, 10);
    let pairs = batch_for(9);
    let batch: Vec<&ModalityPair> = pairs.iter().collect();
    let before = state.clone();
    let (out, grads) = training_step(&state, &batch).unwrap();
    assert_eq!(state, before);
    assert_eq!(out.negatives_a2b, 10);
    assert_eq!(out.negatives_b2a, 10);

    // Gradients cover exactly the trainable set.
    let names: Vec<&str> = grads.names().collect();
    assert_eq!(names, state.trainable().names().collect::<Vec<_>>());
    assert!(names.iter().all(|n| n.starts_with("a.") || n.starts_with("b.") || *n == "log_tau"));

    // Moving the momentum towers changes the loss but not the set of
    // differentiated parameters, and the analytic gradient still matches
    // finite differences taken with the keys held fixed.
    let mut moved = state.clone();
    for (_, t) in moved.momentum_b.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 1.1);
    }
    let (out2, g2) = training_step(&moved, &batch).unwrap();
    assert_ne!(out2.loss_a2b, out.loss_a2b);
    assert_eq!(out2.loss_b2a, out.loss_b2a);
    let numeric = numeric_gradient(&moved, &batch, 1e-5).unwrap();
    let (worst, _, _) = max_relative_error(&g2, &numeric, 1e-3).unwrap();
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn swapping_modalities_swaps_the_loss_terms() {
    for seed in 0..3 {
        let state = seeded_state(seed, 7);
        let pairs = batch_for(seed);
        let swapped_pairs: Vec<ModalityPair> = pairs
            .iter()
            .map(|p| ModalityPair {
                id: p.id.clone(),
                feat_a: p.feat_b.clone(),
                feat_b: p.feat_a.clone(),
            })
            .collect();
        let (out, grads) = training_step(&state, &pairs.iter().collect::<Vec<_>>()).unwrap();
        let swapped: TwoTowerState = state.swapped();
        let (out_s, grads_s) = training_step(&swapped, &swapped_pairs.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(out.loss_a2b, out_s.loss_b2a);
        assert_eq!(out.loss_b2a, out_s.loss_a2b);
        assert_eq!(grads.get("a.head.1.weight").unwrap(), grads_s.get("b.head.1.weight").unwrap());
        assert_eq!(grads.get("b.backbone.0.bias").unwrap(), grads_s.get("a.backbone.0.bias").unwrap());
    }
}
