#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmoco::data::{generate_synthetic, SynthSpec};
use xmoco::numkit::l2_normalize;
use xmoco::{EncoderConfig, ModalityPair, PairDataset, TrainConfig, TwoTowerState};

pub fn enc(input_dim: usize, embed_dim: usize, seed: u64) -> EncoderConfig {
    EncoderConfig {
        input_dim,
        hidden_dims: vec![10],
        proj_hidden: 10,
        embed_dim,
        seed,
    }
}

pub fn unit_vectors(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            l2_normalize(&v).expect("nonzero")
        })
        .collect()
}

pub fn random_pairs(rng: &mut ChaCha8Rng, n: usize, dim_a: usize, dim_b: usize) -> Vec<ModalityPair> {
    (0..n)
        .map(|i| ModalityPair {
            id: format!("p{i:03}"),
            feat_a: (0..dim_a).map(|_| rng.random_range(-1.5..1.5)).collect(),
            feat_b: (0..dim_b).map(|_| rng.random_range(-1.5..1.5)).collect(),
        })
        .collect()
}

/// State with embed 8, queue capacity 16, both queues holding `fill` random
/// keys, and momentum towers moved away from the query towers.
pub fn seeded_state(seed: u64, fill: usize) -> TwoTowerState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = TwoTowerState::new(&enc(6, 8, seed * 2 + 1), &enc(5, 8, seed * 2 + 2), 16, 0.05, 0.99).unwrap();
    for (_, t) in s.momentum_a.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    for (_, t) in s.momentum_b.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let keys = unit_vectors(&mut rng, fill, 8);
    s.queue_a.push(&keys).unwrap();
    let keys = unit_vectors(&mut rng, fill, 8);
    s.queue_b.push(&keys).unwrap();
    s
}

pub fn small_dataset(n: usize) -> PairDataset {
    generate_synthetic(&SynthSpec {
        n_pairs: n,
        latent_dim: 4,
        input_dim_a: 12,
        input_dim_b: 10,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn small_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 3,
        queue_capacity: 64,
        eval_every: 5,
        ..TrainConfig::default()
    }
}

pub fn small_encoders() -> (EncoderConfig, EncoderConfig) {
    (
        EncoderConfig {
            input_dim: 12,
            hidden_dims: vec![16],
            proj_hidden: 16,
            embed_dim: 8,
            seed: 1,
        },
        EncoderConfig {
            input_dim: 10,
            hidden_dims: vec![16],
            proj_hidden: 16,
            embed_dim: 8,
            seed: 2,
        },
    )
}
