//! Compares the analytic gradient of the bidirectional loss with central
//! finite differences on a small model with a partly filled queue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmoco::gradcheck::{max_relative_error, numeric_gradient};
use xmoco::numkit::l2_normalize;
use xmoco::{training_step, EncoderConfig, ModalityPair, TwoTowerState};

fn main() -> xmoco::Result<()> {
    let enc = |input_dim, seed| EncoderConfig {
        input_dim,
        hidden_dims: vec![10],
        proj_hidden: 10,
        embed_dim: 8,
        seed,
    };
    let mut state = TwoTowerState::new(&enc(6, 1), &enc(5, 2), 16, 0.05, 0.99)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut unit = |d: usize| l2_normalize(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
    let keys: Vec<Vec<f64>> = (0..10).map(|_| unit(8)).collect::<Result<_, _>>()?;
    state.queue_a.push(&keys)?;
    state.queue_b.push(&keys[..7])?;

    let pairs: Vec<ModalityPair> = (0..4)
        .map(|i| ModalityPair {
            id: format!("p{i}"),
            feat_a: (0..6).map(|k| ((i * 6 + k) as f64 * 0.7).sin()).collect(),
            feat_b: (0..5).map(|k| ((i * 5 + k) as f64 * 0.3).cos()).collect(),
        })
        .collect();
    let batch: Vec<&ModalityPair> = pairs.iter().collect();

    let (out, analytic) = training_step(&state, &batch)?;
    let numeric = numeric_gradient(&state, &batch, 1e-5)?;
    let (worst, name, idx) = max_relative_error(&analytic, &numeric, 1e-3)?;
    println!(
        "loss {:.6} over {} parameters; worst relative error {worst:.2e} at {name}[{idx}]",
        out.loss_total,
        state.trainable().num_values()
    );
    println!(
        "d loss / d log_tau: analytic {:.8}, numeric {:.8}",
        analytic.get("log_tau")?.data()[0],
        numeric.get("log_tau")?.data()[0]
    );
    Ok(())
}
