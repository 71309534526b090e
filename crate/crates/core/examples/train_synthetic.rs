//! Trains both towers on the default synthetic corpus and reports held-out
//! recall before and after.
//!
//!     cargo run --release --example train_synthetic [-- epochs]

use std::time::Instant;

use xmoco::data::{generate_synthetic, split, SynthSpec};
use xmoco::retrieval::evaluate;
use xmoco::trainer::{TrainHistory, Trainer};
use xmoco::{EncoderConfig, TrainConfig};

fn main() -> xmoco::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("epochs must be an integer"))
        .unwrap_or(15);

    let data = generate_synthetic(&SynthSpec::default())?;
    let (train, _, test) = split(&data, [0.5, 0.0, 0.5], 0)?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };

    let mut trainer = Trainer::new(&cfg, &EncoderConfig::default_a(), &EncoderConfig::default_b())?;
    let before = evaluate(trainer.state(), &test, &[1, 5, 10])?;
    println!("untrained: {}", before.to_json());

    let started = Instant::now();
    let mut history = TrainHistory::default();
    trainer.run(&train, Some(&test), None, &mut history)?;
    for e in &history.evals {
        println!(
            "step {:>4}  a2b R@1 {:.3}  b2a R@1 {:.3}",
            e.step, e.a2b_r1, e.b2a_r1
        );
    }
    let last = history.steps.last().expect("at least one step");
    println!(
        "{} steps in {:.1}s, final loss {:.4}, tau {:.4}",
        last.step,
        started.elapsed().as_secs_f64(),
        last.loss_total,
        last.tau
    );
    let after = evaluate(trainer.state(), &test, &[1, 5, 10])?;
    println!("trained:   {}", after.to_json());
    Ok(())
}
