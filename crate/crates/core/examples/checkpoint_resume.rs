//! Stops a run half way, saves a checkpoint, resumes from it and checks the
//! result is bit-identical to an uninterrupted run.

use xmoco::data::{generate_synthetic, SynthSpec};
use xmoco::trainer::{load_checkpoint, save_checkpoint, TrainHistory, Trainer};
use xmoco::{EncoderConfig, TrainConfig};

fn main() -> xmoco::Result<()> {
    let ds = generate_synthetic(&SynthSpec {
        n_pairs: 128,
        input_dim_a: 12,
        input_dim_b: 10,
        latent_dim: 4,
        ..SynthSpec::default()
    })?;
    let cfg = TrainConfig {
        batch_size: 16,
        epochs: 3,
        queue_capacity: 64,
        ..TrainConfig::default()
    };
    let enc = |input_dim, seed| EncoderConfig {
        input_dim,
        hidden_dims: vec![16],
        proj_hidden: 16,
        embed_dim: 8,
        seed,
    };
    let (a, b) = (enc(12, 1), enc(10, 2));

    let mut straight = Trainer::new(&cfg, &a, &b)?;
    straight.run(&ds, None, None, &mut TrainHistory::default())?;

    let dir = std::env::temp_dir().join(format!("xmoco-resume-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| xmoco::Error::Dataset(e.to_string()))?;
    let path = dir.join("half.xmco");
    let mut first = Trainer::new(&cfg, &a, &b)?;
    first.run(&ds, None, Some(11), &mut TrainHistory::default())?;
    save_checkpoint(&path, &first.checkpoint())?;
    println!("saved at step {} ({} bytes)", first.step(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));

    let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path)?)?;
    resumed.run(&ds, None, None, &mut TrainHistory::default())?;
    println!(
        "resumed to step {}; identical to the uninterrupted run: {}",
        resumed.step(),
        resumed == straight
    );
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
