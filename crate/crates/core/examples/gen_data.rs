//! Generates a synthetic paired corpus and writes it as JSON Lines.
//!
//!     cargo run --example gen_data -- pairs.jsonl
//!     cargo run --example gen_data -- pairs.jsonl weak

use xmoco::data::{generate_synthetic, load_pairs, save_pairs, CorrelationMode, SynthSpec};

fn main() -> xmoco::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "pairs.jsonl".into());
    let mode = match args.next().as_deref() {
        Some("weak") => CorrelationMode::Weak,
        _ => CorrelationMode::Strong,
    };
    let spec = SynthSpec {
        correlation_mode: mode,
        ..SynthSpec::default()
    };
    let ds = generate_synthetic(&spec)?;
    save_pairs(&ds, &path)?;

    let back = load_pairs(&path)?;
    assert_eq!(back, ds);
    let first = &back.pairs()[0];
    println!(
        "{} pairs, feat_a {:?} dims, feat_b {:?} dims, {mode:?} mode -> {path}",
        back.len(),
        back.dim_a(),
        back.dim_b()
    );
    println!("first id {} feat_a[..3] {:?}", first.id, &first.feat_a[..3]);
    Ok(())
}
