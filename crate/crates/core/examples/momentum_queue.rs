//! The two pieces of state that make the loss differ from a plain in-batch
//! contrastive loss: the EMA key towers and the FIFO negative queues.

use xmoco::moco::momentum_update;
use xmoco::numkit::{ParamSet, Tensor};
use xmoco::NegativeQueue;

fn main() -> xmoco::Result<()> {
    // With the source frozen the gap to it shrinks by m per update.
    let set = |v: f64| -> ParamSet { [("w".to_string(), Tensor::vector(vec![v, -v]).unwrap())].into_iter().collect() };
    let source = set(1.0);
    let mut target = set(0.0);
    for t in 1..=5 {
        momentum_update(&mut target, &source, 0.5)?;
        println!("t={t} gap {:.5} (0.5^t = {:.5})", target.distance(&source)? / source.distance(&set(0.0))?, 0.5f64.powi(t));
    }

    // Capacity 3: the oldest key leaves first.
    let mut q = NegativeQueue::new(3, 2)?;
    let k = |deg: f64| vec![deg.to_radians().cos(), deg.to_radians().sin()];
    q.push(&[k(0.0), k(90.0)])?;
    q.push(&[k(180.0), k(270.0)])?;
    let angles: Vec<i64> = q
        .entries()
        .map(|e| e[1].atan2(e[0]).to_degrees().round() as i64)
        .collect();
    println!("queue after 4 pushes into capacity {}: {angles:?} (total pushed {})", q.capacity(), q.total_pushed());
    Ok(())
}
