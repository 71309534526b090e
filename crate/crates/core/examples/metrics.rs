//! Recall@k, NDCG@k and MAP on small hand-checkable rankings.

use std::collections::HashMap;

use xmoco::retrieval::{map_metric, ndcg_at_k, recall_at_k, Gain};
use xmoco::retrieval::{Hit, RankedList};

fn main() -> xmoco::Result<()> {
    let list = |q: &str, ids: &[&str]| RankedList {
        query_id: q.into(),
        hits: ids.iter().map(|id| Hit { id: id.to_string(), score: 0.0 }).collect(),
    };
    let ranked = vec![list("q1", &["t1", "x", "y"]), list("q2", &["x", "y", "t2"])];
    let truth: HashMap<String, String> =
        [("q1", "t1"), ("q2", "t2")].map(|(q, t)| (q.to_string(), t.to_string())).into();
    for k in [1, 3] {
        println!("R@{k} = {:.3}", recall_at_k(&ranked, &truth, k)?);
    }

    // Graded relevance 0..=6 in rank order.
    let graded = vec![vec![6, 0, 3]];
    println!("NDCG@3 linear      = {:.4}", ndcg_at_k(&graded, 3, Gain::Linear)?);
    println!("NDCG@3 exponential = {:.4}", ndcg_at_k(&graded, 3, Gain::Exponential)?);
    println!("MAP (grade > 2)    = {:.4}", map_metric(&graded, 2)?);
    Ok(())
}
