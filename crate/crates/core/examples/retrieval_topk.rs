//! Exact top-k search over unit embeddings, with ties broken by id.

use xmoco::numkit::l2_normalize;
use xmoco::retrieval::{build_index, exhaustive_top_k};

fn main() -> xmoco::Result<()> {
    let rows = [[1.0, 0.0], [0.6, 0.8], [0.6, -0.8], [0.0, 1.0], [-1.0, 0.0]];
    let ids = ["east", "ne", "se", "north", "west"].map(String::from).to_vec();
    let embeddings = rows.iter().map(|r| l2_normalize(r)).collect::<Result<Vec<_>, _>>()?;
    let index = build_index(ids, embeddings)?;

    // "ne" and "se" score the same 0.6 against the query; "ne" sorts first.
    let query = [1.0, 0.0];
    let hits = index.top_k(&query, 3)?;
    for h in &hits {
        println!("{:<6} {:.3}", h.id, h.score);
    }
    assert_eq!(hits, exhaustive_top_k(&index, &query, 3));
    println!("k larger than the index returns all {} rows", index.top_k(&query, 99)?.len());
    Ok(())
}
