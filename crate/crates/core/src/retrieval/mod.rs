//! Exact dot-product retrieval over unit-norm embeddings and the evaluation
//! suite built on it (recall@k in both directions, NDCG@k, MAP).

mod metrics;

pub use metrics::{average_precision, dcg_at_k, map_metric, ndcg_at_k, recall_at_k, Gain, MAX_GRADE};

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::PairDataset;
use crate::error::{Error, Result};
use crate::moco::TwoTowerState;
use crate::numkit;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Candidates for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// Immutable `N x d` table of unit-norm rows keyed by unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

pub fn build_index(ids: Vec<String>, embeddings: Vec<Vec<f64>>) -> Result<RetrievalIndex> {
    if ids.len() != embeddings.len() {
        return Err(Error::ShapeMismatch {
            op: "build_index",
            left: vec![ids.len()],
            right: vec![embeddings.len()],
        });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate id `{id}` in index")));
        }
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(dim * embeddings.len());
    for (i, row) in embeddings.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::at_index(
                i,
                Error::ShapeMismatch {
                    op: "index row",
                    left: vec![dim],
                    right: vec![row.len()],
                },
            ));
        }
        let n = numkit::norm(row);
        if (n - 1.0).abs() > UNIT_TOL || n.is_nan() {
            return Err(Error::at_index(
                i,
                Error::InvalidArgument(format!("row `{}` has norm {n}, expected 1", ids[i])),
            ));
        }
        data.extend_from_slice(row);
    }
    Ok(RetrievalIndex { ids, dim, data })
}

/// Descending score, then ascending id.
fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

impl RetrievalIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// The `min(k, N)` highest dot products, ties broken by ascending id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        if self.is_empty() {
            return Err(Error::InvalidArgument("top_k on an empty index".into()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("top_k needs k >= 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "top_k query",
                left: vec![self.dim],
                right: vec![query.len()],
            });
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, numkit::dot(self.row(i), query)))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(i, score)| Hit {
                id: self.ids[i].clone(),
                score,
            })
            .collect())
    }

    pub fn rank(&self, query_id: &str, query: &[f64], k: usize) -> Result<RankedList> {
        Ok(RankedList {
            query_id: query_id.to_string(),
            hits: self.top_k(query, k)?,
        })
    }
}

/// Exhaustive reference ranking: score everything, sort everything.
pub fn exhaustive_top_k(index: &RetrievalIndex, query: &[f64], k: usize) -> Vec<Hit> {
    let mut all: Vec<Hit> = (0..index.len())
        .map(|i| Hit {
            id: index.ids[i].clone(),
            score: numkit::dot(index.row(i), query),
        })
        .collect();
    all.sort_by(rank_order);
    all.truncate(k);
    all
}

/// Evaluation knobs. Defaults mirror the usual retrieval tables: R@{1,5,10},
/// NDCG@{5,10,20}, MAP with "relevant means grade > 2", 30-deep graded lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub recall_ks: Vec<usize>,
    pub ndcg_ks: Vec<usize>,
    pub map_threshold: i32,
    pub gain: Gain,
    pub graded_depth: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            recall_ks: vec![1, 5, 10],
            ndcg_ks: vec![5, 10, 20],
            map_threshold: 2,
            gain: Gain::Linear,
            graded_depth: 30,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self, key: &str) -> Result<()> {
        if self.recall_ks.is_empty() || self.recall_ks.contains(&0) {
            return Err(Error::config(format!("{key}.recall_ks"), "need at least one k, all >= 1"));
        }
        if self.ndcg_ks.contains(&0) {
            return Err(Error::config(format!("{key}.ndcg_ks"), "every k must be >= 1"));
        }
        if self.graded_depth == 0 {
            return Err(Error::config(format!("{key}.graded_depth"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Recall per direction plus graded-list metrics. Values are fractions in
/// `[0, 1]`; [`MetricsReport::to_json`] scales them by 100.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub num_queries: usize,
    pub a2b_recall: Vec<(usize, f64)>,
    pub b2a_recall: Vec<(usize, f64)>,
    pub ndcg: Vec<(usize, f64)>,
    pub map: f64,
}

impl MetricsReport {
    pub fn recall_a2b(&self, k: usize) -> Option<f64> {
        self.a2b_recall.iter().find(|(kk, _)| *kk == k).map(|x| x.1)
    }

    pub fn recall_b2a(&self, k: usize) -> Option<f64> {
        self.b2a_recall.iter().find(|(kk, _)| *kk == k).map(|x| x.1)
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ndcg.iter().find(|(kk, _)| *kk == k).map(|x| x.1)
    }

    /// Flat object: `i2t_r<k>`, `t2i_r<k>`, `ndcg<k>`, `map`, `num_queries`.
    /// A→B is reported under the `i2t` prefix and B→A under `t2i`. Metric
    /// values are ×100, rounded to one decimal.
    pub fn to_json(&self) -> Value {
        let pct = |v: f64| Value::from((v * 1000.0).round() / 10.0);
        let mut m = Map::new();
        for (k, v) in &self.a2b_recall {
            m.insert(format!("i2t_r{k}"), pct(*v));
        }
        for (k, v) in &self.b2a_recall {
            m.insert(format!("t2i_r{k}"), pct(*v));
        }
        for (k, v) in &self.ndcg {
            m.insert(format!("ndcg{k}"), pct(*v));
        }
        m.insert("map".into(), pct(self.map));
        m.insert("num_queries".into(), Value::from(self.num_queries));
        Value::Object(m)
    }
}

/// Grade given to a query's true partner when grading by pair identity.
pub const PARTNER_GRADE: u32 = MAX_GRADE;

/// Embeds both sides of `eval_set` with the query towers and computes
/// recall@k in both directions with same-id pairs as ground truth.
pub fn evaluate(state: &TwoTowerState, eval_set: &PairDataset, ks: &[usize]) -> Result<MetricsReport> {
    evaluate_with(
        state,
        eval_set,
        &EvalSettings {
            recall_ks: ks.to_vec(),
            ..EvalSettings::default()
        },
    )
}

/// [`evaluate`] with full settings. Graded lists come from pair identity:
/// within each query's top `graded_depth` results the partner gets
/// [`PARTNER_GRADE`] and everything else 0. NDCG and MAP pool the queries of
/// both directions.
pub fn evaluate_with(
    state: &TwoTowerState,
    eval_set: &PairDataset,
    settings: &EvalSettings,
) -> Result<MetricsReport> {
    settings.validate("eval")?;
    if eval_set.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let ids: Vec<String> = eval_set.pairs().iter().map(|p| p.id.clone()).collect();
    let feats_a: Vec<Vec<f64>> = eval_set.pairs().iter().map(|p| p.feat_a.clone()).collect();
    let feats_b: Vec<Vec<f64>> = eval_set.pairs().iter().map(|p| p.feat_b.clone()).collect();
    let emb_a = state.query_a.encode_batch(&feats_a)?;
    let emb_b = state.query_b.encode_batch(&feats_b)?;
    let index_a = build_index(ids.clone(), emb_a.clone())?;
    let index_b = build_index(ids.clone(), emb_b.clone())?;

    let max_recall_k = settings.recall_ks.iter().copied().max().unwrap_or(1);
    let depth = max_recall_k
        .max(settings.graded_depth)
        .max(settings.ndcg_ks.iter().copied().max().unwrap_or(1));

    let rank_all = |queries: &[Vec<f64>], index: &RetrievalIndex| -> Result<Vec<RankedList>> {
        ids.iter()
            .zip(queries)
            .map(|(id, q)| index.rank(id, q, depth))
            .collect()
    };
    let a2b = rank_all(&emb_a, &index_b)?;
    let b2a = rank_all(&emb_b, &index_a)?;

    let truth: std::collections::HashMap<String, String> =
        ids.iter().map(|id| (id.clone(), id.clone())).collect();
    let recall = |lists: &[RankedList]| -> Result<Vec<(usize, f64)>> {
        settings
            .recall_ks
            .iter()
            .map(|&k| Ok((k, recall_at_k(lists, &truth, k)?)))
            .collect()
    };

    let graded: Vec<Vec<u32>> = a2b
        .iter()
        .chain(&b2a)
        .map(|l| {
            l.hits
                .iter()
                .take(settings.graded_depth)
                .map(|h| if h.id == l.query_id { PARTNER_GRADE } else { 0 })
                .collect()
        })
        .collect();
    let ndcg = settings
        .ndcg_ks
        .iter()
        .map(|&k| Ok((k, ndcg_at_k(&graded, k, settings.gain)?)))
        .collect::<Result<Vec<_>>>()?;

    Ok(MetricsReport {
        num_queries: ids.len(),
        a2b_recall: recall(&a2b)?,
        b2a_recall: recall(&b2a)?,
        ndcg,
        map: map_metric(&graded, settings.map_threshold)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};
    use crate::encoders::EncoderConfig;

    fn e(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn build_index_cases() {
        let idx = build_index(vec!["x".into()], vec![e(3, 0)]).unwrap();
        assert_eq!(idx.len(), 1);
        assert!(build_index(vec!["x".into(), "x".into()], vec![e(3, 0), e(3, 1)]).is_err());
        assert!(build_index(vec!["x".into()], vec![vec![0.9, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn top_k_cases() {
        let ids: Vec<String> = (0..3).map(|i| format!("c{i}")).collect();
        let idx = build_index(ids, (0..3).map(|i| e(3, i)).collect()).unwrap();
        let hits = idx.top_k(&e(3, 1), 1).unwrap();
        assert_eq!(hits[0].id, "c1");
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(idx.top_k(&e(3, 2), 10).unwrap().len(), 3);
        // c0 and c1 tie at 0 for a query along axis 2.
        let hits = idx.top_k(&e(3, 2), 3).unwrap();
        assert_eq!(
            hits.iter().map(|h| h.id.as_str()).collect::<Vec<_>>(),
            ["c2", "c0", "c1"]
        );
        assert!(idx.top_k(&e(3, 0), 0).is_err());
        let empty = build_index(vec![], vec![]).unwrap();
        assert!(empty.top_k(&e(3, 0), 1).is_err());
    }

    #[test]
    fn report_json_schema() {
        let r = MetricsReport {
            num_queries: 3,
            a2b_recall: vec![(1, 1.0 / 3.0), (5, 2.0 / 3.0), (10, 2.0 / 3.0)],
            b2a_recall: vec![(1, 1.0), (5, 1.0), (10, 1.0)],
            ndcg: vec![(5, 0.5), (10, 0.5), (20, 0.5)],
            map: 0.83333,
        };
        let j = r.to_json();
        let keys: Vec<&str> = j.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "i2t_r1", "i2t_r5", "i2t_r10", "t2i_r1", "t2i_r5", "t2i_r10", "ndcg5", "ndcg10",
                "ndcg20", "map", "num_queries"
            ]
        );
        assert_eq!(j["i2t_r1"], 33.3);
        assert_eq!(j["map"], 83.3);
        assert_eq!(j["num_queries"], 3);
    }

    #[test]
    fn single_pair_eval_is_perfect() {
        let spec = SynthSpec {
            n_pairs: 1,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let state = TwoTowerState::new(
            &EncoderConfig::default_a(),
            &EncoderConfig::default_b(),
            16,
            0.05,
            0.99,
        )
        .unwrap();
        let r = evaluate(&state, &ds, &[1, 5, 10]).unwrap();
        assert_eq!(r.num_queries, 1);
        for k in [1, 5, 10] {
            assert_eq!(r.recall_a2b(k), Some(1.0));
            assert_eq!(r.recall_b2a(k), Some(1.0));
        }
        assert_eq!(r.map, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        proptest! {
            #[test]
            fn top_k_matches_exhaustive(seed in any::<u64>(), n in 1usize..60, k in 1usize..70) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let d = 4;
                // Coarse grid coordinates so exact score ties actually occur.
                let mut grid = || -> Vec<f64> {
                    loop {
                        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-2i32..=2) as f64).collect();
                        if let Ok(u) = numkit::l2_normalize(&v) { return u; }
                    }
                };
                let emb: Vec<Vec<f64>> = (0..n).map(|_| grid()).collect();
                let ids: Vec<String> = (0..n).map(|i| format!("id{:03}", (i * 37) % 101)).collect();
                let idx = build_index(ids, emb).unwrap();
                let q = grid();
                prop_assert_eq!(idx.top_k(&q, k).unwrap(), exhaustive_top_k(&idx, &q, k));
            }
        }
    }
}
