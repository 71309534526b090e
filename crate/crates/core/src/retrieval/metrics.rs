use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::RankedList;
use crate::error::{Error, Result};

/// Highest graded relevance (three annotators scoring 0-2 each).
pub const MAX_GRADE: u32 = 6;

/// DCG gain applied to a graded relevance `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// `r`
    #[default]
    Linear,
    /// `2^r - 1`
    Exponential,
}

impl Gain {
    fn apply(self, r: u32) -> f64 {
        match self {
            Gain::Linear => r as f64,
            Gain::Exponential => 2f64.powi(r as i32) - 1.0,
        }
    }
}

/// Fraction of queries whose true candidate appears in the first `k` hits.
pub fn recall_at_k(ranked: &[RankedList], truth: &HashMap<String, String>, k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::InvalidArgument("recall over zero queries".into()));
    }
    let mut found = 0usize;
    for list in ranked {
        let want = truth.get(&list.query_id).ok_or_else(|| {
            Error::InvalidArgument(format!("no ground truth for query `{}`", list.query_id))
        })?;
        if list.hits.iter().take(k).any(|h| &h.id == want) {
            found += 1;
        }
    }
    Ok(found as f64 / ranked.len() as f64)
}

fn check_grades(graded: &[Vec<u32>]) -> Result<()> {
    if graded.is_empty() {
        return Err(Error::InvalidArgument("metric over zero queries".into()));
    }
    for (q, list) in graded.iter().enumerate() {
        if let Some(&bad) = list.iter().find(|&&r| r > MAX_GRADE) {
            return Err(Error::InvalidArgument(format!(
                "query {q}: grade {bad} outside 0..={MAX_GRADE}"
            )));
        }
    }
    Ok(())
}

/// `Σ_{i=1..k} gain(rel_i) / log2(i + 1)`.
pub fn dcg_at_k(rels: &[u32], k: usize, gain: Gain) -> f64 {
    rels.iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain.apply(r) / ((i + 2) as f64).log2())
        .sum()
}

/// Mean NDCG@k. The ideal ordering is the query's own grades sorted
/// descending; a query whose grades are all zero scores 0.
pub fn ndcg_at_k(graded: &[Vec<u32>], k: usize, gain: Gain) -> Result<f64> {
    check_grades(graded)?;
    if k == 0 {
        return Err(Error::InvalidArgument("ndcg needs k >= 1".into()));
    }
    let mut total = 0.0;
    for rels in graded {
        let mut ideal = rels.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg_at_k(&ideal, k, gain);
        if idcg > 0.0 {
            total += dcg_at_k(rels, k, gain) / idcg;
        }
    }
    Ok(total / graded.len() as f64)
}

/// AP of one list where `relevant[i]` marks rank `i + 1`; 0 if nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        acc / hits as f64
    }
}

/// Mean AP with relevance defined as `grade > threshold`.
pub fn map_metric(graded: &[Vec<u32>], threshold: i32) -> Result<f64> {
    check_grades(graded)?;
    let total: f64 = graded
        .iter()
        .map(|rels| {
            let bin: Vec<bool> = rels.iter().map(|&r| i64::from(r) > i64::from(threshold)).collect();
            average_precision(&bin)
        })
        .sum();
    Ok(total / graded.len() as f64)
}
