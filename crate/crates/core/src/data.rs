//! Paired-modality datasets: a seeded synthetic generator with known
//! alignment, JSON Lines ingestion and export, splits and epoch batching.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One aligned sample: two feature vectors sharing an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityPair {
    pub id: String,
    pub feat_a: Vec<f64>,
    pub feat_b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    All,
    Train,
    Val,
    Test,
}

/// Ordered pairs with unique ids and consistent, finite feature widths.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pairs: Vec<ModalityPair>,
    split: SplitTag,
}

impl PairDataset {
    pub fn new(pairs: Vec<ModalityPair>, split: SplitTag) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        if let Some(first) = pairs.first() {
            let (da, db) = (first.feat_a.len(), first.feat_b.len());
            for (i, p) in pairs.iter().enumerate() {
                if p.feat_a.len() != da || p.feat_b.len() != db {
                    return Err(Error::Dataset(format!(
                        "pair {i} (`{}`) has dims ({}, {}), expected ({da}, {db})",
                        p.id,
                        p.feat_a.len(),
                        p.feat_b.len()
                    )));
                }
                if p.feat_a.iter().chain(&p.feat_b).any(|v| !v.is_finite()) {
                    return Err(Error::Dataset(format!("pair `{}` has non-finite features", p.id)));
                }
                if !seen.insert(p.id.as_str()) {
                    return Err(Error::Dataset(format!("duplicate id `{}`", p.id)));
                }
            }
        }
        Ok(Self { pairs, split })
    }

    pub fn pairs(&self) -> &[ModalityPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn dim_a(&self) -> Option<usize> {
        self.pairs.first().map(|p| p.feat_a.len())
    }

    pub fn dim_b(&self) -> Option<usize> {
        self.pairs.first().map(|p| p.feat_b.len())
    }

    fn subset(&self, idx: &[usize], split: SplitTag) -> Self {
        Self {
            pairs: idx.iter().map(|&i| self.pairs[i].clone()).collect(),
            split,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    /// Both modalities project the same latent.
    Strong,
    /// Modality B sees the latent plus unit-variance perturbation.
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_pairs: usize,
    pub latent_dim: usize,
    pub input_dim_a: usize,
    pub input_dim_b: usize,
    pub noise_sigma: f64,
    pub correlation_mode: CorrelationMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            latent_dim: 16,
            input_dim_a: 64,
            input_dim_b: 48,
            noise_sigma: 0.05,
            correlation_mode: CorrelationMode::Strong,
            seed: 7,
        }
    }
}

/// Latent perturbation scale of the weak-correlation mode.
pub const WEAK_DELTA: f64 = 1.0;

impl SynthSpec {
    pub fn validate(&self, key: &str) -> Result<()> {
        for (name, v) in [
            ("n_pairs", self.n_pairs),
            ("latent_dim", self.latent_dim),
            ("input_dim_a", self.input_dim_a),
            ("input_dim_b", self.input_dim_b),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{key}.{name}"), "must be >= 1"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(
                format!("{key}.noise_sigma"),
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn project(p: &[f64], rows: usize, u: &[f64]) -> Vec<f64> {
    let cols = u.len();
    (0..rows)
        .map(|r| crate::numkit::dot(&p[r * cols..(r + 1) * cols], u))
        .collect()
}

/// Draws `feat_A = P_A u + σ ε_A`, `feat_B = P_B u' + σ ε_B` with seeded
/// projections; `u' = u` in strong mode and `u + δ N(0, I)` in weak mode.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<PairDataset> {
    spec.validate("synth")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let proj_a: Vec<f64> = gaussian(&mut rng, spec.input_dim_a * spec.latent_dim)
        .into_iter()
        .map(|v| v * scale)
        .collect();
    let proj_b: Vec<f64> = gaussian(&mut rng, spec.input_dim_b * spec.latent_dim)
        .into_iter()
        .map(|v| v * scale)
        .collect();

    let mut pairs = Vec::with_capacity(spec.n_pairs);
    for i in 0..spec.n_pairs {
        let u = gaussian(&mut rng, spec.latent_dim);
        let u_b = match spec.correlation_mode {
            CorrelationMode::Strong => u.clone(),
            CorrelationMode::Weak => {
                let d = gaussian(&mut rng, spec.latent_dim);
                u.iter().zip(d).map(|(x, e)| x + WEAK_DELTA * e).collect()
            }
        };
        let mut feat_a = project(&proj_a, spec.input_dim_a, &u);
        let mut feat_b = project(&proj_b, spec.input_dim_b, &u_b);
        if spec.noise_sigma > 0.0 {
            for (f, e) in feat_a.iter_mut().zip(gaussian(&mut rng, spec.input_dim_a)) {
                *f += spec.noise_sigma * e;
            }
            for (f, e) in feat_b.iter_mut().zip(gaussian(&mut rng, spec.input_dim_b)) {
                *f += spec.noise_sigma * e;
            }
        }
        pairs.push(ModalityPair {
            id: format!("pair-{i:06}"),
            feat_a,
            feat_b,
        });
    }
    PairDataset::new(pairs, SplitTag::All)
}

/// Writes one JSON object per line with keys in the order `id, feat_a, feat_b`.
pub fn write_pairs<W: Write>(ds: &PairDataset, mut out: W) -> Result<()> {
    for p in &ds.pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    out.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn save_pairs(ds: &PairDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pairs(ds, BufWriter::new(file))
}

/// Parses JSON Lines pair records. Blank lines are skipped; dims are checked
/// against the first record.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<PairDataset> {
    let mut pairs: Vec<ModalityPair> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: ModalityPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(first) = pairs.first() {
            for (name, want, got) in [
                ("feat_a", first.feat_a.len(), pair.feat_a.len()),
                ("feat_b", first.feat_b.len(), pair.feat_b.len()),
            ] {
                if want != got {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("{name} has length {got}, expected dim {want}"),
                    });
                }
            }
        }
        if !seen.insert(pair.id.clone()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate id `{}`", pair.id),
            });
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    PairDataset::new(pairs, SplitTag::All)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<PairDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(BufReader::new(file))
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded permutation cut into contiguous `(train, val, test)` slices.
///
/// Train and val sizes are `round(f * N)`; test takes the remainder. A split
/// with a positive fraction must come out nonempty, and train always must.
pub fn split(
    ds: &PairDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(PairDataset, PairDataset, PairDataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must lie in [0, 1], got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let n = ds.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_val;
    for (name, f, size) in [
        ("train", 1.0, n_train),
        ("val", fractions[1], n_val),
        ("test", fractions[2], n_test),
    ] {
        if f > 0.0 && size == 0 {
            return Err(Error::Dataset(format!("{name} split would be empty")));
        }
    }
    let perm = permutation(n, seed);
    Ok((
        ds.subset(&perm[..n_train], SplitTag::Train),
        ds.subset(&perm[n_train..n_train + n_val], SplitTag::Val),
        ds.subset(&perm[n_train + n_val..], SplitTag::Test),
    ))
}

/// Seeded shuffle into batches of exactly `bs` indices; the remainder is dropped.
pub fn batches(ds: &PairDataset, bs: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if bs == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let perm = permutation(ds.len(), epoch_seed);
    Ok(perm.chunks_exact(bs).map(<[usize]>::to_vec).collect())
}
