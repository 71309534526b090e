//! Cross-modal momentum contrast: EMA key encoders, one FIFO negative queue per
//! modality, and the bidirectional InfoNCE objective.
//!
//! For a batch of pairs `(x_a, x_b)` the query towers produce `z_a, z_b` and
//! the momentum towers produce positive keys `p_a, p_b`:
//!
//! ```text
//! L_a2b = Σ_j -log( exp(z_a_j·p_b_j/τ) / (exp(z_a_j·p_b_j/τ) + Σ_{n ∈ Q_b} exp(z_a_j·n/τ)) )
//! L_b2a = same with a and b swapped
//! L     = L_a2b + L_b2a
//! ```
//!
//! Negatives come from the queues only; the batch's own keys are pushed after
//! the loss has been computed.

use std::collections::VecDeque;

use crate::data::ModalityPair;
use crate::encoders::{init_encoder, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numkit::{self, log_sum_exp, ParamSet, ParamVars, Tape, Tensor, Var};

/// Lower clamp on the learnable temperature.
pub const TAU_MIN: f64 = 0.005;
/// Upper clamp on the learnable temperature.
pub const TAU_MAX: f64 = 1.0;

const UNIT_TOL: f64 = 1e-9;

/// FIFO dictionary holding the most recent `capacity` keys.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<Vec<f64>>,
    total_pushed: u64,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "queue needs capacity >= 1 and dim >= 1, got {capacity} and {dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
            total_pushed: 0,
        })
    }

    /// Rebuilds a queue from saved state; `entries` is oldest first.
    pub fn from_parts(
        capacity: usize,
        dim: usize,
        entries: Vec<Vec<f64>>,
        total_pushed: u64,
    ) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        if entries.len() > capacity || (entries.len() as u64) > total_pushed {
            return Err(Error::InvalidArgument(format!(
                "queue state holds {} entries with capacity {capacity} and {total_pushed} pushed",
                entries.len()
            )));
        }
        for e in &entries {
            q.check_key(e)?;
        }
        q.entries = entries.into();
        q.total_pushed = total_pushed;
        Ok(q)
    }

    fn check_key(&self, key: &[f64]) -> Result<()> {
        if key.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "queue key",
                left: vec![self.dim],
                right: vec![key.len()],
            });
        }
        let n = numkit::norm(key);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidArgument(format!("queue key has norm {n}, expected 1")));
        }
        Ok(())
    }

    /// Appends `keys` in order, evicting the oldest entries beyond capacity.
    /// Pushing more than `capacity` keys at once leaves only the last
    /// `capacity` of them. Nothing is modified if any key is rejected.
    pub fn push(&mut self, keys: &[Vec<f64>]) -> Result<()> {
        for k in keys {
            self.check_key(k)?;
        }
        for k in keys {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back(k.clone());
        }
        self.total_pushed += keys.len() as u64;
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    /// Entries, oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.entries.iter()
    }

    /// Row-major `len x dim` copy of the entries, oldest first.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for e in &self.entries {
            out.extend_from_slice(e);
        }
        out
    }
}

/// `θ_m ← m θ_m + (1 - m) θ`, elementwise and in place.
pub fn momentum_update(target: &mut ParamSet, source: &ParamSet, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidArgument(format!("momentum {m} outside [0, 1]")));
    }
    target.check_same_layout(source)?;
    for ((_, t), (_, s)) in target.iter_mut().zip(source.iter()) {
        for (x, y) in t.data_mut().iter_mut().zip(s.data()) {
            *x = m * *x + (1.0 - m) * y;
        }
    }
    Ok(())
}

/// Summed InfoNCE of queries `z` against their positives `p` and a shared
/// negative set, in log-sum-exp form.
pub fn info_nce(z: &[Vec<f64>], p: &[Vec<f64>], negs: &[Vec<f64>], tau: f64) -> Result<f64> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    if z.is_empty() {
        return Err(Error::InvalidArgument("info_nce needs at least one query".into()));
    }
    if z.len() != p.len() {
        return Err(Error::ShapeMismatch {
            op: "info_nce pairs",
            left: vec![z.len()],
            right: vec![p.len()],
        });
    }
    let dim = z[0].len();
    for v in z.iter().chain(p).chain(negs) {
        if v.len() != dim {
            return Err(Error::ShapeMismatch {
                op: "info_nce embedding",
                left: vec![dim],
                right: vec![v.len()],
            });
        }
    }
    let mut total = 0.0;
    let mut logits = Vec::with_capacity(negs.len() + 1);
    for (zj, pj) in z.iter().zip(p) {
        logits.clear();
        let pos = numkit::dot(zj, pj) / tau;
        logits.push(pos);
        logits.extend(negs.iter().map(|n| numkit::dot(zj, n) / tau));
        total += log_sum_exp(&logits) - pos;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("info_nce".into()));
    }
    Ok(total)
}

pub fn total_loss(loss_a2b: f64, loss_b2a: f64) -> f64 {
    loss_a2b + loss_b2a
}

/// Query towers, their momentum copies, both queues and the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerState {
    pub query_a: EncoderParams,
    pub query_b: EncoderParams,
    pub momentum_a: EncoderParams,
    pub momentum_b: EncoderParams,
    pub queue_a: NegativeQueue,
    pub queue_b: NegativeQueue,
    log_tau: f64,
    momentum: f64,
}

/// Name of the temperature entry in [`TwoTowerState::trainable`].
pub const LOG_TAU: &str = "log_tau";
const PREFIX_A: &str = "a.";
const PREFIX_B: &str = "b.";

impl TwoTowerState {
    /// Fresh state: random query towers, momentum towers equal to them,
    /// empty queues.
    pub fn new(
        cfg_a: &EncoderConfig,
        cfg_b: &EncoderConfig,
        queue_capacity: usize,
        tau_init: f64,
        momentum: f64,
    ) -> Result<Self> {
        let query_a = init_encoder(cfg_a)?;
        let query_b = init_encoder(cfg_b)?;
        Self::from_parts(
            query_a.clone(),
            query_b.clone(),
            query_a,
            query_b,
            NegativeQueue::new(queue_capacity, cfg_a.embed_dim)?,
            NegativeQueue::new(queue_capacity, cfg_b.embed_dim)?,
            tau_init.ln(),
            momentum,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        query_a: EncoderParams,
        query_b: EncoderParams,
        momentum_a: EncoderParams,
        momentum_b: EncoderParams,
        queue_a: NegativeQueue,
        queue_b: NegativeQueue,
        log_tau: f64,
        momentum: f64,
    ) -> Result<Self> {
        if query_a.embed_dim() != query_b.embed_dim() {
            return Err(Error::config(
                "encoder_b.embed_dim",
                format!(
                    "towers must share embed_dim ({} vs {})",
                    query_a.embed_dim(),
                    query_b.embed_dim()
                ),
            ));
        }
        if query_a.config() != momentum_a.config() || query_b.config() != momentum_b.config() {
            return Err(Error::InvalidArgument(
                "momentum towers must match the query towers' layout".into(),
            ));
        }
        if queue_a.dim() != query_a.embed_dim() || queue_b.dim() != query_b.embed_dim() {
            return Err(Error::InvalidArgument("queue width must equal embed_dim".into()));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1]"));
        }
        if !log_tau.is_finite() {
            return Err(Error::config("train.tau_init", "must be > 0"));
        }
        Ok(Self {
            query_a,
            query_b,
            momentum_a,
            momentum_b,
            queue_a,
            queue_b,
            log_tau: clamp_log_tau(log_tau),
            momentum,
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn embed_dim(&self) -> usize {
        self.query_a.embed_dim()
    }

    /// Query parameters of both towers plus `log_tau`, as one set:
    /// `a.<name>`, `b.<name>`, `log_tau`.
    pub fn trainable(&self) -> ParamSet {
        let mut set = self.query_a.params().with_prefix(PREFIX_A);
        set.merge(self.query_b.params().with_prefix(PREFIX_B))
            .expect("tower prefixes are disjoint");
        set.insert(LOG_TAU, Tensor::scalar(self.log_tau).expect("finite log_tau"))
            .expect("log_tau is unique");
        set
    }

    /// Writes back a set laid out like [`TwoTowerState::trainable`]. The
    /// temperature is clamped to `[TAU_MIN, TAU_MAX]`.
    pub fn set_trainable(&mut self, params: &ParamSet) -> Result<()> {
        self.trainable().check_same_layout(params)?;
        if !params.all_finite() {
            return Err(Error::NonFinite("trainable parameters".into()));
        }
        let a = params.strip_prefix(PREFIX_A);
        let b = params.strip_prefix(PREFIX_B);
        *self.query_a.params_mut() = a;
        *self.query_b.params_mut() = b;
        self.log_tau = clamp_log_tau(params.get(LOG_TAU)?.data()[0]);
        Ok(())
    }

    /// EMA step of both momentum towers towards the query towers.
    pub fn update_momentum_encoders(&mut self) -> Result<()> {
        momentum_update(
            self.momentum_a.params_mut(),
            self.query_a.params(),
            self.momentum,
        )?;
        momentum_update(
            self.momentum_b.params_mut(),
            self.query_b.params(),
            self.momentum,
        )
    }

    /// Pushes a step's key sets into their queues.
    pub fn enqueue(&mut self, out: &StepOutputs) -> Result<()> {
        self.queue_a.push(out.keys_a())?;
        self.queue_b.push(out.keys_b())
    }

    /// Same state with the modalities swapped.
    pub fn swapped(&self) -> Self {
        Self {
            query_a: self.query_b.clone(),
            query_b: self.query_a.clone(),
            momentum_a: self.momentum_b.clone(),
            momentum_b: self.momentum_a.clone(),
            queue_a: self.queue_b.clone(),
            queue_b: self.queue_a.clone(),
            log_tau: self.log_tau,
            momentum: self.momentum,
        }
    }
}

fn clamp_log_tau(log_tau: f64) -> f64 {
    log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln())
}

/// Everything one forward pass produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutputs {
    pub z_a: Vec<Vec<f64>>,
    pub z_b: Vec<Vec<f64>>,
    /// Momentum-encoded A features: positives for `z_b` and the keys bound for `queue_a`.
    pub p_a: Vec<Vec<f64>>,
    /// Momentum-encoded B features: positives for `z_a` and the keys bound for `queue_b`.
    pub p_b: Vec<Vec<f64>>,
    pub loss_a2b: f64,
    pub loss_b2a: f64,
    pub loss_total: f64,
    /// Queue sizes the two loss terms actually saw.
    pub negatives_a2b: usize,
    pub negatives_b2a: usize,
}

impl StepOutputs {
    pub fn keys_a(&self) -> &[Vec<f64>] {
        &self.p_a
    }

    pub fn keys_b(&self) -> &[Vec<f64>] {
        &self.p_b
    }
}

fn stack(rows: &[&[f64]], width: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::at_index(
                i,
                Error::ShapeMismatch {
                    op: what,
                    left: vec![width],
                    right: vec![r.len()],
                },
            ));
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

fn nce_on_tape(tape: &mut Tape, z: Var, p: Var, negs: Var, inv_tau: Var) -> Result<Var> {
    let pos = tape.row_dot(z, p)?;
    let neg = tape.matmul_nt(z, negs)?;
    let pos = tape.mul_scalar(pos, inv_tau)?;
    let neg = tape.mul_scalar(neg, inv_tau)?;
    let logits = tape.concat_cols(pos, neg)?;
    let lse = tape.log_sum_exp_rows(logits)?;
    let terms = tape.sub(lse, pos)?;
    Ok(tape.sum(terms))
}

/// Forward and backward pass for one batch. Does not mutate `state`: the
/// optimizer step, momentum update and queue push belong to the caller and
/// must happen after this returns.
///
/// The returned gradients are laid out like [`TwoTowerState::trainable`];
/// momentum towers take no part in differentiation.
pub fn training_step(
    state: &TwoTowerState,
    batch: &[&ModalityPair],
) -> Result<(StepOutputs, ParamSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = batch.len();
    let d = state.embed_dim();
    let dim_a = state.query_a.input_dim();
    let dim_b = state.query_b.input_dim();
    let feats_a: Vec<&[f64]> = batch.iter().map(|p| p.feat_a.as_slice()).collect();
    let feats_b: Vec<&[f64]> = batch.iter().map(|p| p.feat_b.as_slice()).collect();
    let flat_a = stack(&feats_a, dim_a, "feat_a")?;
    let flat_b = stack(&feats_b, dim_b, "feat_b")?;

    let keys = |enc: &EncoderParams, feats: &[&[f64]]| -> Result<Vec<Vec<f64>>> {
        feats
            .iter()
            .enumerate()
            .map(|(i, x)| enc.encode(x).map_err(|e| Error::at_index(i, e)))
            .collect()
    };
    let p_a = keys(&state.momentum_a, &feats_a)?;
    let p_b = keys(&state.momentum_b, &feats_b)?;

    let params = state.trainable();
    let mut tape = Tape::new();
    let vars: ParamVars = params
        .iter()
        .map(|(name, t)| (name.to_string(), tape.leaf(t)))
        .collect();

    let xa = tape.input(n, dim_a, flat_a)?;
    let xb = tape.input(n, dim_b, flat_b)?;
    let z_a = EncoderParams::encode_on_tape(state.query_a.config(), &mut tape, &vars, PREFIX_A, xa)?;
    let z_b = EncoderParams::encode_on_tape(state.query_b.config(), &mut tape, &vars, PREFIX_B, xb)?;

    let pos_b = tape.input(n, d, p_b.concat())?;
    let pos_a = tape.input(n, d, p_a.concat())?;
    let negs_b = tape.input(state.queue_b.len(), d, state.queue_b.to_flat())?;
    let negs_a = tape.input(state.queue_a.len(), d, state.queue_a.to_flat())?;

    let neg_log_tau = tape.neg(vars[LOG_TAU]);
    let inv_tau = tape.exp(neg_log_tau);
    let loss_a2b = nce_on_tape(&mut tape, z_a, pos_b, negs_b, inv_tau)?;
    let loss_b2a = nce_on_tape(&mut tape, z_b, pos_a, negs_a, inv_tau)?;
    let total = tape.add(loss_a2b, loss_b2a)?;

    let grads = tape.gradients(total)?.to_param_set(&params, &vars)?;
    let rows = |v: Var| -> Vec<Vec<f64>> { tape.value(v).chunks(d).map(<[f64]>::to_vec).collect() };

    let out = StepOutputs {
        z_a: rows(z_a),
        z_b: rows(z_b),
        p_a,
        p_b,
        loss_a2b: tape.scalar(loss_a2b)?,
        loss_b2a: tape.scalar(loss_b2a)?,
        loss_total: tape.scalar(total)?,
        negatives_a2b: state.queue_b.len(),
        negatives_b2a: state.queue_a.len(),
    };
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        numkit::l2_normalize(&v).unwrap()
    }

    fn e(i: usize) -> Vec<f64> {
        let mut v = vec![0.0; 4];
        v[i % 4] = 1.0;
        v
    }

    #[test]
    fn momentum_update_cases() {
        let one = |v: f64| -> ParamSet {
            [("w".to_string(), Tensor::vector(vec![v]).unwrap())].into_iter().collect()
        };
        let src = one(0.0);
        let mut t = one(1.0);
        momentum_update(&mut t, &src, 1.0).unwrap();
        assert_eq!(t, one(1.0));
        momentum_update(&mut t, &src, 0.99).unwrap();
        assert_eq!(t.get("w").unwrap().data()[0], 0.99);
        momentum_update(&mut t, &src, 0.0).unwrap();
        assert_eq!(t, src);
        assert!(momentum_update(&mut t, &src, 1.5).is_err());
        let wide: ParamSet = [("w".to_string(), Tensor::zeros(vec![2]))].into_iter().collect();
        assert!(momentum_update(&mut t, &wide, 0.5).is_err());
    }

    #[test]
    fn queue_fifo_cases() {
        let mut q = NegativeQueue::new(4, 4).unwrap();
        let keys: Vec<_> = (0..6).map(e).collect();
        q.push(&keys[0..2]).unwrap();
        q.push(&keys[2..4]).unwrap();
        q.push(&keys[4..6]).unwrap();
        let got: Vec<_> = q.entries().cloned().collect();
        assert_eq!(got, keys[2..6].to_vec());
        assert_eq!(q.total_pushed(), 6);

        let before = q.clone();
        q.push(&[]).unwrap();
        assert_eq!(q, before);

        let mut fresh = NegativeQueue::new(4, 4).unwrap();
        fresh.push(&keys[0..4]).unwrap();
        assert_eq!(fresh.entries().cloned().collect::<Vec<_>>(), keys[0..4].to_vec());
    }

    #[test]
    fn queue_rejects_bad_keys_atomically() {
        let mut q = NegativeQueue::new(4, 4).unwrap();
        assert!(q.push(&[e(0), vec![1.0, 0.0]]).is_err());
        assert!(q.push(&[vec![2.0, 0.0, 0.0, 0.0]]).is_err());
        assert!(q.is_empty());
        assert_eq!(q.total_pushed(), 0);
    }

    #[test]
    fn oversized_push_keeps_the_tail() {
        let mut q = NegativeQueue::new(3, 4).unwrap();
        let keys: Vec<_> = (0..5).map(|i| {
            let mut v = e(i);
            v[(i + 1) % 4] = i as f64;
            numkit::l2_normalize(&v).unwrap()
        }).collect();
        q.push(&keys).unwrap();
        assert_eq!(q.entries().cloned().collect::<Vec<_>>(), keys[2..].to_vec());
        assert_eq!(q.total_pushed(), 5);
    }

    #[test]
    fn info_nce_analytic_values() {
        let z = vec![e(0)];
        assert_eq!(info_nce(&z, &z, &[], 0.05).unwrap(), 0.0);
        // z·p = z·n = 0
        let loss = info_nce(&z, &[e(1)], &[e(2)], 0.05).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let loss = info_nce(&z, &[e(1)], &vec![e(2); 255], 0.05).unwrap();
        assert!((loss - 256f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn info_nce_errors() {
        let z = vec![e(0)];
        assert!(info_nce(&z, &z, &[], 0.0).is_err());
        assert!(info_nce(&z, &z, &[], -1.0).is_err());
        assert!(info_nce(&[], &[], &[], 0.1).is_err());
        assert!(info_nce(&z, &[], &[], 0.1).is_err());
    }

    #[test]
    fn random_embeddings_land_near_log_k_plus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 256;
        let z = vec![unit(&mut rng, d)];
        let p = vec![unit(&mut rng, d)];
        let negs: Vec<_> = (0..255).map(|_| unit(&mut rng, d)).collect();
        // Near-orthogonal embeddings at τ = 1 keep logits within ~±0.2.
        let loss = info_nce(&z, &p, &negs, 1.0).unwrap();
        assert!((loss - 256f64.ln()).abs() < 0.2, "{loss}");
    }

    #[test]
    fn total_loss_cases() {
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        let l2 = 2f64.ln();
        assert_eq!(total_loss(l2, l2), 2.0 * l2);
        assert_eq!(total_loss(0.3, 1.7), total_loss(1.7, 0.3));
    }

    #[test]
    fn temperature_is_clamped() {
        let cfg_a = EncoderConfig::default_a();
        let cfg_b = EncoderConfig::default_b();
        let mut s = TwoTowerState::new(&cfg_a, &cfg_b, 8, 0.05, 0.99).unwrap();
        assert!((s.tau() - 0.05).abs() < 1e-15);
        let mut p = s.trainable();
        p.get_mut(LOG_TAU).unwrap().data_mut()[0] = -50.0;
        s.set_trainable(&p).unwrap();
        assert!((s.tau() - TAU_MIN).abs() < 1e-15);
        p.get_mut(LOG_TAU).unwrap().data_mut()[0] = 3.0;
        s.set_trainable(&p).unwrap();
        assert!((s.tau() - TAU_MAX).abs() < 1e-15);
    }

    #[test]
    fn mismatched_embed_dims_rejected() {
        let cfg_a = EncoderConfig::default_a();
        let cfg_b = EncoderConfig {
            embed_dim: 16,
            ..EncoderConfig::default_b()
        };
        let err = TwoTowerState::new(&cfg_a, &cfg_b, 8, 0.05, 0.99).unwrap_err();
        assert!(err.to_string().contains("embed_dim"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn units(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| unit(&mut rng, d)).collect()
        }

        proptest! {
            #[test]
            fn queue_matches_list_oracle(
                capacity in 1usize..10,
                pushes in proptest::collection::vec(0usize..10, 0..20),
            ) {
                let mut q = NegativeQueue::new(capacity, 4).unwrap();
                let mut oracle: Vec<Vec<f64>> = Vec::new();
                let mut counter = 0usize;
                for n in pushes {
                    let keys: Vec<_> = (0..n)
                        .map(|_| {
                            counter += 1;
                            let mut v = e(counter);
                            v[(counter + 1) % 4] = counter as f64;
                            numkit::l2_normalize(&v).unwrap()
                        })
                        .collect();
                    q.push(&keys).unwrap();
                    oracle.extend(keys);
                }
                let start = oracle.len().saturating_sub(capacity);
                prop_assert_eq!(q.entries().cloned().collect::<Vec<_>>(), oracle[start..].to_vec());
                prop_assert_eq!(q.total_pushed() as usize, oracle.len());
            }

            #[test]
            fn info_nce_permutation_invariant(seed in any::<u64>(), n in 1usize..5, k in 0usize..8) {
                let z = units(seed, n, 6);
                let p = units(seed ^ 1, n, 6);
                let negs = units(seed ^ 2, k, 6);
                let base = info_nce(&z, &p, &negs, 0.1).unwrap();
                let mut negs_r = negs.clone();
                negs_r.reverse();
                let mut z_r = z.clone();
                let mut p_r = p.clone();
                z_r.rotate_left(1);
                p_r.rotate_left(1);
                let tol = 1e-12 * (1.0 + base.abs());
                prop_assert!((info_nce(&z, &p, &negs_r, 0.1).unwrap() - base).abs() < tol);
                prop_assert!((info_nce(&z_r, &p_r, &negs, 0.1).unwrap() - base).abs() < tol);
                prop_assert!(base >= 0.0);
            }

            #[test]
            fn info_nce_decreases_with_positive_similarity(seed in any::<u64>(), k in 1usize..8) {
                let z = units(seed, 1, 6);
                let negs = units(seed ^ 3, k, 6);
                let far = units(seed ^ 4, 1, 6);
                // Slide the positive towards the query along a great-circle-ish path.
                let mix = |t: f64| -> Vec<Vec<f64>> {
                    let v: Vec<f64> = z[0].iter().zip(&far[0]).map(|(a, b)| t * a + (1.0 - t) * b).collect();
                    vec![numkit::l2_normalize(&v).unwrap()]
                };
                let sim = |p: &Vec<Vec<f64>>| numkit::dot(&z[0], &p[0]);
                let p_lo = mix(0.2);
                let p_hi = mix(0.8);
                prop_assume!(sim(&p_hi) > sim(&p_lo) + 1e-6);
                let lo = info_nce(&z, &p_lo, &negs, 0.1).unwrap();
                let hi = info_nce(&z, &p_hi, &negs, 0.1).unwrap();
                prop_assert!(hi < lo);
            }
        }
    }
}
