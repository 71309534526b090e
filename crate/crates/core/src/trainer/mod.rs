//! The optimization loop: AdamW with decoupled decay on a cosine schedule,
//! epoch shuffling, periodic retrieval evaluation and resumable checkpoints.
//!
//! Per global step the order is fixed: forward/backward, optimizer update,
//! temperature clamp, momentum update of both key towers, then the batch's
//! keys are pushed into the queues.

mod checkpoint;
mod optim;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use optim::{adamw_step, cosine_lr, is_decayed, lr_for_update, AdamHyper, AdamState};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{batches, PairDataset};
use crate::encoders::EncoderConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::moco::{training_step, TwoTowerState};
use crate::retrieval::{evaluate, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    pub tau_init: f64,
    pub seed: u64,
    /// Evaluate on the held-out split every this many steps (0 disables
    /// periodic evaluation; the final step is always evaluated).
    pub eval_every: u64,
    pub checkpoint_path: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 15,
            base_lr: 3e-3,
            weight_decay: 1e-2,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
            momentum: 0.99,
            queue_capacity: 512,
            tau_init: 0.05,
            seed: 42,
            eval_every: 50,
            checkpoint_path: "model.xmco".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        let k = |name: &str| format!("{key}.{name}");
        if self.batch_size == 0 {
            return Err(Error::config(k("batch_size"), "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config(k("epochs"), "must be >= 1"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config(k("queue_capacity"), "must be >= 1"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(k("base_lr"), "must be finite and >= 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(k("weight_decay"), "must be finite and >= 0"));
        }
        for (i, b) in self.betas.iter().enumerate() {
            if !(0.0..1.0).contains(b) {
                return Err(Error::config(format!("{key}.betas[{i}]"), "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return Err(Error::config(k("adam_eps"), "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config(k("momentum"), "must lie in [0, 1]"));
        }
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return Err(Error::config(k("tau_init"), "must be > 0"));
        }
        if self.checkpoint_path.is_empty() {
            return Err(Error::config(k("checkpoint_path"), "must not be empty"));
        }
        Ok(())
    }

    /// Non-fatal configuration remarks.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.queue_capacity < self.batch_size {
            out.push(format!(
                "queue_capacity {} is smaller than batch_size {}; each push overwrites the whole queue",
                self.queue_capacity, self.batch_size
            ));
        }
        out
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.betas[0],
            beta2: self.betas[1],
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss_a2b: f64,
    pub loss_b2a: f64,
    pub loss_total: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub a2b_r1: f64,
    pub a2b_r5: f64,
    pub a2b_r10: f64,
    pub b2a_r1: f64,
    pub b2a_r5: f64,
    pub b2a_r10: f64,
}

impl EvalRecord {
    fn from_report(step: u64, r: &MetricsReport) -> Self {
        let a = |k| r.recall_a2b(k).unwrap_or(f64::NAN);
        let b = |k| r.recall_b2a(k).unwrap_or(f64::NAN);
        Self {
            step,
            a2b_r1: a(1),
            a2b_r5: a(5),
            a2b_r10: a(10),
            b2a_r1: b(1),
            b2a_r5: b(5),
            b2a_r10: b(10),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum HistoryLine<'a> {
    Step(&'a StepRecord),
    Eval(&'a EvalRecord),
}

/// Step numbers count completed updates, starting at 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainHistory {
    /// JSON Lines, one `{"kind": "step" | "eval", ...}` object per record,
    /// ordered by step with an eval record following its step record.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut evals = self.evals.iter().peekable();
        let emit = |line: HistoryLine<'_>, out: &mut W| -> Result<()> {
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<history>", e))
        };
        for s in &self.steps {
            while let Some(e) = evals.next_if(|e| e.step < s.step) {
                emit(HistoryLine::Eval(e), &mut out)?;
            }
            emit(HistoryLine::Step(s), &mut out)?;
            while let Some(e) = evals.next_if(|e| e.step == s.step) {
                emit(HistoryLine::Eval(e), &mut out)?;
            }
        }
        for e in evals {
            emit(HistoryLine::Eval(e), &mut out)?;
        }
        out.flush().map_err(|e| Error::io("<history>", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }
}

/// Resumable training driver. `step` counts completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    cfg: TrainConfig,
    state: TwoTowerState,
    adam: AdamState,
    step: u64,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, enc_a: &EncoderConfig, enc_b: &EncoderConfig) -> Result<Self> {
        cfg.validate("train")?;
        enc_a.validate("encoder_a")?;
        enc_b.validate("encoder_b")?;
        let state = TwoTowerState::new(enc_a, enc_b, cfg.queue_capacity, cfg.tau_init, cfg.momentum)?;
        let adam = AdamState::new(&state.trainable());
        Ok(Self {
            cfg: cfg.clone(),
            state,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.train.validate("train")?;
        if ck.adam.step != ck.step {
            return Err(CheckpointError::Malformed(format!(
                "optimizer step {} disagrees with trainer step {}",
                ck.adam.step, ck.step
            ))
            .into());
        }
        ck.state.trainable().check_same_layout(&ck.adam.m)?;
        Ok(Self {
            cfg: ck.train,
            state: ck.state,
            adam: ck.adam,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            train: self.cfg.clone(),
            state: self.state.clone(),
            adam: self.adam.clone(),
            step: self.step,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TwoTowerState {
        &self.state
    }

    pub fn into_state(self) -> TwoTowerState {
        self.state
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> u64 {
        (n_train / self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self, n_train: usize) -> u64 {
        self.steps_per_epoch(n_train) * self.cfg.epochs as u64
    }

    /// One update on `batch`, with `lr` for the optimizer.
    pub fn train_on_batch(&mut self, batch: &[&crate::data::ModalityPair], lr: f64) -> Result<StepRecord> {
        let (out, grads) = training_step(&self.state, batch)?;
        let mut params = self.state.trainable();
        adamw_step(&mut params, &grads, &mut self.adam, &self.cfg.hyper(lr))?;
        self.state.set_trainable(&params)?;
        self.state.update_momentum_encoders()?;
        self.state.enqueue(&out)?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            epoch: 0,
            lr,
            loss_a2b: out.loss_a2b,
            loss_b2a: out.loss_b2a,
            loss_total: out.loss_total,
            tau: self.state.tau(),
        })
    }

    /// Trains until `stop_at` completed steps (or the end of the schedule).
    /// Epoch `e` is shuffled with seed `cfg.seed + e`; partial batches are
    /// dropped.
    pub fn run(
        &mut self,
        train: &PairDataset,
        eval: Option<&PairDataset>,
        stop_at: Option<u64>,
        history: &mut TrainHistory,
    ) -> Result<()> {
        let per_epoch = self.steps_per_epoch(train.len());
        if per_epoch == 0 {
            return Err(Error::Dataset(format!(
                "{} training pairs cannot fill one batch of {}",
                train.len(),
                self.cfg.batch_size
            )));
        }
        self.check_dims(train)?;
        let total = self.total_steps(train.len());
        let stop = stop_at.map_or(total, |s| s.min(total));
        let mut order: Option<(u64, Vec<Vec<usize>>)> = None;

        while self.step < stop {
            let epoch = self.step / per_epoch;
            if order.as_ref().map(|o| o.0) != Some(epoch) {
                order = Some((epoch, batches(train, self.cfg.batch_size, self.cfg.seed + epoch)?));
            }
            let idx = &order.as_ref().expect("set above").1[(self.step % per_epoch) as usize];
            let batch: Vec<_> = idx.iter().map(|&i| &train.pairs()[i]).collect();
            let lr = lr_for_update(self.step, total, self.cfg.base_lr)?;
            let at = self.step + 1;
            let mut rec = self
                .train_on_batch(&batch, lr)
                .map_err(|e| Error::AtStep { step: at, source: Box::new(e) })?;
            rec.epoch = epoch;
            history.steps.push(rec);

            let due = self.cfg.eval_every > 0 && self.step.is_multiple_of(self.cfg.eval_every);
            if let Some(ev) = eval {
                if due || self.step == total {
                    let report = evaluate(&self.state, ev, &[1, 5, 10]).map_err(|e| Error::AtStep {
                        step: self.step,
                        source: Box::new(e),
                    })?;
                    history.evals.push(EvalRecord::from_report(self.step, &report));
                }
            }
        }
        Ok(())
    }

    fn check_dims(&self, ds: &PairDataset) -> Result<()> {
        let want_a = self.state.query_a.input_dim();
        let want_b = self.state.query_b.input_dim();
        if ds.dim_a() != Some(want_a) {
            return Err(Error::config(
                "encoder_a.input_dim",
                format!("is {want_a} but the dataset has feat_a width {:?}", ds.dim_a()),
            ));
        }
        if ds.dim_b() != Some(want_b) {
            return Err(Error::config(
                "encoder_b.input_dim",
                format!("is {want_b} but the dataset has feat_b width {:?}", ds.dim_b()),
            ));
        }
        Ok(())
    }
}

/// Full training run from scratch; deterministic in `cfg.seed` and the
/// encoder seeds.
pub fn fit(
    train: &PairDataset,
    eval: Option<&PairDataset>,
    cfg: &TrainConfig,
    enc_a: &EncoderConfig,
    enc_b: &EncoderConfig,
) -> Result<(TwoTowerState, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut trainer = Trainer::new(cfg, enc_a, enc_b)?;
    let mut history = TrainHistory::default();
    trainer.run(train, eval, None, &mut history)?;
    Ok((trainer.into_state(), history))
}
