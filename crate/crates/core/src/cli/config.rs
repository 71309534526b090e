use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SynthSpec;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::retrieval::{EvalSettings, Gain};
use crate::trainer::TrainConfig;

/// One JSON document configuring every command. Absent sections and fields
/// take their defaults; unknown keys are rejected.
///
/// ```json
/// {
///   "train":     { "batch_size": 64, "epochs": 15, "base_lr": 0.003, ... },
///   "encoder_a": { "input_dim": 64, "hidden_dims": [64], "proj_hidden": 64, "embed_dim": 32, "seed": 1 },
///   "encoder_b": { "input_dim": 48, ... },
///   "synth":     { "n_pairs": 2000, "latent_dim": 16, "noise_sigma": 0.05, "correlation_mode": "strong", ... },
///   "eval":      { "split": [0.5, 0.0, 0.5], "split_seed": 0, "recall_ks": [1, 5, 10], ... },
///   "service":   { "host": "127.0.0.1", "port": 8080 }
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub encoder_a: EncoderConfig,
    pub encoder_b: EncoderConfig,
    pub synth: SynthSpec,
    pub eval: EvalOptions,
    pub service: ServiceOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            encoder_a: EncoderConfig::default_a(),
            encoder_b: EncoderConfig::default_b(),
            synth: SynthSpec::default(),
            eval: EvalOptions::default(),
            service: ServiceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// `(train, val, test)` fractions used when a single dataset must be
    /// split for training; evaluation runs on the test part.
    pub split: [f64; 3],
    pub split_seed: u64,
    pub recall_ks: Vec<usize>,
    pub ndcg_ks: Vec<usize>,
    pub map_threshold: i32,
    pub gain: Gain,
    pub graded_depth: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        let s = EvalSettings::default();
        Self {
            split: [0.5, 0.0, 0.5],
            split_seed: 0,
            recall_ks: s.recall_ks,
            ndcg_ks: s.ndcg_ks,
            map_threshold: s.map_threshold,
            gain: s.gain,
            graded_depth: s.graded_depth,
        }
    }
}

impl EvalOptions {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            recall_ks: self.recall_ks.clone(),
            ndcg_ks: self.ndcg_ks.clone(),
            map_threshold: self.map_threshold,
            gain: self.gain,
            graded_depth: self.graded_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceOptions {
    pub host: String,
    pub port: u16,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides in order, then
    /// validates every section.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| Error::config(p.display().to_string(), e.to_string()))?
            }
            None => Value::Object(Default::default()),
        };
        // Fill defaults first so overrides can target any leaf.
        let base: RunConfig = serde_json::from_value(doc)
            .map_err(|e| Error::config("<config>", e.to_string()))?;
        doc = serde_json::to_value(&base)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate("train")?;
        self.encoder_a.validate("encoder_a")?;
        self.encoder_b.validate("encoder_b")?;
        if self.encoder_a.embed_dim != self.encoder_b.embed_dim {
            return Err(Error::config(
                "encoder_b.embed_dim",
                format!(
                    "is {} but encoder_a.embed_dim is {}",
                    self.encoder_b.embed_dim, self.encoder_a.embed_dim
                ),
            ));
        }
        self.synth.validate("synth")?;
        self.eval.settings().validate("eval")?;
        let s = self.eval.split;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("eval.split", "fractions must lie in [0, 1] and sum to 1"));
        }
        if self.service.host.is_empty() {
            return Err(Error::config("service.host", "must not be empty"));
        }
        Ok(())
    }

    /// Encoder input widths must match the synthetic generator when training
    /// on generated data.
    pub fn check_synth_dims(&self) -> Result<()> {
        if self.encoder_a.input_dim != self.synth.input_dim_a {
            return Err(Error::config(
                "encoder_a.input_dim",
                format!("is {} but synth.input_dim_a is {}", self.encoder_a.input_dim, self.synth.input_dim_a),
            ));
        }
        if self.encoder_b.input_dim != self.synth.input_dim_b {
            return Err(Error::config(
                "encoder_b.input_dim",
                format!("is {} but synth.input_dim_b is {}", self.encoder_b.input_dim, self.synth.input_dim_b),
            ));
        }
        Ok(())
    }
}

/// `section.field=value`, where `value` is JSON (bare strings are accepted
/// as strings).
fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(key, "does not name a config field"))?;
        let child = obj
            .get_mut(*part)
            .ok_or_else(|| Error::config(key, "unknown config key"))?;
        if i + 1 == parts.len() {
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Err(Error::config(key, "empty key"))
}
