//! Per-modality towers: an MLP backbone over pre-extracted features followed by
//! a two-layer projection head (linear, ReLU, linear) and L2 normalization.
//!
//! Both towers emit `embed_dim`-wide unit vectors, so a dot product between
//! any two embeddings is a cosine similarity in `[-1, 1]`.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, linear_rows, ParamSet, ParamVars, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub proj_hidden: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk default for modality A (64-wide features).
    pub fn default_a() -> Self {
        Self {
            input_dim: 64,
            hidden_dims: vec![64],
            proj_hidden: 64,
            embed_dim: 32,
            seed: 1,
        }
    }

    /// Desk default for modality B (48-wide features).
    pub fn default_b() -> Self {
        Self {
            input_dim: 48,
            seed: 2,
            ..Self::default_a()
        }
    }

    /// `key` is the config path used in error messages, e.g. `encoder_a`.
    pub fn validate(&self, key: &str) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("{key}.{name}"), "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("input_dim", self.input_dim)?;
        positive("proj_hidden", self.proj_hidden)?;
        positive("embed_dim", self.embed_dim)?;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            positive(&format!("hidden_dims[{i}]"), h)?;
        }
        Ok(())
    }

    /// `(name, [fan_out, fan_in])` for every linear layer, in forward order.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            out.push((format!("backbone.{i}"), h, fan_in));
            fan_in = h;
        }
        out.push(("head.0".to_string(), self.proj_hidden, fan_in));
        out.push(("head.1".to_string(), self.embed_dim, self.proj_hidden));
        out
    }
}

/// Parameters of one tower. Names are `backbone.<i>.{weight,bias}` and
/// `head.{0,1}.{weight,bias}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    params: ParamSet,
}

/// Glorot-uniform weights, zero biases, deterministic in `cfg.seed`.
pub fn init_encoder(cfg: &EncoderConfig) -> Result<EncoderParams> {
    cfg.validate("encoder")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::new();
    for (name, fan_out, fan_in) in cfg.layers() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let w: Vec<f64> = (0..fan_out * fan_in).map(|_| dist.sample(&mut rng)).collect();
        params.insert(format!("{name}.weight"), Tensor::matrix(fan_out, fan_in, w)?)?;
        params.insert(format!("{name}.bias"), Tensor::zeros(vec![fan_out]))?;
    }
    Ok(EncoderParams {
        config: cfg.clone(),
        params,
    })
}

impl EncoderParams {
    /// Wraps existing tensors after checking they fit `config`.
    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate("encoder")?;
        let mut expected = ParamSet::new();
        for (name, fan_out, fan_in) in config.layers() {
            expected.insert(format!("{name}.weight"), Tensor::zeros(vec![fan_out, fan_in]))?;
            expected.insert(format!("{name}.bias"), Tensor::zeros(vec![fan_out]))?;
        }
        expected.check_same_layout(&params)?;
        if !params.all_finite() {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    /// Embeds one feature vector into the joint space.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "encode input",
                left: vec![self.config.input_dim],
                right: vec![x.len()],
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let layers = self.config.layers();
        let last = layers.len() - 1;
        let mut h = x.to_vec();
        for (i, (name, fan_out, fan_in)) in layers.iter().enumerate() {
            let w = self.params.get(&format!("{name}.weight"))?;
            let b = self.params.get(&format!("{name}.bias"))?;
            h = linear_rows(&h, 1, *fan_in, w.data(), *fan_out, b.data());
            if i != last {
                h = numkit::relu(&h);
            }
        }
        numkit::l2_normalize(&h)
    }

    /// Order-preserving `encode` over a batch; errors carry the item index.
    pub fn encode_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| self.encode(x).map_err(|e| Error::at_index(i, e)))
            .collect()
    }

    /// Same forward pass on a tape. `x` is `n x input_dim`; parameters are
    /// looked up in `vars` as `<prefix><name>`. Produces values bitwise equal
    /// to [`EncoderParams::encode`] row by row.
    pub fn encode_on_tape(
        config: &EncoderConfig,
        tape: &mut Tape,
        vars: &ParamVars,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let layers = config.layers();
        let last = layers.len() - 1;
        let lookup = |n: String| {
            vars.get(&n)
                .copied()
                .ok_or(Error::UnknownParam(n))
        };
        let mut h = x;
        for (i, (name, _, _)) in layers.iter().enumerate() {
            let w = lookup(format!("{prefix}{name}.weight"))?;
            let b = lookup(format!("{prefix}{name}.bias"))?;
            h = tape.linear(h, w, b)?;
            if i != last {
                h = tape.relu(h);
            }
        }
        tape.normalize_rows(h)
    }
}
