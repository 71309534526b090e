use crate::error::{Error, Result};
use crate::moco::LOG_TAU;
use crate::numkit::ParamSet;

/// AdamW hyperparameters for a single update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moment estimates plus the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Weight decay touches weight matrices only: never biases, never the temperature.
pub fn is_decayed(name: &str) -> bool {
    !(name.ends_with("bias") || name == LOG_TAU || name.ends_with(&format!(".{LOG_TAU}")))
}

/// One AdamW update in place.
///
/// Decoupled decay `θ ← θ - lr·wd·θ` is applied first, then the
/// bias-corrected Adam step `θ ← θ - lr·m̂/(√v̂ + ε)`.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<()> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.m)?;
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);

    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((name, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let decay = if is_decayed(name) { hp.lr * hp.weight_decay } else { 0.0 };
        let p = p.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            if decay != 0.0 {
                p[i] -= decay * p[i];
            }
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// `0.5 · base_lr · (1 + cos(π · step / total_steps))`, no warmup.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidArgument("cosine schedule needs total_steps >= 1".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step} beyond schedule length {total_steps}"
        )));
    }
    let frac = step as f64 / total_steps as f64;
    Ok(0.5 * base_lr * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// Learning rate of the `index`-th update (0-based) out of `updates`: the
/// first update runs at `base_lr`, the last at exactly 0.
pub fn lr_for_update(index: u64, updates: u64, base_lr: f64) -> Result<f64> {
    if updates <= 1 {
        return Ok(base_lr);
    }
    cosine_lr(index, updates - 1, base_lr)
}
