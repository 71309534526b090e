//! Central finite differences of the training loss, for checking the
//! analytic gradients of [`training_step`].

use crate::data::ModalityPair;
use crate::error::Result;
use crate::moco::{training_step, TwoTowerState};
use crate::numkit::ParamSet;

/// `∂loss_total/∂θ` for every trainable entry, by `(L(θ+h) - L(θ-h)) / 2h`.
/// Momentum towers and queues stay fixed.
pub fn numeric_gradient(state: &TwoTowerState, batch: &[&ModalityPair], h: f64) -> Result<ParamSet> {
    let base = state.trainable();
    let mut grad = base.zeros_like();
    let mut probe = state.clone();
    let names: Vec<String> = base.names().map(str::to_string).collect();
    for name in &names {
        let len = base.get(name)?.len();
        for i in 0..len {
            let mut loss_at = |delta: f64| -> Result<f64> {
                let mut p = base.clone();
                p.get_mut(name)?.data_mut()[i] += delta;
                probe.set_trainable(&p)?;
                Ok(training_step(&probe, batch)?.0.loss_total)
            };
            let up = loss_at(h)?;
            let down = loss_at(-h)?;
            grad.get_mut(name)?.data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all entries, with the name
/// and flat index where it occurs.
pub fn max_relative_error(
    analytic: &ParamSet,
    numeric: &ParamSet,
    floor: f64,
) -> Result<(f64, String, usize)> {
    analytic.check_same_layout(numeric)?;
    let mut worst = (0.0, String::new(), 0);
    for ((name, a), (_, n)) in analytic.iter().zip(numeric.iter()) {
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, name.to_string(), i);
            }
        }
    }
    Ok(worst)
}
