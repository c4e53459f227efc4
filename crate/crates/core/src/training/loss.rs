use crate::error::{PanError, Result};
use crate::model::{ModelParams, ModelVars, ParamKind};
use crate::numerics::tape::bce_value;
use crate::numerics::{Tape, Tensor, Var};

/// Weighted binary cross-entropy
/// `J = −(1/m) Σ_i (w·y_i·log ŷ_i + (1 − y_i)·log(1 − ŷ_i))`
/// over the `m` label columns, averaged over rows. Log arguments are clamped
/// to at least 1e−12.
pub fn weighted_bce(pred: &Tensor, target: &Tensor, pos_weight: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(PanError::dim("weighted_bce", pred.shape(), target.shape()));
    }
    bce_value(pred, target.values(), pos_weight)
}

/// `λ · Σ ‖W‖²` over trainable weights; biases and the frozen embedding are
/// excluded.
pub fn l2_penalty(params: &ModelParams, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let sum: f64 = params
        .trainable()
        .into_iter()
        .zip(ModelParams::trainable_kinds())
        .filter(|(_, kind)| *kind == ParamKind::Weight)
        .map(|(t, _)| t.sum_squares())
        .sum();
    lambda * sum
}

/// Tape version of [`l2_penalty`] over the clean leaves of `vars`.
/// Returns `None` when `lambda` is zero.
pub fn l2_on_tape(tape: &mut Tape, vars: &ModelVars, lambda: f64) -> Result<Option<Var>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (&leaf, kind) in vars.leaves.iter().zip(ModelParams::trainable_kinds()) {
        if kind != ParamKind::Weight {
            continue;
        }
        let sq = tape.sum_squares(leaf);
        total = Some(match total {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    Ok(total.map(|t| tape.scale(t, lambda)))
}
