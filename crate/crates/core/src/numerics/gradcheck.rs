//! Finite-difference verification of tape gradients.

use crate::error::{PanError, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Floor of the relative-error denominator. Central differences with a step
/// of 1e-5 carry roughly 1e-11 of rounding noise, so components smaller than
/// this are effectively compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, component index)` of the worst component.
    pub worst: Option<(usize, usize)>,
    pub components_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss);
    if value.numel() != 1 {
        return Err(PanError::Contract(format!(
            "grad_check objective must be scalar, got {:?}",
            value.shape()
        )));
    }
    Ok(value.values()[0])
}

/// Compares the tape gradient of `f` at `params` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, one component at a time.
///
/// `f` registers nothing itself: it receives one trainable [`Var`] per entry
/// of `params`, in order, and returns the scalar objective.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(PanError::Contract(format!("finite-difference step must be positive, got {eps}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let first = tape.value(loss).values().first().copied().unwrap_or(f64::NAN);
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.take(v).expect("every registered param is trainable"))
        .collect();

    let second = evaluate(params, &f)?;
    if first.to_bits() != second.to_bits() {
        return Err(PanError::NonDeterministic { first, second });
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        components_checked: 0,
    };
    let mut probe = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..grad.numel() {
            let original = probe[pi].values()[ci];
            probe[pi].values_mut()[ci] = original + eps;
            let plus = evaluate(&probe, &f)?;
            probe[pi].values_mut()[ci] = original - eps;
            let minus = evaluate(&probe, &f)?;
            probe[pi].values_mut()[ci] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grad.values()[ci], numeric);
            report.components_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((pi, ci));
            }
        }
    }
    Ok(report)
}
