//! Gated recurrent unit and its bidirectional, masked scan.
//!
//! One step, with row-vector inputs:
//!
//! ```text
//! r = σ(x W_ir + b_ir + h W_hr + b_hr)
//! z = σ(x W_iz + b_iz + h W_hz + b_hz)
//! n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! `b_hn` sits inside the reset gate.

use crate::error::{PanError, Result};
use crate::model::params::{GruDirectionParams, GruVars};
use crate::numerics::{Tape, Tensor, Var};

fn gate(tape: &mut Tape, x: Var, h: Var, w_i: Var, b_i: Var, w_h: Var, b_h: Var) -> Result<Var> {
    let xi = tape.matmul(x, w_i)?;
    let xi = tape.add_row(xi, b_i)?;
    let hh = tape.matmul(h, w_h)?;
    let hh = tape.add_row(hh, b_h)?;
    let pre = tape.add(xi, hh)?;
    Ok(tape.sigmoid(pre))
}

/// One GRU step over a batch: `x` is `B × d_in`, `h_prev` is `B × h`.
pub fn gru_step(tape: &mut Tape, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let r = gate(tape, x, h_prev, p.w_ir, p.b_ir, p.w_hr, p.b_hr)?;
    let z = gate(tape, x, h_prev, p.w_iz, p.b_iz, p.w_hz, p.b_hz)?;

    let xn = tape.matmul(x, p.w_in)?;
    let xn = tape.add_row(xn, p.b_in)?;
    let hn = tape.matmul(h_prev, p.w_hn)?;
    let hn = tape.add_row(hn, p.b_hn)?;
    let gated = tape.mul(r, hn)?;
    let pre_n = tape.add(xn, gated)?;
    let n = tape.tanh(pre_n);

    // (1 − z) n + z h  ==  n + z (h − n)
    let diff = tape.sub(h_prev, n)?;
    let carry = tape.mul(z, diff)?;
    tape.add(n, carry)
}

/// Single-vector GRU step without gradient tracking. `x` is `1 × d_in` (or a
/// `d_in` vector), `h_prev` is `1 × h`.
pub fn gru_cell(x: &Tensor, h_prev: &Tensor, p: &GruDirectionParams) -> Result<Tensor> {
    let as_row = |t: &Tensor| Tensor::new(&[1, t.numel()], t.values().to_vec());
    let x = as_row(x)?;
    let h_prev = as_row(h_prev)?;
    if x.numel() != p.input_dim() || h_prev.numel() != p.hidden() {
        return Err(PanError::dim("gru_cell", x.shape(), h_prev.shape()));
    }
    let mut tape = Tape::new();
    let vars = GruVars::constant(&mut tape, p);
    let xv = tape.constant(x);
    let hv = tape.constant(h_prev);
    let out = gru_step(&mut tape, xv, hv, &vars)?;
    Ok(tape.value(out).clone())
}

/// Scans `xs` (one `B × d_in` matrix per position) in both directions.
///
/// `step_masks[t][b]` marks position `t` of sequence `b` as real. A masked
/// step keeps the previous hidden state unchanged and emits a zero row, so
/// the backward direction effectively starts at the last real token. The
/// result at each position is `[h_fwd ; h_bwd]`, `B × 2h`.
pub fn bigru_layer(
    tape: &mut Tape,
    xs: &[Var],
    fwd: &GruVars,
    bwd: &GruVars,
    step_masks: &[Vec<bool>],
) -> Result<Vec<Var>> {
    let steps = xs.len();
    if steps == 0 || step_masks.len() != steps {
        return Err(PanError::dim("bigru_layer", &[steps], &[step_masks.len()]));
    }
    let batch = tape.value(xs[0]).dims2()?.0;
    let hidden = tape.value(fwd.w_hr).dims2()?.0;
    let h0 = tape.constant(Tensor::zeros(&[batch, hidden]));

    let mut scan = |p: &GruVars, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<Option<Var>>> {
        let mut outs = vec![None; steps];
        let mut h = h0;
        for t in order {
            let mask = &step_masks[t];
            let candidate = gru_step(tape, xs[t], h, p)?;
            h = if mask.iter().all(|&m| m) {
                candidate
            } else {
                tape.select_rows(candidate, h, mask)?
            };
            outs[t] = Some(if mask.iter().all(|&m| m) {
                h
            } else {
                tape.mask_rows(h, mask)?
            });
        }
        Ok(outs)
    };

    let forward = scan(fwd, &mut (0..steps))?;
    let backward = scan(bwd, &mut (0..steps).rev())?;
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f.expect("visited"), b.expect("visited")]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_halve_the_state() {
        let p = GruDirectionParams::zeros(3, 4);
        let h = Tensor::filled(&[1, 4], 0.8);
        let out = gru_cell(&Tensor::filled(&[1, 3], 0.3), &h, &p).unwrap();
        for &v in out.values() {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_update_gate_copies_state() {
        let mut p = GruDirectionParams::zeros(2, 3);
        p.b_iz = Tensor::filled(&[1, 3], 40.0);
        p.b_hz = Tensor::filled(&[1, 3], 40.0);
        p.b_in = Tensor::filled(&[1, 3], 0.7);
        let h = Tensor::new(&[1, 3], vec![0.1, -0.2, 0.3]).unwrap();
        let out = gru_cell(&Tensor::filled(&[1, 2], 1.0), &h, &p).unwrap();
        assert!(out.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = GruDirectionParams::zeros(2, 3);
        let err = gru_cell(&Tensor::zeros(&[1, 5]), &Tensor::zeros(&[1, 3]), &p).unwrap_err();
        assert!(matches!(err, PanError::Dimension { .. }));
    }
}
