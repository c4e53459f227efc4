use crate::error::{PanError, Result};
use crate::model::params::{AttentionParams, AttentionVars};
use crate::numerics::{Tape, Tensor, Var};

/// Result of pooling a batch: `pooled` is `B × d_u`, `weights` is `B × T`.
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub pooled: Var,
    pub weights: Var,
}

/// Attention pooling over positions.
///
/// `us[t]` is the `B × d_u` matrix of position `t`; `mask` is `B × T`
/// row-major. Scores are affine, `e = u·w_a + b`, normalized with a masked
/// softmax over the positions of each sequence, and the output is the
/// weighted sum of the rows.
pub fn attention_pool_batch(tape: &mut Tape, us: &[Var], p: &AttentionVars, mask: &[bool]) -> Result<Pooled> {
    if us.is_empty() {
        return Err(PanError::EmptySequence("attention over zero positions".into()));
    }
    let scores: Vec<Var> = us
        .iter()
        .map(|&u| {
            let e = tape.matmul(u, p.w_a)?;
            tape.add_row(e, p.b)
        })
        .collect::<Result<_>>()?;
    let scores = tape.concat(&scores)?;
    let weights = tape.masked_softmax(scores, mask)?;

    let mut pooled: Option<Var> = None;
    for (t, &u) in us.iter().enumerate() {
        let a_t = tape.column(weights, t)?;
        let term = tape.scale_rows(u, a_t)?;
        pooled = Some(match pooled {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(Pooled {
        pooled: pooled.expect("at least one position"),
        weights,
    })
}

/// Pools a single `T × d_u` matrix; returns `(V, a)` with `V` of length `d_u`
/// (as `1 × d_u`) and weights `1 × T`.
pub fn attention_pool(u: &Tensor, p: &AttentionParams, mask: &[bool]) -> Result<(Tensor, Tensor)> {
    let (steps, d_u) = u.dims2()?;
    if d_u != p.dim() {
        return Err(PanError::dim("attention_pool", u.shape(), p.w_a.shape()));
    }
    if mask.len() != steps {
        return Err(PanError::dim("attention_pool", u.shape(), &[mask.len()]));
    }
    if !mask.iter().any(|&m| m) {
        return Err(PanError::EmptySequence("no valid position to attend to".into()));
    }
    let mut tape = Tape::new();
    let vars = AttentionVars::constant(&mut tape, p);
    let rows: Vec<Var> = (0..steps)
        .map(|t| tape.constant(Tensor::new(&[1, d_u], u.row(t).to_vec()).expect("row")))
        .collect();
    let out = attention_pool_batch(&mut tape, &rows, &vars, mask)?;
    Ok((tape.value(out.pooled).clone(), tape.value(out.weights).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: &[f64], b: f64) -> AttentionParams {
        AttentionParams {
            w_a: Tensor::new(&[w.len(), 1], w.to_vec()).unwrap(),
            b: Tensor::scalar(b),
        }
    }

    #[test]
    fn single_position_returns_the_row() {
        let u = Tensor::new(&[1, 3], vec![0.1, -2.0, 5.0]).unwrap();
        let (v, a) = attention_pool(&u, &params(&[1.0, 2.0, 3.0], 0.5), &[true]).unwrap();
        assert_eq!(v.values(), u.values());
        assert_eq!(a.values(), &[1.0]);
    }

    #[test]
    fn identical_rows_pool_to_that_row() {
        let u = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        let (v, _) = attention_pool(&u, &params(&[0.4, -1.0], 0.0), &[true; 3]).unwrap();
        assert!((v.values()[0] - 0.3).abs() < 1e-15);
        assert!((v.values()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn hand_set_scores_weight_two_to_one() {
        // scores: row0 · [1, 0] = ln 2, row1 · [1, 0] = 0
        let ln2 = 2f64.ln();
        let u = Tensor::from_rows(&[vec![ln2, 3.0], vec![0.0, -6.0]]).unwrap();
        let (v, a) = attention_pool(&u, &params(&[1.0, 0.0], 0.0), &[true, true]).unwrap();
        let expect = [2.0 / 3.0 * ln2, 2.0 / 3.0 * 3.0 + 1.0 / 3.0 * -6.0];
        assert!((a.values()[0] - 2.0 / 3.0).abs() < 1e-15);
        for (got, want) in v.values().iter().zip(expect) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn all_masked_is_an_error() {
        let u = Tensor::zeros(&[2, 2]);
        let err = attention_pool(&u, &params(&[1.0, 1.0], 0.0), &[false, false]).unwrap_err();
        assert!(matches!(err, PanError::EmptySequence(_)));
    }
}
