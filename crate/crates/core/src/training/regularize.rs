//! Stochastic regularizers: inverted dropout, spatial dropout and per-step
//! Gaussian noise on the GRU hidden-to-hidden weights.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{PanError, Result};
use crate::model::{Batch, DropoutMasks, HiddenWeightNoise, ModelParams};
use crate::numerics::Tensor;
use crate::rng;

/// Rates of the three train-time regularizers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularization {
    pub spatial_dropout: f64,
    pub dropout: f64,
    pub weight_noise_std: f64,
}

impl Regularization {
    pub const NONE: Regularization = Regularization {
        spatial_dropout: 0.0,
        dropout: 0.0,
        weight_noise_std: 0.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutVariant {
    /// Independent scalar units.
    Standard,
    /// Whole feature channels, shared across all positions of a sequence.
    Spatial,
}

/// `rows × cols` mask of `0` (probability `p`) and `1/(1−p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let values = (0..rows * cols)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::new(&[rows, cols], values).expect("positive dims")
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(PanError::Config(format!("dropout rate {p} outside [0, 1)")))
    }
}

/// Inverted dropout on a standalone tensor.
///
/// Standard dropout zeroes scalars. Spatial dropout expects `B × T × d` (or
/// `T × d` for one sequence) and zeroes channel `d` of a sequence at every
/// position at once. Survivors are scaled by `1/(1−p)`; eval mode and `p = 0`
/// are the identity.
pub fn apply_dropout(x: &Tensor, p: f64, training: bool, seed: u64, variant: DropoutVariant) -> Result<Tensor> {
    check_rate(p)?;
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let mut rng = rng::stream(
        seed,
        match variant {
            DropoutVariant::Standard => rng::STREAM_DROPOUT,
            DropoutVariant::Spatial => rng::STREAM_SPATIAL_DROPOUT,
        },
        &[],
    );
    let mut out = x.clone();
    match variant {
        DropoutVariant::Standard => {
            let mask = dropout_mask(1, x.numel(), p, &mut rng);
            for (v, m) in out.values_mut().iter_mut().zip(mask.values()) {
                *v *= m;
            }
        }
        DropoutVariant::Spatial => {
            let (batch, steps, d) = match x.shape() {
                &[b, t, d] => (b, t, d),
                &[t, d] => (1, t, d),
                other => {
                    return Err(PanError::Contract(format!(
                        "spatial dropout needs B×T×d or T×d, got {other:?}"
                    )))
                }
            };
            let mask = dropout_mask(batch, d, p, &mut rng);
            let values = out.values_mut();
            for b in 0..batch {
                let channel = mask.row(b);
                for t in 0..steps {
                    let start = (b * steps + t) * d;
                    for (v, m) in values[start..start + d].iter_mut().zip(channel) {
                        *v *= m;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Fresh `N(0, σ²)` noise for `W_hr`, `W_hz`, `W_hn` of all four GRU
/// directions. The clean weights are left untouched; the noise is only used
/// for the forward/backward pass of one step.
pub fn perturb_hidden_weights(params: &ModelParams, sigma: f64, rng: &mut ChaCha8Rng) -> Result<HiddenWeightNoise> {
    let normal = Normal::new(0.0, sigma).map_err(|e| PanError::Config(format!("weight noise std {sigma}: {e}")))?;
    let dirs = params.directions();
    let sample = |t: &Tensor, rng: &mut ChaCha8Rng| {
        let values = (0..t.numel()).map(|_| normal.sample(rng)).collect();
        Tensor::new(t.shape(), values).expect("same shape")
    };
    let mut deltas: Vec<[Tensor; 3]> = Vec::with_capacity(4);
    for d in dirs {
        deltas.push([sample(&d.w_hr, rng), sample(&d.w_hz, rng), sample(&d.w_hn, rng)]);
    }
    Ok(HiddenWeightNoise {
        deltas: deltas.try_into().expect("four directions"),
    })
}

/// Parameters with `noise` added to the hidden-to-hidden weights.
pub fn noisy_params(params: &ModelParams, noise: &HiddenWeightNoise) -> ModelParams {
    let mut out = params.clone();
    let dirs = [&mut out.gru1_fwd, &mut out.gru1_bwd, &mut out.gru2_fwd, &mut out.gru2_bwd];
    for (d, delta) in dirs.into_iter().zip(&noise.deltas) {
        for (w, n) in [&mut d.w_hr, &mut d.w_hz, &mut d.w_hn].into_iter().zip(delta) {
            for (v, e) in w.values_mut().iter_mut().zip(n.values()) {
                *v += e;
            }
        }
    }
    out
}

/// Draws all randomness of one train-mode step. Each regularizer has its own
/// stream, indexed by `step` (typically `[epoch, batch]`), so turning one off
/// leaves the others' draws unchanged.
pub fn sample_step_noise(
    params: &ModelParams,
    batch: &Batch,
    reg: &Regularization,
    root_seed: u64,
    step: &[u64],
) -> Result<(Option<HiddenWeightNoise>, DropoutMasks)> {
    check_rate(reg.spatial_dropout)?;
    check_rate(reg.dropout)?;
    if !(reg.weight_noise_std >= 0.0) {
        return Err(PanError::Config(format!("weight noise std {} < 0", reg.weight_noise_std)));
    }
    let dims = params.dims();
    let spatial = (reg.spatial_dropout > 0.0).then(|| {
        let mut rng = rng::stream(root_seed, rng::STREAM_SPATIAL_DROPOUT, step);
        dropout_mask(batch.len(), dims.d_emb, reg.spatial_dropout, &mut rng)
    });
    let dense = (reg.dropout > 0.0).then(|| {
        let mut rng = rng::stream(root_seed, rng::STREAM_DROPOUT, step);
        dropout_mask(batch.len(), dims.pooled_dim(), reg.dropout, &mut rng)
    });
    let noise = if reg.weight_noise_std > 0.0 {
        let mut rng = rng::stream(root_seed, rng::STREAM_WEIGHT_NOISE, step);
        Some(perturb_hidden_weights(params, reg.weight_noise_std, &mut rng)?)
    } else {
        None
    };
    Ok((noise, DropoutMasks { spatial, dense }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::EmbeddingMatrix;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let x = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        for variant in [DropoutVariant::Standard, DropoutVariant::Spatial] {
            assert_eq!(apply_dropout(&x, 0.0, true, 1, variant).unwrap(), x);
            assert_eq!(apply_dropout(&x, 0.0, false, 1, variant).unwrap(), x);
            assert_eq!(apply_dropout(&x, 0.7, false, 1, variant).unwrap(), x);
        }
        assert!(apply_dropout(&x, 1.0, true, 1, DropoutVariant::Standard).is_err());
    }

    #[test]
    fn standard_dropout_scales_survivors() {
        let x = Tensor::filled(&[10, 10], 2.0);
        let y = apply_dropout(&x, 0.2, true, 5, DropoutVariant::Standard).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0 || (v - 2.5).abs() < 1e-15));
        assert!(y.values().iter().any(|&v| v == 0.0));
    }

    #[test]
    fn spatial_dropout_zeroes_whole_channels() {
        let x = Tensor::filled(&[3, 50, 8], 1.0);
        let y = apply_dropout(&x, 0.4, true, 9, DropoutVariant::Spatial).unwrap();
        for b in 0..3 {
            for c in 0..8 {
                let first = y.values()[(b * 50) * 8 + c];
                for t in 0..50 {
                    assert_eq!(y.values()[(b * 50 + t) * 8 + c], first);
                }
            }
        }
    }

    #[test]
    fn noise_is_not_persisted() {
        let p = ModelParams::init(EmbeddingMatrix::random(5, 3, 0), 2, 0);
        let mut rng = rng::stream(1, rng::STREAM_WEIGHT_NOISE, &[]);
        let noise = perturb_hidden_weights(&p, 0.1, &mut rng).unwrap();
        let noisy = noisy_params(&p, &noise);
        assert_ne!(noisy.gru1_fwd.w_hr, p.gru1_fwd.w_hr);
        assert_eq!(noisy.gru1_fwd.w_ir, p.gru1_fwd.w_ir);
        let mut rng = rng::stream(1, rng::STREAM_WEIGHT_NOISE, &[]);
        let zero = perturb_hidden_weights(&p, 0.0, &mut rng).unwrap();
        assert_eq!(noisy_params(&p, &zero), p);
    }
}
