use crate::error::{PanError, Result};
use crate::model::attention::attention_pool_batch;
use crate::model::gru::bigru_layer;
use crate::model::params::{ModelParams, ModelVars};
use crate::numerics::{Tape, Tensor, Var};
use crate::textprep::{EmbeddingMatrix, Example};
use crate::training::regularize::{sample_step_noise, Regularization};

/// Equal-length index sequences with their masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn new(indices: Vec<Vec<usize>>, mask: Vec<Vec<bool>>) -> Result<Self> {
        let steps = indices.first().map_or(0, Vec::len);
        if indices.is_empty() || steps == 0 {
            return Err(PanError::EmptySequence("batch has no positions".into()));
        }
        if mask.len() != indices.len()
            || indices.iter().any(|r| r.len() != steps)
            || mask.iter().any(|r| r.len() != steps)
        {
            return Err(PanError::dim("Batch::new", &[indices.len(), steps], &[mask.len()]));
        }
        Ok(Batch { indices, mask })
    }

    /// A batch of fully valid sequences of equal length.
    pub fn unmasked(indices: Vec<Vec<usize>>) -> Result<Self> {
        let mask = indices.iter().map(|r| vec![true; r.len()]).collect();
        Batch::new(indices, mask)
    }

    /// Stacks examples, trimming trailing positions that are padding in
    /// every row. Trimming does not change any result: padded positions are
    /// inert.
    pub fn from_examples(examples: &[&Example]) -> Result<Self> {
        let steps = examples.iter().map(|e| e.valid_len()).max().unwrap_or(0).max(1);
        let indices = examples.iter().map(|e| e.indices[..steps].to_vec()).collect();
        let mask = examples.iter().map(|e| e.mask[..steps].to_vec()).collect();
        Batch::new(indices, mask)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.indices[0].len()
    }

    /// `mask` flattened row-major (`B × T`).
    pub fn flat_mask(&self) -> Vec<bool> {
        self.mask.concat()
    }

    /// Column `t` of the mask (one flag per sequence).
    pub fn step_mask(&self, t: usize) -> Vec<bool> {
        self.mask.iter().map(|row| row[t]).collect()
    }
}

/// Looks up every position: one `B × d_emb` matrix per time step.
pub fn embed_steps(batch: &Batch, embedding: &EmbeddingMatrix) -> Result<Vec<Tensor>> {
    let rows = embedding.vocab_size();
    let d = embedding.dim();
    (0..batch.steps())
        .map(|t| {
            let mut values = Vec::with_capacity(batch.len() * d);
            for seq in &batch.indices {
                let idx = seq[t];
                if idx >= rows {
                    return Err(PanError::Lookup { index: idx, rows });
                }
                values.extend_from_slice(embedding.row(idx));
            }
            Tensor::new(&[batch.len(), d], values)
        })
        .collect()
}

/// `X = S W_e` as a `B × T × d_emb` tensor.
pub fn embed(batch: &Batch, embedding: &EmbeddingMatrix) -> Result<Tensor> {
    let steps = embed_steps(batch, embedding)?;
    let (b, t, d) = (batch.len(), batch.steps(), embedding.dim());
    let mut values = vec![0.0; b * t * d];
    for (step, x) in steps.iter().enumerate() {
        for row in 0..b {
            values[(row * t + step) * d..(row * t + step + 1) * d].copy_from_slice(x.row(row));
        }
    }
    Tensor::new(&[b, t, d], values)
}

/// Multiplicative masks for one train-mode step: `spatial` is `B × d_emb`
/// (shared by every position), `dense` is `B × pooled_dim`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DropoutMasks {
    pub spatial: Option<Tensor>,
    pub dense: Option<Tensor>,
}

/// Output handles of [`forward_graph`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardGraph {
    /// `B × 11` sigmoid outputs.
    pub probs: Var,
    /// `B × T` attention weights of the two pooling layers.
    pub attention: [Var; 2],
}

/// Records the full network on `tape`:
/// embedding → (spatial dropout) → BiGRU 1 → BiGRU 2 → attention over
/// `[H1; X]` and `[H2; H1; X]` → concat → (dropout) → dense → sigmoid.
pub fn forward_graph(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ModelVars,
    batch: &Batch,
    masks: &DropoutMasks,
) -> Result<ForwardGraph> {
    let embedded = embed_steps(batch, &params.embedding)?;
    let spatial = masks.spatial.as_ref().map(|m| tape.constant(m.clone()));
    let xs: Vec<Var> = embedded
        .into_iter()
        .map(|x| {
            let x = tape.constant(x);
            match spatial {
                Some(m) => tape.mul(x, m),
                None => Ok(x),
            }
        })
        .collect::<Result<_>>()?;

    let step_masks: Vec<Vec<bool>> = (0..batch.steps()).map(|t| batch.step_mask(t)).collect();
    let h1 = bigru_layer(tape, &xs, &vars.gru1_fwd, &vars.gru1_bwd, &step_masks)?;
    let h2 = bigru_layer(tape, &h1, &vars.gru2_fwd, &vars.gru2_bwd, &step_masks)?;

    let u1: Vec<Var> = (0..xs.len()).map(|t| tape.concat(&[h1[t], xs[t]])).collect::<Result<_>>()?;
    let u2: Vec<Var> = (0..xs.len())
        .map(|t| tape.concat(&[h2[t], h1[t], xs[t]]))
        .collect::<Result<_>>()?;

    let flat_mask = batch.flat_mask();
    let v1 = attention_pool_batch(tape, &u1, &vars.attn1, &flat_mask)?;
    let v2 = attention_pool_batch(tape, &u2, &vars.attn2, &flat_mask)?;
    let mut v = tape.concat(&[v1.pooled, v2.pooled])?;
    if let Some(mask) = &masks.dense {
        let mask = tape.constant(mask.clone());
        v = tape.mul(v, mask)?;
    }

    let logits = tape.matmul(v, vars.dense_w)?;
    let logits = tape.add_row(logits, vars.dense_b)?;
    Ok(ForwardGraph {
        probs: tape.sigmoid(logits),
        attention: [v1.weights, v2.weights],
    })
}

/// Forward-pass mode. Train mode applies the stochastic regularizers drawn
/// from the seed passed to [`forward`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Eval,
    Train(Regularization),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// `B × 11` probabilities in (0, 1).
    pub probs: Tensor,
    /// `B × T` weights of attention layers 1 and 2.
    pub attention: [Tensor; 2],
}

/// Runs the model without keeping gradients.
pub fn forward(batch: &Batch, params: &ModelParams, mode: Mode, seed: u64) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let (noise, masks) = match mode {
        Mode::Eval => (None, DropoutMasks::default()),
        Mode::Train(reg) => sample_step_noise(params, batch, &reg, seed, &[0])?,
    };
    let vars = params.register(&mut tape, noise.as_ref())?;
    let out = forward_graph(&mut tape, params, &vars, batch, &masks)?;
    Ok(ForwardOutput {
        probs: tape.value(out.probs).clone(),
        attention: out.attention.map(|a| tape.value(a).clone()),
    })
}
