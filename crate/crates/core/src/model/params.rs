use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PanError, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::rng;
use crate::textprep::{EmbeddingMatrix, NUM_EMOTIONS};

/// Layer widths. The dimension chain is
/// `d_emb → H1: 2h → H2: 2h → V1: 2h+d_emb, V2: 4h+d_emb → V → labels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub const DEFAULT_EMBEDDING_DIM: usize = 300;
    pub const DEFAULT_HIDDEN: usize = 50;

    pub fn standard(vocab_size: usize) -> Self {
        ModelDims {
            vocab_size,
            d_emb: Self::DEFAULT_EMBEDDING_DIM,
            hidden: Self::DEFAULT_HIDDEN,
        }
    }

    /// Width of one bidirectional layer's output.
    pub fn bigru_out(&self) -> usize {
        2 * self.hidden
    }

    pub fn attn1_dim(&self) -> usize {
        self.bigru_out() + self.d_emb
    }

    pub fn attn2_dim(&self) -> usize {
        2 * self.bigru_out() + self.d_emb
    }

    pub fn pooled_dim(&self) -> usize {
        self.attn1_dim() + self.attn2_dim()
    }

    pub fn labels(&self) -> usize {
        NUM_EMOTIONS
    }
}

/// Whether a parameter is a weight (subject to L2) or a bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(&[rows, cols], values).expect("positive dims")
}

/// Weights and biases of one GRU scan direction. Input matrices are
/// `d_in × h`, hidden matrices `h × h`, biases `1 × h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruDirectionParams {
    pub w_ir: Tensor,
    pub w_iz: Tensor,
    pub w_in: Tensor,
    pub w_hr: Tensor,
    pub w_hz: Tensor,
    pub w_hn: Tensor,
    pub b_ir: Tensor,
    pub b_iz: Tensor,
    pub b_in: Tensor,
    pub b_hr: Tensor,
    pub b_hz: Tensor,
    pub b_hn: Tensor,
}

impl GruDirectionParams {
    pub const NAMES: [&'static str; 12] = [
        "W_ir", "W_iz", "W_in", "W_hr", "W_hz", "W_hn", "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn",
    ];

    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        let wi = Tensor::zeros(&[d_in, hidden]);
        let wh = Tensor::zeros(&[hidden, hidden]);
        let b = Tensor::zeros(&[1, hidden]);
        GruDirectionParams {
            w_ir: wi.clone(),
            w_iz: wi.clone(),
            w_in: wi,
            w_hr: wh.clone(),
            w_hz: wh.clone(),
            w_hn: wh,
            b_ir: b.clone(),
            b_iz: b.clone(),
            b_in: b.clone(),
            b_hr: b.clone(),
            b_hz: b.clone(),
            b_hn: b,
        }
    }

    fn glorot(rng: &mut ChaCha8Rng, d_in: usize, hidden: usize) -> Self {
        let mut p = Self::zeros(d_in, hidden);
        p.w_ir = glorot(rng, d_in, hidden);
        p.w_iz = glorot(rng, d_in, hidden);
        p.w_in = glorot(rng, d_in, hidden);
        p.w_hr = glorot(rng, hidden, hidden);
        p.w_hz = glorot(rng, hidden, hidden);
        p.w_hn = glorot(rng, hidden, hidden);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_ir.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_ir.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.w_ir, &self.w_iz, &self.w_in, &self.w_hr, &self.w_hz, &self.w_hn, &self.b_ir, &self.b_iz,
            &self.b_in, &self.b_hr, &self.b_hz, &self.b_hn,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_ir,
            &mut self.w_iz,
            &mut self.w_in,
            &mut self.w_hr,
            &mut self.w_hz,
            &mut self.w_hn,
            &mut self.b_ir,
            &mut self.b_iz,
            &mut self.b_in,
            &mut self.b_hr,
            &mut self.b_hz,
            &mut self.b_hn,
        ]
    }

    fn check(&self, d_in: usize, hidden: usize, name: &str) -> Result<()> {
        for (t, n) in self.tensors().into_iter().zip(Self::NAMES) {
            let want: [usize; 2] = match &n[..3] {
                "W_i" => [d_in, hidden],
                "W_h" => [hidden, hidden],
                _ => [1, hidden],
            };
            if t.shape() != want {
                return Err(PanError::Contract(format!(
                    "{name}.{n} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Affine attention scorer: `w_a` is `d_u × 1`, `b` is `1 × 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_a: Tensor,
    pub b: Tensor,
}

impl AttentionParams {
    pub fn zeros(d_u: usize) -> Self {
        AttentionParams {
            w_a: Tensor::zeros(&[d_u, 1]),
            b: Tensor::zeros(&[1, 1]),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_a.shape()[0]
    }
}

/// Extra noise added to the hidden-to-hidden matrices (`W_hr`, `W_hz`,
/// `W_hn`) of the four GRU directions for one step; see
/// [`crate::training::perturb_hidden_weights`].
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenWeightNoise {
    /// Indexed `[direction][gate]` with directions in canonical order
    /// (gru1.fwd, gru1.bwd, gru2.fwd, gru2.bwd) and gates r, z, n.
    pub deltas: [[Tensor; 3]; 4],
}

/// Every tensor of the model. The embedding table is frozen; everything else
/// is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: EmbeddingMatrix,
    pub gru1_fwd: GruDirectionParams,
    pub gru1_bwd: GruDirectionParams,
    pub gru2_fwd: GruDirectionParams,
    pub gru2_bwd: GruDirectionParams,
    pub attn1: AttentionParams,
    pub attn2: AttentionParams,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

/// Name of the frozen embedding record in checkpoints.
pub const EMBEDDING_NAME: &str = "embedding.W_e";

const DIRECTION_PREFIXES: [&str; 4] = ["gru1.fwd", "gru1.bwd", "gru2.fwd", "gru2.bwd"];

impl ModelParams {
    /// Glorot-uniform matrices and zero biases, drawn in canonical parameter
    /// order from the `init` stream of `seed`.
    pub fn init(embedding: EmbeddingMatrix, hidden: usize, seed: u64) -> Self {
        let d_emb = embedding.dim();
        let dims = ModelDims {
            vocab_size: embedding.vocab_size(),
            d_emb,
            hidden,
        };
        let mut rng = rng::stream(seed, rng::STREAM_INIT, &[]);
        let gru1_fwd = GruDirectionParams::glorot(&mut rng, d_emb, hidden);
        let gru1_bwd = GruDirectionParams::glorot(&mut rng, d_emb, hidden);
        let gru2_fwd = GruDirectionParams::glorot(&mut rng, dims.bigru_out(), hidden);
        let gru2_bwd = GruDirectionParams::glorot(&mut rng, dims.bigru_out(), hidden);
        let attn1 = AttentionParams {
            w_a: glorot(&mut rng, dims.attn1_dim(), 1),
            b: Tensor::zeros(&[1, 1]),
        };
        let attn2 = AttentionParams {
            w_a: glorot(&mut rng, dims.attn2_dim(), 1),
            b: Tensor::zeros(&[1, 1]),
        };
        let dense_w = glorot(&mut rng, dims.pooled_dim(), NUM_EMOTIONS);
        ModelParams {
            embedding,
            gru1_fwd,
            gru1_bwd,
            gru2_fwd,
            gru2_bwd,
            attn1,
            attn2,
            dense_w,
            dense_b: Tensor::zeros(&[1, NUM_EMOTIONS]),
        }
    }

    /// All-zero trainable parameters around `embedding`.
    pub fn zeros(embedding: EmbeddingMatrix, hidden: usize) -> Self {
        let dims = ModelDims {
            vocab_size: embedding.vocab_size(),
            d_emb: embedding.dim(),
            hidden,
        };
        ModelParams {
            gru1_fwd: GruDirectionParams::zeros(dims.d_emb, hidden),
            gru1_bwd: GruDirectionParams::zeros(dims.d_emb, hidden),
            gru2_fwd: GruDirectionParams::zeros(dims.bigru_out(), hidden),
            gru2_bwd: GruDirectionParams::zeros(dims.bigru_out(), hidden),
            attn1: AttentionParams::zeros(dims.attn1_dim()),
            attn2: AttentionParams::zeros(dims.attn2_dim()),
            dense_w: Tensor::zeros(&[dims.pooled_dim(), NUM_EMOTIONS]),
            dense_b: Tensor::zeros(&[1, NUM_EMOTIONS]),
            embedding,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.embedding.vocab_size(),
            d_emb: self.embedding.dim(),
            hidden: self.gru1_fwd.hidden(),
        }
    }

    pub fn directions(&self) -> [&GruDirectionParams; 4] {
        [&self.gru1_fwd, &self.gru1_bwd, &self.gru2_fwd, &self.gru2_bwd]
    }

    /// Canonical names of the trainable tensors, in registration order.
    pub fn trainable_names() -> Vec<String> {
        let mut names = Vec::with_capacity(4 * 12 + 6);
        for prefix in DIRECTION_PREFIXES {
            names.extend(GruDirectionParams::NAMES.iter().map(|n| format!("{prefix}.{n}")));
        }
        names.extend(["attn1.w_a", "attn1.b", "attn2.w_a", "attn2.b", "dense.W_d", "dense.b_d"].map(String::from));
        names
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(54);
        for d in self.directions() {
            out.extend(d.tensors());
        }
        out.extend([&self.attn1.w_a, &self.attn1.b, &self.attn2.w_a, &self.attn2.b, &self.dense_w, &self.dense_b]);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(54);
        out.extend(self.gru1_fwd.tensors_mut());
        out.extend(self.gru1_bwd.tensors_mut());
        out.extend(self.gru2_fwd.tensors_mut());
        out.extend(self.gru2_bwd.tensors_mut());
        out.extend([
            &mut self.attn1.w_a,
            &mut self.attn1.b,
            &mut self.attn2.w_a,
            &mut self.attn2.b,
            &mut self.dense_w,
            &mut self.dense_b,
        ]);
        out
    }

    pub fn trainable_kinds() -> Vec<ParamKind> {
        Self::trainable_names()
            .iter()
            .map(|n| {
                let leaf = n.rsplit('.').next().unwrap_or_default();
                if leaf.starts_with('b') {
                    ParamKind::Bias
                } else {
                    ParamKind::Weight
                }
            })
            .collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|t| t.numel()).sum()
    }

    /// Checks that every tensor matches the dimension chain implied by the
    /// embedding width and `gru1_fwd`'s hidden size.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        let h = dims.hidden;
        self.gru1_fwd.check(dims.d_emb, h, "gru1.fwd")?;
        self.gru1_bwd.check(dims.d_emb, h, "gru1.bwd")?;
        self.gru2_fwd.check(dims.bigru_out(), h, "gru2.fwd")?;
        self.gru2_bwd.check(dims.bigru_out(), h, "gru2.bwd")?;
        let expect = |t: &Tensor, want: [usize; 2], name: &str| {
            if t.shape() == want {
                Ok(())
            } else {
                Err(PanError::Contract(format!("{name} has shape {:?}, expected {want:?}", t.shape())))
            }
        };
        expect(&self.attn1.w_a, [dims.attn1_dim(), 1], "attn1.w_a")?;
        expect(&self.attn1.b, [1, 1], "attn1.b")?;
        expect(&self.attn2.w_a, [dims.attn2_dim(), 1], "attn2.w_a")?;
        expect(&self.attn2.b, [1, 1], "attn2.b")?;
        expect(&self.dense_w, [dims.pooled_dim(), NUM_EMOTIONS], "dense.W_d")?;
        expect(&self.dense_b, [1, NUM_EMOTIONS], "dense.b_d")
    }

    /// Places the trainable tensors on `tape`, optionally adding per-step noise
    /// to the hidden-to-hidden matrices. Gradients flow to the clean leaves.
    pub fn register(&self, tape: &mut Tape, noise: Option<&HiddenWeightNoise>) -> Result<ModelVars> {
        let mut leaves = Vec::with_capacity(54);
        let mut dirs = Vec::with_capacity(4);
        for (d, params) in self.directions().into_iter().enumerate() {
            let ids: Vec<Var> = params.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
            leaves.extend(&ids);
            let mut used = ids.clone();
            if let Some(noise) = noise {
                for gate in 0..3 {
                    let delta = tape.constant(noise.deltas[d][gate].clone());
                    used[3 + gate] = tape.add(ids[3 + gate], delta)?;
                }
            }
            dirs.push(used);
        }
        let rest: Vec<Var> = [&self.attn1.w_a, &self.attn1.b, &self.attn2.w_a, &self.attn2.b, &self.dense_w, &self.dense_b]
            .into_iter()
            .map(|t| tape.param(t.clone()))
            .collect();
        leaves.extend(&rest);
        let mut used: Vec<Var> = dirs.into_iter().flatten().collect();
        used.extend(rest);
        let mut vars = ModelVars::from_leaves(&used)?;
        vars.leaves = leaves;
        Ok(vars)
    }
}

/// Tape handles of one GRU direction's (possibly noisy) parameters.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_ir: Var,
    pub w_iz: Var,
    pub w_in: Var,
    pub w_hr: Var,
    pub w_hz: Var,
    pub w_hn: Var,
    pub b_ir: Var,
    pub b_iz: Var,
    pub b_in: Var,
    pub b_hr: Var,
    pub b_hz: Var,
    pub b_hn: Var,
}

impl GruVars {
    fn from_slice(v: &[Var]) -> Self {
        GruVars {
            w_ir: v[0],
            w_iz: v[1],
            w_in: v[2],
            w_hr: v[3],
            w_hz: v[4],
            w_hn: v[5],
            b_ir: v[6],
            b_iz: v[7],
            b_in: v[8],
            b_hr: v[9],
            b_hz: v[10],
            b_hn: v[11],
        }
    }

    /// Registers `p` as trainable leaves.
    pub fn register(tape: &mut Tape, p: &GruDirectionParams) -> Self {
        let ids: Vec<Var> = p.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        Self::from_slice(&ids)
    }

    /// Registers `p` as frozen constants.
    pub fn constant(tape: &mut Tape, p: &GruDirectionParams) -> Self {
        let ids: Vec<Var> = p.tensors().into_iter().map(|t| tape.constant(t.clone())).collect();
        Self::from_slice(&ids)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_a: Var,
    pub b: Var,
}

impl AttentionVars {
    pub fn constant(tape: &mut Tape, p: &AttentionParams) -> Self {
        AttentionVars {
            w_a: tape.constant(p.w_a.clone()),
            b: tape.constant(p.b.clone()),
        }
    }
}

/// Tape handles of the whole model.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub gru1_fwd: GruVars,
    pub gru1_bwd: GruVars,
    pub gru2_fwd: GruVars,
    pub gru2_bwd: GruVars,
    pub attn1: AttentionVars,
    pub attn2: AttentionVars,
    pub dense_w: Var,
    pub dense_b: Var,
    /// Clean trainable leaves in canonical order.
    pub leaves: Vec<Var>,
}

impl ModelVars {
    /// Wraps 54 handles given in canonical order (see
    /// [`ModelParams::trainable_names`]); they also become `leaves`.
    pub fn from_leaves(v: &[Var]) -> Result<Self> {
        if v.len() != 54 {
            return Err(PanError::dim("ModelVars::from_leaves", &[54], &[v.len()]));
        }
        Ok(ModelVars {
            gru1_fwd: GruVars::from_slice(&v[0..12]),
            gru1_bwd: GruVars::from_slice(&v[12..24]),
            gru2_fwd: GruVars::from_slice(&v[24..36]),
            gru2_bwd: GruVars::from_slice(&v[36..48]),
            attn1: AttentionVars { w_a: v[48], b: v[49] },
            attn2: AttentionVars { w_a: v[50], b: v[51] },
            dense_w: v[52],
            dense_b: v[53],
            leaves: v.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_dimension_chain() {
        let dims = ModelDims::standard(10);
        assert_eq!(dims.bigru_out(), 100);
        assert_eq!(dims.attn1_dim(), 400);
        assert_eq!(dims.attn2_dim(), 500);
        assert_eq!(dims.pooled_dim(), 900);
        let p = ModelParams::init(EmbeddingMatrix::random(10, 300, 0), 50, 0);
        p.validate().unwrap();
        assert_eq!(p.dense_w.shape(), &[900, 11]);
        assert_eq!(p.gru2_fwd.w_ir.shape(), &[100, 50]);
    }

    #[test]
    fn names_kinds_and_tensors_align() {
        let p = ModelParams::init(EmbeddingMatrix::random(5, 4, 0), 3, 1);
        let names = ModelParams::trainable_names();
        assert_eq!(names.len(), p.trainable().len());
        assert_eq!(names[0], "gru1.fwd.W_ir");
        assert_eq!(names[16], "gru1.bwd.W_hz");
        assert_eq!(names.last().unwrap(), "dense.b_d");
        let kinds = ModelParams::trainable_kinds();
        assert_eq!(kinds[6], ParamKind::Bias);
        assert_eq!(kinds[48], ParamKind::Weight); // attn1.w_a
        assert_eq!(kinds[49], ParamKind::Bias); // attn1.b
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let e = EmbeddingMatrix::random(5, 4, 0);
        let a = ModelParams::init(e.clone(), 3, 9);
        let b = ModelParams::init(e.clone(), 3, 9);
        let c = ModelParams::init(e, 3, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.gru1_fwd.b_hn.values().iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(a.gru1_fwd.w_ir.values().iter().all(|v| v.abs() <= limit));
    }
}
