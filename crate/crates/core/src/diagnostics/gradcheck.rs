use rand::Rng;

use crate::error::Result;
use crate::model::{forward_graph, Batch, DropoutMasks, ModelParams, ModelVars};
use crate::numerics::{grad_check, GradCheckReport, Tape, Tensor, Var};
use crate::rng;
use crate::textprep::{EmbeddingMatrix, NUM_EMOTIONS};
use crate::training::l2_on_tape;

pub const VOCAB: usize = 20;
pub const D_EMB: usize = 8;
pub const HIDDEN: usize = 4;
pub const STEPS: usize = 5;
pub const BATCH: usize = 2;
pub const POS_WEIGHT: f64 = 2.0;
pub const L2: f64 = 1e-3;
pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Small deterministic model and batch for gradient checking.
#[derive(Clone, Debug)]
pub struct DownsizedPan {
    pub params: ModelParams,
    pub batch: Batch,
    pub targets: Tensor,
}

impl DownsizedPan {
    /// Glorot weights, small random biases, two sequences of lengths 5 and 3
    /// and random label sets, all drawn from `seed`.
    pub fn new(seed: u64) -> Self {
        let embedding = EmbeddingMatrix::random(VOCAB, D_EMB, seed);
        let mut params = ModelParams::init(embedding, HIDDEN, seed);
        let mut r = rng::stream(seed, "gradcheck", &[]);
        for (t, name) in params.trainable_mut().into_iter().zip(ModelParams::trainable_names()) {
            if name.rsplit('.').next().is_some_and(|leaf| leaf.starts_with('b')) {
                t.values_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.1..0.1));
            }
        }
        let lengths = [STEPS, 3];
        let indices = lengths
            .iter()
            .map(|&len| (0..STEPS).map(|t| if t < len { r.gen_range(2..VOCAB) } else { 0 }).collect())
            .collect();
        let mask = lengths.iter().map(|&len| (0..STEPS).map(|t| t < len).collect()).collect();
        let batch = Batch::new(indices, mask).expect("fixed shapes");
        let labels = (0..BATCH * NUM_EMOTIONS).map(|_| f64::from(u8::from(r.gen_bool(0.3)))).collect();
        DownsizedPan {
            params,
            batch,
            targets: Tensor::new(&[BATCH, NUM_EMOTIONS], labels).expect("fixed shape"),
        }
    }

    /// Weighted cross-entropy plus L2 on the given trainable handles, with no
    /// dropout or noise.
    pub fn objective(&self, tape: &mut Tape, leaves: &[Var]) -> Result<Var> {
        let vars = ModelVars::from_leaves(leaves)?;
        let graph = forward_graph(tape, &self.params, &vars, &self.batch, &DropoutMasks::default())?;
        let loss = tape.weighted_bce(graph.probs, &self.targets, POS_WEIGHT)?;
        match l2_on_tape(tape, &vars, L2)? {
            Some(l2) => tape.add(loss, l2),
            None => Ok(loss),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PanGradCheck {
    pub report: GradCheckReport,
    /// `name[component]` of the worst component.
    pub worst: Option<String>,
}

impl PanGradCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

/// Central-difference check of every trainable component of the downsized
/// model.
pub fn downsized_pan_gradcheck(seed: u64) -> Result<PanGradCheck> {
    let pan = DownsizedPan::new(seed);
    let params: Vec<Tensor> = pan.params.trainable().into_iter().cloned().collect();
    let report = grad_check(&params, EPS, |tape, leaves| pan.objective(tape, leaves))?;
    let names = ModelParams::trainable_names();
    let worst = report.worst.map(|(p, c)| format!("{}[{c}]", names[p]));
    Ok(PanGradCheck { report, worst })
}
