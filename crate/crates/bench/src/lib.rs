//! Fixtures shared by the benchmarks.

use pan_core::model::{Batch, ModelParams};
use pan_core::synthetic::{self, SyntheticSpec};
use pan_core::textprep::{Dataset, Example};
use pan_core::EmbeddingMatrix;

/// A model over the synthetic vocabulary with the given widths.
pub fn model(d_emb: usize, hidden: usize) -> ModelParams {
    let vocab = synthetic::vocabulary(&SyntheticSpec::default());
    ModelParams::init(EmbeddingMatrix::random(vocab.len(), d_emb, 1), hidden, 1)
}

pub fn data(examples: usize) -> Dataset {
    let spec = SyntheticSpec {
        examples,
        ..SyntheticSpec::default()
    };
    synthetic::dataset(&spec, 1).1
}

pub fn batch(data: &Dataset) -> Batch {
    let refs: Vec<&Example> = data.examples.iter().collect();
    Batch::from_examples(&refs).expect("non-empty")
}
