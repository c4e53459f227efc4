//! Pyramid attention network for multi-label emotion detection in short
//! social-media texts.
//!
//! ```text
//! tokens → frozen embedding X → BiGRU H1 → BiGRU H2
//!        → attention over [H1; X]      → V1 ┐
//!        → attention over [H2; H1; X]  → V2 ┴→ [V1; V2] → dense → sigmoid (11)
//! ```
//!
//! Everything runs in `f64` on a small reverse-mode tape ([`numerics`]).

pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod textprep;
pub mod training;

pub use checkpoint::Checkpoint;
pub use config::{ConfigSnapshot, RunConfig};
pub use error::{PanError, Result};
pub use metrics::{f1_scores, jaccard_accuracy, threshold, LabelMatrix, MetricsReport};
pub use model::{forward, Batch, Mode, ModelDims, ModelParams};
pub use numerics::{Tape, Tensor, Var};
pub use textprep::{Dataset, EmbeddingMatrix, Example, Tweet, Vocabulary, EMOTIONS, NUM_EMOTIONS};
pub use training::{train, TrainOutcome, TrainingConfig, TrainingLog};
