//! End-to-end runs over files: train from a [`RunConfig`], evaluate or
//! predict with a [`Checkpoint`].

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{PanError, Result};
use crate::metrics::{threshold, LabelMatrix, MetricsReport};
use crate::model::ModelParams;
use crate::numerics::Tensor;
use crate::textprep::{
    build_vocabulary, load_embeddings, load_semeval_tsv, tokenize, Dataset, EmbeddingMatrix, Tweet, Vocabulary,
    EMOTIONS,
};
use crate::training::{dataset_loss, predict_probs, train_with_observer, EpochRecord, TrainingLog};

/// Encoded inputs of a training run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub dev: Dataset,
    pub embedding: EmbeddingMatrix,
    /// Share of vocabulary rows found in the vector file, if one was given.
    pub coverage: Option<f64>,
}

/// Reads the train/dev files, builds the vocabulary from the training split
/// and assembles the frozen embedding table.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.check_inputs()?;
    let train_tweets = load_semeval_tsv(&cfg.paths.train)?;
    let dev_tweets = load_semeval_tsv(&cfg.paths.dev)?;
    let corpus: Vec<Vec<String>> = train_tweets.iter().map(|t| tokenize(&t.text)).collect();
    let vocab = build_vocabulary(&corpus, cfg.min_count)?;
    let seed = cfg.training.seed;
    let (embedding, coverage) = match &cfg.paths.embeddings {
        Some(path) => {
            let loaded = load_embeddings(path, &vocab, cfg.d_emb, seed)?;
            let coverage = loaded.coverage();
            (loaded.matrix, Some(coverage))
        }
        None => (EmbeddingMatrix::random(vocab.len(), cfg.d_emb, seed), None),
    };
    Ok(Prepared {
        train: Dataset::from_tweets(&train_tweets, &vocab, cfg.max_len),
        dev: Dataset::from_tweets(&dev_tweets, &vocab, cfg.max_len),
        vocab,
        embedding,
        coverage,
    })
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
    /// Dev-set metrics of the restored best parameters.
    pub dev_report: MetricsReport,
    pub coverage: Option<f64>,
}

pub fn train_run(cfg: &RunConfig, observer: impl FnMut(&EpochRecord)) -> Result<TrainedRun> {
    let prepared = prepare(cfg)?;
    let init = ModelParams::init(prepared.embedding, cfg.hidden, cfg.training.seed);
    let outcome = train_with_observer(&prepared.train, &prepared.dev, &cfg.training, init, observer)?;
    let probs = predict_probs(&outcome.params, &prepared.dev, cfg.training.batch_size)?;
    let dev_report = report(&probs, &prepared.dev, cfg.training.threshold)?;
    Ok(TrainedRun {
        checkpoint: Checkpoint {
            params: outcome.params,
            vocab: prepared.vocab,
            config: cfg.snapshot(),
            best_val_loss: outcome.best_val_loss,
        },
        log: outcome.log,
        dev_report,
        coverage: prepared.coverage,
    })
}

fn report(probs: &Tensor, data: &Dataset, tau: f64) -> Result<MetricsReport> {
    let pred = threshold(probs, tau)?;
    MetricsReport::compute(&pred, &LabelMatrix::gold(data), &EMOTIONS)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Mean weighted cross-entropy, comparable to the logged validation loss.
    pub loss: f64,
}

/// Scores labelled tweets with a checkpoint. `tau` overrides the threshold
/// stored in the checkpoint.
pub fn evaluate(ckpt: &Checkpoint, tweets: &[Tweet], tau: Option<f64>) -> Result<Evaluation> {
    if tweets.is_empty() {
        return Err(PanError::EmptySequence("no labelled rows to evaluate".into()));
    }
    let t = &ckpt.config.training;
    let data = Dataset::from_tweets(tweets, &ckpt.vocab, ckpt.config.max_len);
    let probs = predict_probs(&ckpt.params, &data, t.batch_size)?;
    Ok(Evaluation {
        report: report(&probs, &data, tau.unwrap_or(t.threshold))?,
        loss: dataset_loss(&ckpt.params, &data, t.pos_weight, t.batch_size)?,
    })
}

/// Eval-mode probabilities, one `11`-wide row per text.
pub fn predict(ckpt: &Checkpoint, texts: &[String]) -> Result<Tensor> {
    let tweets: Vec<Tweet> = texts
        .iter()
        .enumerate()
        .map(|(i, text)| Tweet {
            id: i.to_string(),
            text: text.clone(),
            labels: Default::default(),
        })
        .collect();
    let data = Dataset::from_tweets(&tweets, &ckpt.vocab, ckpt.config.max_len);
    predict_probs(&ckpt.params, &data, ckpt.config.training.batch_size)
}
