use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{PanError, Result};
use crate::model::{forward, forward_graph, Batch, Mode, ModelParams};
use crate::numerics::{Tape, Tensor};
use crate::rng;
use crate::textprep::{Dataset, Example, NUM_EMOTIONS};
use crate::training::adam::{adam_step, OptimizerState};
use crate::training::loss::{l2_on_tape, weighted_bce};
use crate::training::regularize::{sample_step_noise, Regularization};
use crate::training::schedule::{PlateauHalving, StopDecision};

/// Hyperparameters of the training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_floor: f64,
    pub lr_halve_patience: usize,
    pub pos_weight: f64,
    pub dropout_dense: f64,
    pub spatial_dropout: f64,
    pub weight_noise_std: f64,
    pub l2_coeff: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 64,
            lr_init: 0.001,
            lr_floor: 0.0001,
            lr_halve_patience: 3,
            pos_weight: 2.0,
            dropout_dense: 0.2,
            spatial_dropout: 0.4,
            weight_noise_std: 0.1,
            l2_coeff: 1e-5,
            early_stop_patience: 10,
            max_epochs: 50,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(PanError::Config(msg));
        for (name, rate) in [("dropout_dense", self.dropout_dense), ("spatial_dropout", self.spatial_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} = {rate} must lie in [0, 1)"));
            }
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr_init >= 0.0) || !(self.lr_floor >= 0.0) || self.lr_floor > self.lr_init {
            return fail(format!(
                "need 0 <= lr_floor ({}) <= lr_init ({})",
                self.lr_floor, self.lr_init
            ));
        }
        if self.lr_halve_patience == 0 || self.early_stop_patience == 0 {
            return fail("patiences must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if !(self.weight_noise_std >= 0.0) || !(self.l2_coeff >= 0.0) || !(self.pos_weight > 0.0) {
            return fail("weight_noise_std and l2_coeff must be >= 0, pos_weight > 0".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold {} must lie in (0, 1)", self.threshold));
        }
        Ok(())
    }

    pub fn regularization(&self) -> Regularization {
        Regularization {
            spatial_dropout: self.spatial_dropout,
            dropout: self.dropout_dense,
            weight_noise_std: self.weight_noise_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Consecutive non-improving epochs after this one (schedule counter).
    pub failures: usize,
    pub best_epoch: usize,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tval_loss\tlr\telapsed_seconds";

    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_loss).collect()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let epoch = crate::training::schedule::best_epoch(&self.val_losses())?;
        self.records.get(epoch - 1)
    }

    pub fn render_line(record: &EpochRecord) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.3}",
            record.epoch, record.train_loss, record.val_loss, record.lr, record.elapsed_seconds
        )
    }

    /// Tab-separated records with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{}", Self::render_line(r));
        }
        out
    }

    /// The log with timings zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainingLog {
        TrainingLog {
            records: self
                .records
                .iter()
                .map(|r| EpochRecord {
                    elapsed_seconds: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub log: TrainingLog,
    pub best_val_loss: f64,
    pub steps: u64,
}

pub fn targets(examples: &[&Example]) -> Tensor {
    let values = examples.iter().flat_map(|e| e.labels_as_f64()).collect();
    Tensor::new(&[examples.len(), NUM_EMOTIONS], values).expect("non-empty batch")
}

/// Eval-mode probabilities for every example, `N × 11`, in dataset order.
pub fn predict_probs(params: &ModelParams, data: &Dataset, batch_size: usize) -> Result<Tensor> {
    if data.is_empty() {
        return Err(PanError::EmptySequence("no examples to predict".into()));
    }
    let mut values = Vec::with_capacity(data.len() * NUM_EMOTIONS);
    for chunk in data.examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = Batch::from_examples(&refs)?;
        let out = forward(&batch, params, Mode::Eval, 0)?;
        values.extend_from_slice(out.probs.values());
    }
    Tensor::new(&[data.len(), NUM_EMOTIONS], values)
}

/// Mean weighted cross-entropy over the dataset in eval mode (no L2 term).
pub fn dataset_loss(params: &ModelParams, data: &Dataset, pos_weight: f64, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(PanError::EmptySequence("cannot compute the loss of an empty dataset".into()));
    }
    let mut total = 0.0;
    for chunk in data.examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let batch = Batch::from_examples(&refs)?;
        let out = forward(&batch, params, Mode::Eval, 0)?;
        total += weighted_bce(&out.probs, &targets(&refs), pos_weight)? * refs.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// One optimization step on `examples`; returns the objective before the
/// update (weighted cross-entropy plus L2).
pub fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    examples: &[&Example],
    config: &TrainingConfig,
    lr: f64,
    step: &[u64],
) -> Result<f64> {
    let batch = Batch::from_examples(examples)?;
    let (noise, masks) = sample_step_noise(params, &batch, &config.regularization(), config.seed, step)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, noise.as_ref())?;
    let graph = forward_graph(&mut tape, params, &vars, &batch, &masks)?;
    let mut loss = tape.weighted_bce(graph.probs, &targets(examples), config.pos_weight)?;
    if let Some(l2) = l2_on_tape(&mut tape, &vars, config.l2_coeff)? {
        loss = tape.add(loss, l2)?;
    }
    let value = tape.value(loss).values()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor> = vars
        .leaves
        .iter()
        .map(|&v| grads.take(v).expect("trainable leaf"))
        .collect();
    adam_step(&mut params.trainable_mut(), &grads, state, lr)?;
    Ok(value)
}

pub fn train(train_set: &Dataset, dev_set: &Dataset, config: &TrainingConfig, init: ModelParams) -> Result<TrainOutcome> {
    train_with_observer(train_set, dev_set, config, init, |_| {})
}

/// Full training loop. Per epoch: seeded shuffle, mini-batches (last partial
/// batch kept), noisy train-mode step with Adam, eval-mode validation loss,
/// learning-rate schedule, early stopping. Returns the best-validation
/// parameters.
pub fn train_with_observer(
    train_set: &Dataset,
    dev_set: &Dataset,
    config: &TrainingConfig,
    init: ModelParams,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    init.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(PanError::Contract("training needs non-empty train and dev sets".into()));
    }

    let start = Instant::now();
    let mut params = init;
    let mut state = OptimizerState::new(params.trainable());
    let mut schedule = PlateauHalving::new(config.lr_init, config.lr_floor, config.lr_halve_patience);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 1..=config.max_epochs {
        let lr = schedule.lr();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, rng::STREAM_SHUFFLE, &[epoch as u64]));

        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &train_set.examples[i]).collect();
            let step = [epoch as u64, batch_index as u64];
            let loss = train_step(&mut params, &mut state, &examples, config, lr, &step)?;
            if !loss.is_finite() {
                return Err(PanError::Divergence {
                    epoch,
                    batch: batch_index,
                    loss,
                });
            }
            loss_sum += loss * examples.len() as f64;
        }

        let val_loss = dataset_loss(&params, dev_set, config.pos_weight, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(PanError::Divergence {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        schedule.observe(val_loss);
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            lr,
            failures: schedule.failures(),
            best_epoch: 0,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        };
        log.records.push(record);
        let best_epoch = log.best().map_or(epoch, |r| r.epoch);
        log.records.last_mut().expect("just pushed").best_epoch = best_epoch;
        observer(log.records.last().expect("just pushed"));

        if crate::training::schedule::early_stop_check(&log.val_losses(), config.early_stop_patience)
            == StopDecision::Stop
        {
            break;
        }
    }

    let (best_val_loss, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        log,
        best_val_loss,
        steps: state.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_published_settings() {
        let c = TrainingConfig::default();
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.lr_init, 0.001);
        assert_eq!(c.lr_floor, 0.0001);
        assert_eq!(c.lr_halve_patience, 3);
        assert_eq!(c.pos_weight, 2.0);
        assert_eq!(c.dropout_dense, 0.2);
        assert_eq!(c.spatial_dropout, 0.4);
        assert_eq!(c.weight_noise_std, 0.1);
        assert_eq!(c.threshold, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = [
            TrainingConfig {
                dropout_dense: 1.0,
                ..Default::default()
            },
            TrainingConfig {
                lr_floor: 0.01,
                ..Default::default()
            },
            TrainingConfig {
                lr_halve_patience: 0,
                ..Default::default()
            },
            TrainingConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainingConfig {
                threshold: 1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(PanError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn log_renders_tab_separated() {
        let log = TrainingLog {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                lr: 0.001,
                failures: 0,
                best_epoch: 1,
                elapsed_seconds: 1.5,
            }],
        };
        assert_eq!(log.to_tsv(), format!("{}\n1\t0.5\t0.25\t0.001\t1.500\n", TrainingLog::HEADER));
    }
}
