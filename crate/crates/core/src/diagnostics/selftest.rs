//! Randomized invariant checks runnable from a release binary.
//!
//! Each check draws its cases from a fixed seed, so a run is reproducible.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::ConfigSnapshot;
use crate::error::Result;
use crate::metrics::{f1_scores, jaccard_accuracy, LabelMatrix};
use crate::model::{attention_pool, forward, gru_cell, AttentionParams, Batch, GruDirectionParams, Mode, ModelParams};
use crate::numerics::{Tape, Tensor};
use crate::rng;
use crate::textprep::{EmbeddingMatrix, Vocabulary, NUM_EMOTIONS, PAD_INDEX};
use crate::training::{lr_trace, TrainingConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// First violation, if any.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelftestOutcome {
    pub checks: Vec<CheckResult>,
}

impl SelftestOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failure.is_none())
    }
}

impl fmt::Display for SelftestOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match &c.failure {
                None => writeln!(f, "PASS  {:<22} {} cases", c.name, c.cases)?,
                Some(why) => writeln!(f, "FAIL  {:<22} {why}", c.name)?,
            }
        }
        Ok(())
    }
}

fn uniform(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let values = (0..rows * cols).map(|_| r.gen_range(-scale..scale)).collect();
    Tensor::new(&[rows, cols], values).expect("positive dims")
}

/// A mask with at least one valid position.
fn random_mask(r: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..n).map(|_| r.gen_bool(0.7)).collect();
    let keep = r.gen_range(0..n);
    m[keep] = true;
    m
}

fn softmax_check(r: &mut ChaCha8Rng, cases: usize) -> Result<Option<String>> {
    for case in 0..cases {
        let n = r.gen_range(1..12);
        let scores = uniform(r, 1, n, 30.0);
        let mask = random_mask(r, n);
        let mut tape = Tape::new();
        let s = tape.constant(scores);
        let a = tape.masked_softmax(s, &mask)?;
        let a = tape.value(a).values();
        let total: f64 = a.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Ok(Some(format!("case {case}: weights sum to {total}")));
        }
        if a.iter().zip(&mask).any(|(&w, &m)| !m && w != 0.0) {
            return Ok(Some(format!("case {case}: masked position has nonzero weight")));
        }
    }
    Ok(None)
}

fn convex_hull_check(r: &mut ChaCha8Rng, cases: usize) -> Result<Option<String>> {
    for case in 0..cases {
        let (steps, d) = (r.gen_range(1..8), r.gen_range(1..6));
        let u = uniform(r, steps, d, 5.0);
        let p = AttentionParams {
            w_a: uniform(r, d, 1, 2.0),
            b: uniform(r, 1, 1, 1.0),
        };
        let mask = random_mask(r, steps);
        let (v, _) = attention_pool(&u, &p, &mask)?;
        for j in 0..d {
            let valid = (0..steps).filter(|&t| mask[t]).map(|t| u.at(t, j));
            let (lo, hi) = valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            let x = v.values()[j];
            if x < lo - 1e-12 || x > hi + 1e-12 {
                return Ok(Some(format!("case {case}: V[{j}] = {x} outside [{lo}, {hi}]")));
            }
        }
    }
    Ok(None)
}

fn small_model(r: &mut ChaCha8Rng, seed: u64) -> ModelParams {
    let vocab = r.gen_range(5..15);
    ModelParams::init(EmbeddingMatrix::random(vocab, r.gen_range(2..6), seed), r.gen_range(1..4), seed)
}

fn padding_check(r: &mut ChaCha8Rng, cases: usize) -> Result<Option<String>> {
    for case in 0..cases {
        let params = small_model(r, case as u64);
        let vocab = params.embedding.vocab_size();
        let len = r.gen_range(1..7);
        let tokens: Vec<usize> = (0..len).map(|_| r.gen_range(1..vocab)).collect();
        let plain = Batch::unmasked(vec![tokens.clone()])?;
        let mut padded_tokens = tokens;
        padded_tokens.extend([PAD_INDEX; 3]);
        let padded_mask = (0..len + 3).map(|t| t < len).collect();
        let padded = Batch::new(vec![padded_tokens], vec![padded_mask])?;
        let a = forward(&plain, &params, Mode::Eval, 0)?.probs;
        let b = forward(&padded, &params, Mode::Eval, 0)?.probs;
        let diff = a.max_abs_diff(&b);
        if diff >= 1e-12 {
            return Ok(Some(format!("case {case}: padding moved the output by {diff:e}")));
        }
    }
    Ok(None)
}

fn gru_range_check(r: &mut ChaCha8Rng, cases: usize) -> Result<Option<String>> {
    for case in 0..cases {
        let (d, h) = (r.gen_range(1..6), r.gen_range(1..5));
        let mut p = GruDirectionParams::zeros(d, h);
        for t in p.tensors_mut() {
            let (rows, cols) = t.dims2()?;
            *t = uniform(r, rows, cols, 3.0);
        }
        let x = uniform(r, 1, d, 10.0);
        let h_prev = uniform(r, 1, h, 1.0);
        let out = gru_cell(&x, &h_prev, &p)?;
        if out.values().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Ok(Some(format!("case {case}: hidden state left [-1, 1]")));
        }
    }
    Ok(None)
}

fn label_sets(m: &LabelMatrix) -> Vec<HashSet<usize>> {
    (0..m.rows())
        .map(|i| (0..m.labels()).filter(|&j| m.get(i, j)).collect())
        .collect()
}

fn metrics_check(r: &mut ChaCha8Rng, cases: usize) -> Result<Option<String>> {
    for case in 0..cases {
        let rows = r.gen_range(1..20);
        let density = r.gen_range(0.0..0.6);
        let mut draw = || -> Result<LabelMatrix> {
            let cells = (0..rows * NUM_EMOTIONS).map(|_| r.gen_bool(density)).collect();
            LabelMatrix::new(rows, NUM_EMOTIONS, cells)
        };
        let (pred, gold) = (draw()?, draw()?);
        let (ps, gs) = (label_sets(&pred), label_sets(&gold));
        let jaccard = ps
            .iter()
            .zip(&gs)
            .map(|(p, g)| {
                let union = p.union(g).count();
                if union == 0 {
                    1.0
                } else {
                    p.intersection(g).count() as f64 / union as f64
                }
            })
            .sum::<f64>()
            / rows as f64;
        let tp: usize = ps.iter().zip(&gs).map(|(p, g)| p.intersection(g).count()).sum();
        let npred: usize = ps.iter().map(HashSet::len).sum();
        let ngold: usize = gs.iter().map(HashSet::len).sum();
        let micro = if npred + ngold == 0 { 0.0 } else { 2.0 * tp as f64 / (npred + ngold) as f64 };

        let got_j = jaccard_accuracy(&pred, &gold)?;
        let got = f1_scores(&pred, &gold)?;
        if (got_j - jaccard).abs() > 1e-12 || (got.micro_f1 - micro).abs() > 1e-12 {
            return Ok(Some(format!(
                "case {case}: jaccard {got_j} vs {jaccard}, micro-F1 {} vs {micro}",
                got.micro_f1
            )));
        }
    }
    Ok(None)
}

fn schedule_check() -> Option<String> {
    let losses: Vec<f64> = (0..13).map(|i| 1.0 + 0.1 * f64::from(i)).collect();
    let trace = lr_trace(&losses, 0.001, 0.0001, 3);
    let mut distinct: Vec<f64> = Vec::new();
    for lr in trace {
        if distinct.last() != Some(&lr) {
            distinct.push(lr);
        }
    }
    let want = [0.001, 0.0005, 0.00025, 0.000125, 0.0001];
    (distinct != want).then(|| format!("learning rates {distinct:?}, expected {want:?}"))
}

fn checkpoint_check(r: &mut ChaCha8Rng, cases: usize) -> Result<Option<String>> {
    for case in 0..cases {
        let params = small_model(r, case as u64);
        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend((2..params.embedding.vocab_size()).map(|i| format!("w{i}")));
        let ckpt = Checkpoint {
            params,
            vocab: Vocabulary::from_tokens(tokens)?,
            config: ConfigSnapshot {
                training: TrainingConfig::default(),
                max_len: 50,
            },
            best_val_loss: r.gen(),
        };
        let bytes = ckpt.to_bytes()?;
        let back = Checkpoint::from_bytes(&bytes)?;
        if back != ckpt || back.to_bytes()? != bytes {
            return Ok(Some(format!("case {case}: save/load/save changed the bytes")));
        }
    }
    Ok(None)
}

/// Runs every invariant check with `cases` random cases each.
pub fn run_selftest(seed: u64, cases: usize) -> Result<SelftestOutcome> {
    let mut outcome = SelftestOutcome::default();
    let mut push = |name, cases, failure| outcome.checks.push(CheckResult { name, cases, failure });
    let r = |label: &str| rng::stream(seed, label, &[]);

    push("softmax", cases, softmax_check(&mut r("selftest.softmax"), cases)?);
    push("attention_convex_hull", cases, convex_hull_check(&mut r("selftest.hull"), cases)?);
    let few = cases.div_ceil(5);
    push("padding_invariance", few, padding_check(&mut r("selftest.padding"), few)?);
    push("gru_state_range", cases, gru_range_check(&mut r("selftest.gru"), cases)?);
    push("metrics_oracle", cases, metrics_check(&mut r("selftest.metrics"), cases)?);
    push("lr_schedule", 1, schedule_check());
    push("checkpoint_roundtrip", few, checkpoint_check(&mut r("selftest.checkpoint"), few)?);
    Ok(outcome)
}
