//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criterion 8 needs external data and only runs when
//! `PAN_REPRO_CONFIG` names a run config with a `test` split.

use std::collections::BTreeSet;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pan_core::config::RunConfig;
use pan_core::diagnostics::downsized_pan_gradcheck;
use pan_core::metrics::{f1_scores, jaccard_accuracy, threshold, LabelMatrix};
use pan_core::model::{attention_pool_batch, forward, AttentionParams, AttentionVars, Batch, Mode};
use pan_core::numerics::{Tape, Tensor};
use pan_core::synthetic::{self, SyntheticSpec};
use pan_core::textprep::{load_semeval_tsv, write_semeval_tsv, EmbeddingMatrix, Example, PAD_INDEX};
use pan_core::training::{lr_trace, train_step, train_with_observer, OptimizerState, TrainingConfig};
use pan_core::{pipeline, rng, ModelParams};
use rand::Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1 -------------------------------------------------------------------------

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut worst: (f64, u64, String) = (0.0, 0, String::new());
    for seed in 0..5 {
        let g = downsized_pan_gradcheck(seed).map_err(|e| e.to_string())?;
        if g.report.max_rel_error >= worst.0 {
            worst = (g.report.max_rel_error, seed, g.worst.unwrap_or_default());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst.0 < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "5 seeds, max rel error {:.2e} (seed {}, {}), {:.1}s",
            worst.0,
            worst.1,
            worst.2,
            elapsed.as_secs_f64()
        ),
    )
}

// 2 -------------------------------------------------------------------------

fn overfit() -> Verdict {
    let start = Instant::now();
    let (vocab, data) = synthetic::dataset(&SyntheticSpec::default(), 0);
    let init = ModelParams::init(EmbeddingMatrix::random(vocab.len(), 16, 0), 16, 0);
    let cfg = TrainingConfig {
        batch_size: 8,
        lr_init: 0.01,
        lr_floor: 0.001,
        dropout_dense: 0.0,
        spatial_dropout: 0.0,
        weight_noise_std: 0.0,
        l2_coeff: 0.0,
        early_stop_patience: 300,
        max_epochs: 300,
        ..TrainingConfig::default()
    };
    // Training set doubles as the validation set, so the logged loss is the
    // eval-mode training loss.
    let mut reached = None;
    let out = train_with_observer(&data, &data, &cfg, init, |r| {
        if reached.is_none() && r.val_loss < 0.05 {
            reached = Some(r.epoch);
        }
    })
    .map_err(|e| e.to_string())?;
    let probs = pan_core::training::predict_probs(&out.params, &data, 64).map_err(|e| e.to_string())?;
    let pred = threshold(&probs, 0.5).map_err(|e| e.to_string())?;
    let jaccard = jaccard_accuracy(&pred, &LabelMatrix::gold(&data)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        out.best_val_loss < 0.05 && jaccard >= 0.99 && elapsed < Duration::from_secs(300),
        format!(
            "loss {:.5} (< 0.05 first at epoch {}), Jaccard {jaccard:.4}, {:.1}s",
            out.best_val_loss,
            reached.map_or("-".into(), |e| e.to_string()),
            elapsed.as_secs_f64()
        ),
    )
}

// 3 -------------------------------------------------------------------------

fn label_sets(m: &LabelMatrix) -> Vec<BTreeSet<usize>> {
    (0..m.rows())
        .map(|r| (0..m.labels()).filter(|&c| m.get(r, c)).collect())
        .collect()
}

fn brute_jaccard(p: &[BTreeSet<usize>], g: &[BTreeSet<usize>]) -> f64 {
    let scores: Vec<f64> = p
        .iter()
        .zip(g)
        .map(|(a, b)| {
            let union = a.union(b).count();
            if union == 0 {
                1.0
            } else {
                a.intersection(b).count() as f64 / union as f64
            }
        })
        .collect();
    scores.iter().sum::<f64>() / scores.len() as f64
}

fn safe_div(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1_of(tp: usize, fp: usize, fn_: usize) -> f64 {
    let (p, r) = (safe_div(tp, tp + fp), safe_div(tp, tp + fn_));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `(micro, macro, per-class)` by counting set memberships.
fn brute_f1(p: &[BTreeSet<usize>], g: &[BTreeSet<usize>], labels: usize) -> (f64, f64, Vec<f64>) {
    let mut per = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    for c in 0..labels {
        let tp = p.iter().zip(g).filter(|(a, b)| a.contains(&c) && b.contains(&c)).count();
        let fp = p.iter().zip(g).filter(|(a, b)| a.contains(&c) && !b.contains(&c)).count();
        let fn_ = p.iter().zip(g).filter(|(a, b)| !a.contains(&c) && b.contains(&c)).count();
        per.push(f1_of(tp, fp, fn_));
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
    }
    let macro_f1 = per.iter().sum::<f64>() / labels as f64;
    (f1_of(tp_all, fp_all, fn_all), macro_f1, per)
}

fn random_labels(r: &mut impl Rng, rows: usize, density: f64, dead: &[bool]) -> LabelMatrix {
    let cells = (0..rows * 11).map(|i| !dead[i % 11] && r.gen_bool(density)).collect();
    LabelMatrix::new(rows, 11, cells).unwrap()
}

fn metric_oracle() -> Verdict {
    let mut r = rng::stream(0, "acceptance.metrics", &[]);
    let mut worst = 0.0f64;
    let (mut empty_rows, mut zero_support) = (0usize, 0usize);
    for case in 0..1000 {
        // Vary density so that all-empty rows and never-present classes occur.
        let density = [0.0, 0.03, 0.15, 0.5, 0.9][case % 5];
        let dead: Vec<bool> = (0..11).map(|_| r.gen_bool(0.2)).collect();
        let gold = random_labels(&mut r, 50, density, &dead);
        let pred = if case % 7 == 0 {
            gold.clone()
        } else {
            let density = r.gen_range(0.0..0.6);
            random_labels(&mut r, 50, density, &[false; 11])
        };
        let (ps, gs) = (label_sets(&pred), label_sets(&gold));
        empty_rows += ps.iter().zip(&gs).filter(|(a, b)| a.is_empty() && b.is_empty()).count();
        zero_support += (0..11).filter(|c| gs.iter().all(|s| !s.contains(c))).count();

        let j = jaccard_accuracy(&pred, &gold).map_err(|e| e.to_string())?;
        let f = f1_scores(&pred, &gold).map_err(|e| e.to_string())?;
        let (micro, macro_f1, per) = brute_f1(&ps, &gs, 11);
        worst = worst
            .max((j - brute_jaccard(&ps, &gs)).abs())
            .max((f.micro_f1 - micro).abs())
            .max((f.macro_f1 - macro_f1).abs());
        for (a, b) in f.per_class.iter().zip(&per) {
            worst = worst.max((a.f1 - b).abs());
        }
    }
    check(
        worst <= 1e-12 && empty_rows > 0 && zero_support > 0,
        format!("1000 pairs, max deviation {worst:.1e}, {empty_rows} empty/empty rows, {zero_support} zero-support classes"),
    )
}

// 4 -------------------------------------------------------------------------

fn attention_suite() -> Verdict {
    let mut r = rng::stream(0, "acceptance.attention", &[]);
    let (mut sum_err, mut pad_err, mut hull_ok, mut masked_ok) = (0.0f64, 0.0f64, true, true);
    for case in 0..500u64 {
        // Pooling on random inputs: normalization, exact zeros, convex hull.
        let (b, t, d) = (r.gen_range(1..5), r.gen_range(1..10), r.gen_range(1..7));
        let mut mask: Vec<bool> = (0..b * t).map(|_| r.gen_bool(0.7)).collect();
        for row in 0..b {
            mask[row * t + r.gen_range(0..t)] = true;
        }
        let u: Vec<Tensor> = (0..t)
            .map(|_| Tensor::new(&[b, d], (0..b * d).map(|_| r.gen_range(-5.0..5.0)).collect()).unwrap())
            .collect();
        let p = AttentionParams {
            w_a: Tensor::new(&[d, 1], (0..d).map(|_| r.gen_range(-4.0..4.0)).collect()).unwrap(),
            b: Tensor::scalar(r.gen_range(-1.0..1.0)),
        };
        let mut tape = Tape::new();
        let vars = AttentionVars::constant(&mut tape, &p);
        let us: Vec<_> = u.iter().map(|x| tape.constant(x.clone())).collect();
        let pooled = attention_pool_batch(&mut tape, &us, &vars, &mask).map_err(|e| e.to_string())?;
        let (a, v) = (tape.value(pooled.weights), tape.value(pooled.pooled));
        for row in 0..b {
            sum_err = sum_err.max((a.row(row).iter().sum::<f64>() - 1.0).abs());
            masked_ok &= (0..t).all(|s| mask[row * t + s] || a.at(row, s) == 0.0);
            for c in 0..d {
                let valid = (0..t).filter(|&s| mask[row * t + s]).map(|s| u[s].at(row, c));
                let (lo, hi) = valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
                hull_ok &= v.at(row, c) >= lo - 1e-12 && v.at(row, c) <= hi + 1e-12;
            }
        }

        // Full model: three trailing PADs leave eval-mode predictions unchanged.
        let vocab = 20;
        let params = ModelParams::init(EmbeddingMatrix::random(vocab, 6, case), 4, case);
        let lens: Vec<usize> = (0..b).map(|_| r.gen_range(1..8)).collect();
        let steps = *lens.iter().max().unwrap();
        let indices: Vec<Vec<usize>> = lens
            .iter()
            .map(|&l| (0..steps).map(|s| if s < l { r.gen_range(2..vocab) } else { PAD_INDEX }).collect())
            .collect();
        let m: Vec<Vec<bool>> = lens.iter().map(|&l| (0..steps).map(|s| s < l).collect()).collect();
        let longer: Vec<Vec<usize>> = indices.iter().map(|row| [row.as_slice(), &[PAD_INDEX; 3]].concat()).collect();
        let m3: Vec<Vec<bool>> = m.iter().map(|row| [row.as_slice(), &[false; 3]].concat()).collect();
        let short = forward(&Batch::new(indices, m.clone()).unwrap(), &params, Mode::Eval, 0).map_err(|e| e.to_string())?;
        let long = forward(&Batch::new(longer, m3.clone()).unwrap(), &params, Mode::Eval, 0).map_err(|e| e.to_string())?;
        pad_err = pad_err.max(short.probs.max_abs_diff(&long.probs));
        for weights in &long.attention {
            for (row, valid) in m3.iter().enumerate() {
                sum_err = sum_err.max((weights.row(row).iter().sum::<f64>() - 1.0).abs());
                masked_ok &= valid.iter().zip(weights.row(row)).all(|(&ok, &w)| ok || w == 0.0);
            }
        }
    }
    check(
        sum_err <= 1e-12 && pad_err < 1e-12 && hull_ok && masked_ok,
        format!(
            "500 inputs, |sum-1| <= {sum_err:.1e}, masked exactly 0: {masked_ok}, convex hull: {hull_ok}, PAD drift {pad_err:.1e}"
        ),
    )
}

// 5 -------------------------------------------------------------------------

fn schedule_trace() -> Verdict {
    let losses: Vec<f64> = (0..13).map(|i| 1.0 + 0.1 * i as f64).collect();
    let trace = lr_trace(&losses, 0.001, 0.0001, 3);
    let mut distinct = vec![0.001];
    for &lr in &trace {
        if lr != *distinct.last().unwrap() {
            distinct.push(lr);
        }
    }
    let want = [0.001, 0.0005, 0.00025, 0.000125, 0.0001];
    // Halvings land after failures 3, 6, 9 and 12.
    let positions: Vec<usize> = (1..trace.len()).filter(|&i| trace[i] != trace[i - 1]).collect();
    check(
        distinct == want && positions == [3, 6, 9, 12] && trace[2] == 0.001,
        format!("{distinct:?}"),
    )
}

// 6 -------------------------------------------------------------------------

fn frozen_embedding() -> Verdict {
    let (vocab, data) = synthetic::dataset(&SyntheticSpec::default(), 0);
    let mut params = ModelParams::init(EmbeddingMatrix::random(vocab.len(), 8, 0), 4, 0);
    let before = params.embedding.to_bytes();
    let trainable_before: Vec<f64> = params.trainable().iter().flat_map(|t| t.values().to_vec()).collect();
    let cfg = TrainingConfig {
        batch_size: 8,
        ..TrainingConfig::default()
    };
    let mut state = OptimizerState::new(params.trainable());
    for step in 0..10u64 {
        let start = (step as usize * 8) % data.len();
        let batch: Vec<&Example> = data.examples[start..start + 8].iter().collect();
        train_step(&mut params, &mut state, &batch, &cfg, cfg.lr_init, &[0, step]).map_err(|e| e.to_string())?;
    }
    let moved = params
        .trainable()
        .iter()
        .flat_map(|t| t.values().to_vec())
        .zip(&trainable_before)
        .filter(|(a, b)| a != *b)
        .count();
    check(
        params.embedding.to_bytes() == before && moved > 0,
        format!("10 steps, embedding unchanged, {moved} trainable components moved"),
    )
}

// 7 -------------------------------------------------------------------------

fn write_run(dir: &std::path::Path) -> RunConfig {
    for (name, n, seed) in [("train.tsv", 48, 1), ("dev.tsv", 16, 2)] {
        let spec = SyntheticSpec {
            examples: n,
            ..SyntheticSpec::default()
        };
        write_semeval_tsv(fs::File::create(dir.join(name)).unwrap(), &synthetic::tweets(&spec, seed)).unwrap();
    }
    let text = "train = train.tsv\ndev = dev.tsv\ncheckpoint = best.ckpt\n\
                d_emb = 16\nhidden = 8\nbatch_size = 16\nmax_epochs = 5\nseed = 42\n";
    RunConfig::parse(text, "acceptance.cfg", dir).unwrap()
}

fn determinism() -> Verdict {
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = write_run(dir.path());
        let run = pipeline::train_run(&cfg, |_| {}).map_err(|e| e.to_string())?;
        run.checkpoint.save(&cfg.paths.checkpoint).map_err(|e| e.to_string())?;
        bytes.push(fs::read(&cfg.paths.checkpoint).map_err(|e| e.to_string())?);
    }
    check(
        bytes[0] == bytes[1],
        format!("two runs with all regularizers on, {} checkpoint bytes each, identical: {}", bytes[0].len(), bytes[0] == bytes[1]),
    )
}

// 8 -------------------------------------------------------------------------

fn reproduction() -> Option<Verdict> {
    let path = std::env::var_os("PAN_REPRO_CONFIG")?;
    let run = || -> Result<f64, String> {
        let cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
        let test = cfg.paths.test.clone().ok_or("the reproduction config needs a `test` path")?;
        let trained = pipeline::train_run(&cfg, |_| {}).map_err(|e| e.to_string())?;
        let tweets = load_semeval_tsv(test).map_err(|e| e.to_string())?;
        let eval = pipeline::evaluate(&trained.checkpoint, &tweets, None).map_err(|e| e.to_string())?;
        Ok(eval.report.jaccard)
    };
    Some(run().and_then(|j| check((j - 0.589).abs() <= 0.03, format!("test Jaccard {j:.4}, target 0.589 +/- 0.03"))))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("gradient check", gradient_check),
        ("overfit oracle", overfit),
        ("metric oracle", metric_oracle),
        ("attention invariants", attention_suite),
        ("schedule trace", schedule_trace),
        ("frozen embedding", frozen_embedding),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Ok(detail) => format!("PASS  {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                format!("FAIL  {}. {name}: {detail}", i + 1)
            }
        };
        println!("{line}");
    }
    match reproduction() {
        None => println!("SKIP  8. full-data reproduction (optional): set PAN_REPRO_CONFIG to run it"),
        Some(Ok(d)) => println!("PASS  8. full-data reproduction (optional): {d}"),
        // Optional criterion: reported but not fatal.
        Some(Err(d)) => println!("FAIL  8. full-data reproduction (optional): {d}"),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
