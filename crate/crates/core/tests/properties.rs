use pan_core::checkpoint::Checkpoint;
use pan_core::config::ConfigSnapshot;
use pan_core::metrics::{f1_scores, jaccard_accuracy, threshold, LabelMatrix};
use pan_core::model::{attention_pool, forward, gru_cell, AttentionParams, Batch, GruDirectionParams, Mode, ModelParams};
use pan_core::numerics::{Tape, Tensor};
use pan_core::synthetic;
use pan_core::textprep::{decode, encode, EmbeddingMatrix, PAD_INDEX};
use pan_core::training::{lr_trace, TrainingConfig};
use proptest::collection::vec;
use proptest::prelude::*;

fn tensor(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Tensor> {
    vec(-scale..scale, rows * cols).prop_map(move |v| Tensor::new(&[rows, cols], v).unwrap())
}

/// Scores with a mask that leaves at least one position valid per row.
fn scores_and_mask() -> impl Strategy<Value = (Tensor, Vec<bool>)> {
    (1usize..5, 1usize..9).prop_flat_map(|(b, t)| {
        (tensor(b, t, 30.0), vec(any::<bool>(), b * t), vec(0..t, b)).prop_map(move |(s, mut m, keep)| {
            for (row, k) in keep.into_iter().enumerate() {
                m[row * t + k] = true;
            }
            (s, m)
        })
    })
}

fn softmax(s: &Tensor, mask: &[bool]) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(s.clone());
    let out = tape.masked_softmax(v, mask).unwrap();
    tape.value(out).clone()
}

fn labels(rows: usize, labels: usize) -> impl Strategy<Value = LabelMatrix> {
    vec(any::<bool>(), rows * labels).prop_map(move |c| LabelMatrix::new(rows, labels, c).unwrap())
}

fn pair() -> impl Strategy<Value = (LabelMatrix, LabelMatrix)> {
    (1usize..12, 1usize..6).prop_flat_map(|(r, l)| (labels(r, l), labels(r, l)))
}

fn reorder(m: &LabelMatrix, order: &[usize]) -> LabelMatrix {
    let rows: Vec<&[bool]> = order.iter().map(|&i| m.row(i)).collect();
    LabelMatrix::from_rows(&rows, m.labels()).unwrap()
}

fn all_metrics(p: &LabelMatrix, g: &LabelMatrix) -> [f64; 3] {
    let f = f1_scores(p, g).unwrap();
    [jaccard_accuracy(p, g).unwrap(), f.micro_f1, f.macro_f1]
}

fn close(a: [f64; 3], b: [f64; 3]) -> bool {
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_masked((s, mask) in scores_and_mask()) {
        let (b, t) = s.dims2().unwrap();
        let a = softmax(&s, &mask);
        for r in 0..b {
            let row = a.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (c, &v) in row.iter().enumerate() {
                if mask[r * t + c] {
                    prop_assert!(v >= 0.0);
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_ignores_row_shifts((s, mask) in scores_and_mask(), shift in -100.0..100.0f64) {
        let shifted = Tensor::new(s.shape(), s.values().iter().map(|v| v + shift).collect()).unwrap();
        prop_assert!(softmax(&s, &mask).max_abs_diff(&softmax(&shifted, &mask)) < 1e-12);
    }

    #[test]
    fn pooled_vector_lies_in_convex_hull(
        (u, mask, w) in (1usize..8, 1usize..6).prop_flat_map(|(t, d)| {
            (tensor(t, d, 5.0), vec(any::<bool>(), t), vec(-3.0..3.0f64, d + 1))
        })
    ) {
        let (t, d) = u.dims2().unwrap();
        let mut mask = mask;
        mask[t - 1] = true;
        let p = AttentionParams {
            w_a: Tensor::new(&[d, 1], w[..d].to_vec()).unwrap(),
            b: Tensor::scalar(w[d]),
        };
        let (v, a) = attention_pool(&u, &p, &mask).unwrap();
        prop_assert!((a.sum() - 1.0).abs() < 1e-12);
        for c in 0..d {
            let col = (0..t).filter(|&r| mask[r]).map(|r| u.at(r, c));
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
            prop_assert!(v.values()[c] >= lo - 1e-12 && v.values()[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn padding_does_not_change_predictions(
        seed in 0u64..1000,
        tokens in vec(1usize..15, 1..7),
        extra in 1usize..5,
    ) {
        let params = ModelParams::init(EmbeddingMatrix::random(15, 6, seed), 3, seed);
        let short = Batch::unmasked(vec![tokens.clone()]).unwrap();
        let mut padded = tokens.clone();
        padded.extend(std::iter::repeat(PAD_INDEX).take(extra));
        let mask = vec![(0..padded.len()).map(|i| i < tokens.len()).collect()];
        let long = Batch::new(vec![padded], mask).unwrap();
        let a = forward(&short, &params, Mode::Eval, 0).unwrap().probs;
        let b = forward(&long, &params, Mode::Eval, 0).unwrap().probs;
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn gru_state_stays_in_unit_box(
        (x, h, weights) in (1usize..6, 1usize..5).prop_flat_map(|(d, h)| {
            (tensor(1, d, 50.0), tensor(1, h, 1.0), vec(-5.0..5.0f64, 3 * (d * h + h * h + 2 * h)))
        })
    ) {
        let (d, hid) = (x.numel(), h.numel());
        let mut p = GruDirectionParams::zeros(d, hid);
        let mut it = weights.into_iter();
        for t in p.tensors_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        let next = gru_cell(&x, &h, &p).unwrap();
        prop_assert!(next.values().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(m, k, n, p)| (tensor(m, k, 2.0), tensor(k, n, 2.0), tensor(n, p, 2.0)))
    ) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-10);
    }

    #[test]
    fn metrics_ignore_row_order((p, g) in pair(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..p.rows()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(close(all_metrics(&p, &g), all_metrics(&reorder(&p, &order), &reorder(&g, &order))));
    }

    #[test]
    fn metrics_ignore_duplication((p, g) in pair()) {
        let twice: Vec<usize> = (0..p.rows()).chain(0..p.rows()).collect();
        prop_assert!(close(all_metrics(&p, &g), all_metrics(&reorder(&p, &twice), &reorder(&g, &twice))));
    }

    #[test]
    fn metrics_are_bounded((p, g) in pair()) {
        prop_assert!(all_metrics(&p, &g).iter().all(|m| (0.0..=1.0).contains(m)));
        prop_assert_eq!(all_metrics(&g, &g)[0], 1.0);
    }

    #[test]
    fn raising_the_threshold_removes_labels(s in tensor(4, 11, 1.0), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let s = Tensor::new(s.shape(), s.values().iter().map(|v| v.abs()).collect()).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let (a, b) = (threshold(&s, lo).unwrap(), threshold(&s, hi).unwrap());
        for r in 0..4 {
            for c in 0..11 {
                prop_assert!(!b.get(r, c) || a.get(r, c));
            }
        }
    }

    #[test]
    fn encode_then_decode_recovers_known_tokens(picks in vec(2usize..33, 0..20), max_len in 1usize..15) {
        let vocab = synthetic::vocabulary(&synthetic::SyntheticSpec::default());
        let tokens: Vec<&str> = picks.iter().map(|&i| vocab.token(i).unwrap()).collect();
        let (indices, mask) = encode(&tokens, &vocab, max_len);
        prop_assert_eq!(indices.len(), max_len);
        let n = tokens.len().min(max_len);
        prop_assert_eq!(mask.iter().filter(|&&m| m).count(), n);
        prop_assert!(indices[n..].iter().all(|&i| i == PAD_INDEX));
        prop_assert_eq!(decode(&indices, &mask, &vocab), tokens[..n].to_vec());
    }

    #[test]
    fn schedule_never_rises_or_drops_below_floor(losses in vec(0.0..2.0f64, 0..60), patience in 1usize..5) {
        let trace = lr_trace(&losses, 0.001, 0.0001, patience);
        let mut prev = 0.001;
        for lr in trace {
            prop_assert!(lr <= prev && lr >= 0.0001);
            prop_assert!(lr == prev || lr == (prev / 2.0).max(0.0001));
            prev = lr;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn config_snapshot_round_trips(
        batch in 1usize..512,
        lr in 1e-6..1.0f64,
        rates in (0.0..0.99f64, 0.0..0.99f64, 0.0..1.0f64, 0.0..1e-2f64),
        patience in 1usize..40,
        tau in 0.01..0.99f64,
        seed in any::<u64>(),
        max_len in 1usize..200,
    ) {
        let training = TrainingConfig {
            batch_size: batch,
            lr_init: lr,
            lr_floor: lr / 3.0,
            dropout_dense: rates.0,
            spatial_dropout: rates.1,
            weight_noise_std: rates.2,
            l2_coeff: rates.3,
            early_stop_patience: patience,
            threshold: tau,
            seed,
            ..TrainingConfig::default()
        };
        let snap = ConfigSnapshot { training, max_len };
        prop_assert_eq!(ConfigSnapshot::parse(&snap.to_text(), "snapshot").unwrap(), snap);
    }

    #[test]
    fn checkpoint_round_trips(seed in any::<u64>(), vocab in 3usize..12, d in 1usize..5, h in 1usize..4, loss in 0.0..5.0f64) {
        let tokens: Vec<String> = ["<pad>", "<unk>"].iter().map(|s| s.to_string())
            .chain((2..vocab).map(|i| format!("tok{i}")))
            .collect();
        let ckpt = Checkpoint {
            params: ModelParams::init(EmbeddingMatrix::random(vocab, d, seed), h, seed),
            vocab: pan_core::textprep::Vocabulary::from_tokens(tokens).unwrap(),
            config: ConfigSnapshot { training: TrainingConfig { seed, ..TrainingConfig::default() }, max_len: 40 },
            best_val_loss: loss,
        };
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ckpt);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }
}
