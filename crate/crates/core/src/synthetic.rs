//! Planted-keyword toy data for tests, benchmarks and demos.
//!
//! Emotion `k` has its own keyword token `kw_<emotion>`; an example carries
//! label `k` exactly when that keyword occurs in it. Everything else is filler.

use rand::Rng;

use crate::rng;
use crate::textprep::{Dataset, Tweet, Vocabulary, EMOTIONS, NUM_EMOTIONS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub examples: usize,
    pub fillers: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that each keyword is planted in an example.
    pub keyword_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            examples: 64,
            fillers: 20,
            min_len: 4,
            max_len: 12,
            keyword_rate: 0.15,
        }
    }
}

pub fn keyword(emotion: usize) -> String {
    format!("kw_{}", EMOTIONS[emotion])
}

fn filler(i: usize) -> String {
    format!("w{i}")
}

/// `<pad>`, `<unk>`, the 11 keywords, then the fillers.
pub fn vocabulary(spec: &SyntheticSpec) -> Vocabulary {
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend((0..NUM_EMOTIONS).map(keyword));
    tokens.extend((0..spec.fillers).map(filler));
    Vocabulary::from_tokens(tokens).expect("distinct tokens")
}

/// Space-separated tweets whose labels follow the planted keywords.
pub fn tweets(spec: &SyntheticSpec, seed: u64) -> Vec<Tweet> {
    let mut r = rng::stream(seed, "synthetic", &[]);
    (0..spec.examples)
        .map(|i| {
            let len = r.gen_range(spec.min_len..=spec.max_len);
            let mut words: Vec<String> = (0..len).map(|_| filler(r.gen_range(0..spec.fillers))).collect();
            let mut labels = [false; NUM_EMOTIONS];
            for (k, label) in labels.iter_mut().enumerate() {
                if r.gen_bool(spec.keyword_rate) {
                    *label = true;
                    let at = r.gen_range(0..=words.len());
                    words.insert(at, keyword(k));
                }
            }
            Tweet {
                id: format!("syn-{i:04}"),
                text: words.join(" "),
                labels,
            }
        })
        .collect()
}

/// The encoded dataset and its vocabulary.
pub fn dataset(spec: &SyntheticSpec, seed: u64) -> (Vocabulary, Dataset) {
    let vocab = vocabulary(spec);
    let max_len = spec.max_len + NUM_EMOTIONS;
    let data = Dataset::from_tweets(&tweets(spec, seed), &vocab, max_len);
    (vocab, data)
}
