use std::collections::HashMap;

use crate::error::{PanError, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Token <-> index map. Index 0 is PAD and index 1 is UNK; the remaining
/// indices are dense and follow first appearance in the building corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let tokens = vec![PAD.to_string(), UNK.to_string()];
        let index = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocabulary { index, tokens }
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its index-ordered token list, as stored in
    /// checkpoints.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD) || tokens.get(1).map(String::as_str) != Some(UNK) {
            return Err(PanError::Contract("vocabulary must start with PAD, UNK".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(PanError::Contract(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { index, tokens })
    }

    fn insert(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Keeps every token seen at least `min_count` times, ordered by first
/// appearance.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(PanError::Config("min_count must be at least 1".into()));
    }
    if corpus.iter().all(Vec::is_empty) {
        return Err(PanError::Contract("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for doc in corpus {
        for token in doc {
            let token = token.as_ref();
            let count = counts.entry(token).or_insert(0);
            if *count == 0 {
                order.push(token);
            }
            *count += 1;
        }
    }
    let mut vocab = Vocabulary::default();
    for token in order {
        if counts[token] >= min_count {
            vocab.insert(token);
        }
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_appearance_order() {
        let v = build_vocabulary(&[vec!["a", "b", "a"]], 1).unwrap();
        assert_eq!(v.tokens(), [PAD, UNK, "a", "b"]);
        assert_eq!(v.get("a"), Some(2));
    }

    #[test]
    fn frequency_filter() {
        let v = build_vocabulary(&[vec!["a", "b", "a"]], 2).unwrap();
        assert_eq!(v.tokens(), [PAD, UNK, "a"]);
        assert_eq!(v.index_or_unk("b"), UNK_INDEX);
    }

    #[test]
    fn empty_corpus_and_zero_min_count_fail() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(build_vocabulary(&empty, 1).is_err());
        assert!(build_vocabulary(&[Vec::<&str>::new()], 1).is_err());
        assert!(build_vocabulary(&[vec!["a"]], 0).is_err());
    }

    #[test]
    fn reserved_tokens_are_not_duplicated() {
        let v = build_vocabulary(&[vec![PAD, "x", UNK]], 1).unwrap();
        assert_eq!(v.tokens(), [PAD, UNK, "x"]);
    }

    #[test]
    fn from_tokens_round_trip() {
        let v = build_vocabulary(&[vec!["q", "r"]], 1).unwrap();
        assert_eq!(Vocabulary::from_tokens(v.tokens().to_vec()).unwrap(), v);
        assert!(Vocabulary::from_tokens(vec!["x".into()]).is_err());
    }
}
