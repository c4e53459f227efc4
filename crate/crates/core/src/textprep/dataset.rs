use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{PanError, Result};
use crate::textprep::tokenize::tokenize;
use crate::textprep::vocab::{Vocabulary, PAD_INDEX, UNK_INDEX};

/// Canonical label order of the emotion classification task.
pub const EMOTIONS: [&str; 11] = [
    "anger",
    "anticipation",
    "disgust",
    "fear",
    "joy",
    "love",
    "optimism",
    "pessimism",
    "sadness",
    "surprise",
    "trust",
];

pub const NUM_EMOTIONS: usize = EMOTIONS.len();

pub type LabelSet = [bool; NUM_EMOTIONS];

/// One row of a labelled tweet file, before tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    pub labels: LabelSet,
}

impl Tweet {
    pub fn label_names(&self) -> Vec<&'static str> {
        EMOTIONS
            .iter()
            .zip(self.labels)
            .filter_map(|(name, on)| on.then_some(*name))
            .collect()
    }
}

/// An encoded tweet: `indices` and `mask` share length `max_len`, and the mask
/// is a run of `true` followed by `false` padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
    pub labels: LabelSet,
}

impl Example {
    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn labels_as_f64(&self) -> [f64; NUM_EMOTIONS] {
        self.labels.map(|b| if b { 1.0 } else { 0.0 })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Dataset { examples }
    }

    /// Tokenizes and encodes every tweet. A tweet with no tokens is encoded as
    /// a single UNK so that attention always has a position to pool.
    pub fn from_tweets(tweets: &[Tweet], vocab: &Vocabulary, max_len: usize) -> Self {
        let examples = tweets
            .iter()
            .map(|tweet| {
                let (mut indices, mut mask) = encode(&tokenize(&tweet.text), vocab, max_len);
                if !mask[0] {
                    indices[0] = UNK_INDEX;
                    mask[0] = true;
                }
                Example {
                    id: tweet.id.clone(),
                    indices,
                    mask,
                    labels: tweet.labels,
                }
            })
            .collect();
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_names(&self) -> &'static [&'static str] {
        &EMOTIONS
    }

    /// Gold positives per emotion.
    pub fn supports(&self) -> [usize; NUM_EMOTIONS] {
        let mut out = [0; NUM_EMOTIONS];
        for ex in &self.examples {
            for (o, &l) in out.iter_mut().zip(&ex.labels) {
                *o += usize::from(l);
            }
        }
        out
    }
}

/// Maps tokens to indices (UNK when absent), truncates to `max_len` and
/// right-pads with PAD. Panics if `max_len` is zero.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> (Vec<usize>, Vec<bool>) {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut indices = vec![PAD_INDEX; max_len];
    let mut mask = vec![false; max_len];
    for (i, token) in tokens.iter().take(max_len).enumerate() {
        indices[i] = vocab.index_or_unk(token.as_ref());
        mask[i] = true;
    }
    (indices, mask)
}

/// Inverse of [`encode`] over the unmasked prefix.
pub fn decode(indices: &[usize], mask: &[bool], vocab: &Vocabulary) -> Vec<String> {
    indices
        .iter()
        .zip(mask)
        .take_while(|(_, &m)| m)
        .map(|(&i, _)| vocab.token(i).unwrap_or(crate::textprep::vocab::UNK).to_string())
        .collect()
}

/// Parses the tab-separated emotion file format: a header
/// `ID<TAB>Tweet<TAB>anger<TAB>...<TAB>trust` followed by one row per tweet
/// with `0`/`1` in each emotion column.
pub fn read_semeval_tsv<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<Tweet>> {
    let parse_err = |line: usize, message: String| PanError::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let expected_cols = 2 + NUM_EMOTIONS;
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| PanError::io(source_name, e))?,
        None => return Err(parse_err(1, "missing header row".into())),
    };
    let header: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    if header.len() != expected_cols {
        return Err(parse_err(
            1,
            format!("header has {} columns, expected {expected_cols}", header.len()),
        ));
    }
    for (i, (got, want)) in header[2..].iter().zip(EMOTIONS).enumerate() {
        if !got.trim().eq_ignore_ascii_case(want) {
            return Err(parse_err(
                1,
                format!("emotion column {} is {got:?}, expected {want:?}", i + 3),
            ));
        }
    }

    let mut tweets = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| PanError::io(source_name, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != expected_cols {
            return Err(parse_err(
                line_no,
                format!("row has {} columns, expected {expected_cols}", cols.len()),
            ));
        }
        let mut labels = [false; NUM_EMOTIONS];
        for (k, raw) in cols[2..].iter().enumerate() {
            labels[k] = match raw.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(
                        line_no,
                        format!("label {:?} for {} is not 0 or 1", other, EMOTIONS[k]),
                    ))
                }
            };
        }
        tweets.push(Tweet {
            id: cols[0].to_string(),
            text: cols[1].to_string(),
            labels,
        });
    }
    Ok(tweets)
}

/// Writes tweets in the format read by [`read_semeval_tsv`]. Tabs and line
/// breaks inside the text are replaced by spaces.
pub fn write_semeval_tsv<W: Write>(mut out: W, tweets: &[Tweet]) -> std::io::Result<()> {
    writeln!(out, "ID\tTweet\t{}", EMOTIONS.join("\t"))?;
    for t in tweets {
        let text: String = t
            .text
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        let labels: Vec<&str> = t.labels.iter().map(|&l| if l { "1" } else { "0" }).collect();
        writeln!(out, "{}\t{}\t{}", t.id, text, labels.join("\t"))?;
    }
    Ok(())
}

pub fn load_semeval_tsv(path: impl AsRef<Path>) -> Result<Vec<Tweet>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PanError::io(path, e))?;
    read_semeval_tsv(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::vocab::build_vocabulary;

    fn header() -> String {
        format!("ID\tTweet\t{}\n", EMOTIONS.join("\t"))
    }

    #[test]
    fn parses_example_row() {
        let text = format!(
            "{}2017-En-1\tThe best revenge is massive success.\t1\t0\t0\t0\t1\t0\t1\t0\t0\t0\t0\n",
            header()
        );
        let tweets = read_semeval_tsv(text.as_bytes(), "mem").unwrap();
        assert_eq!(tweets.len(), 1);
        assert_eq!(tweets[0].label_names(), ["anger", "joy", "optimism"]);
        assert_eq!(tweets[0].id, "2017-En-1");
    }

    #[test]
    fn write_then_read() {
        let tweets = vec![Tweet {
            id: "a".into(),
            text: "tab\there".into(),
            labels: std::array::from_fn(|k| k % 3 == 0),
        }];
        let mut buf = Vec::new();
        write_semeval_tsv(&mut buf, &tweets).unwrap();
        let back = read_semeval_tsv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back[0].text, "tab here");
        assert_eq!(back[0].labels, tweets[0].labels);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_semeval_tsv(header().as_bytes(), "mem").unwrap().is_empty());
    }

    #[test]
    fn short_row_names_its_line() {
        let text = format!("{}a\tb\t1\t0\t0\t0\t1\t0\t1\t0\t0\t0\t0\nx\ty\t1\t0\t0\t0\t1\t0\t1\t0\t0\t0\n", header());
        let err = read_semeval_tsv(text.as_bytes(), "mem").unwrap_err();
        match err {
            PanError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_binary_and_bad_header() {
        let text = format!("{}a\tb\t2\t0\t0\t0\t1\t0\t1\t0\t0\t0\t0\n", header());
        assert!(matches!(read_semeval_tsv(text.as_bytes(), "m"), Err(PanError::Parse { line: 2, .. })));
        let swapped = header().replace("anger\tanticipation", "anticipation\tanger");
        assert!(matches!(read_semeval_tsv(swapped.as_bytes(), "m"), Err(PanError::Parse { line: 1, .. })));
        assert!(read_semeval_tsv("".as_bytes(), "m").is_err());
    }

    #[test]
    fn encode_pads_truncates_and_falls_back() {
        let vocab = build_vocabulary(&[vec!["cat"]], 1).unwrap();
        assert_eq!(encode(&["cat"], &vocab, 3), (vec![2, 0, 0], vec![true, false, false]));
        assert_eq!(encode(&["dog"], &vocab, 1), (vec![UNK_INDEX], vec![true]));
        let long: Vec<&str> = vec!["cat"; 60];
        let (idx, mask) = encode(&long, &vocab, 50);
        assert_eq!(idx.len(), 50);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn decode_restores_in_vocabulary_tokens() {
        let tokens = vec!["a", "b", "c", "a"];
        let vocab = build_vocabulary(&[tokens.clone()], 1).unwrap();
        let (idx, mask) = encode(&tokens, &vocab, 6);
        assert_eq!(decode(&idx, &mask, &vocab), tokens);
        let (idx, mask) = encode(&tokens, &vocab, 2);
        assert_eq!(decode(&idx, &mask, &vocab), &tokens[..2]);
    }

    #[test]
    fn empty_tweet_becomes_single_unk() {
        let vocab = Vocabulary::default();
        let tweets = [Tweet {
            id: "e".into(),
            text: "   ".into(),
            labels: [false; NUM_EMOTIONS],
        }];
        let ds = Dataset::from_tweets(&tweets, &vocab, 4);
        assert_eq!(ds.examples[0].indices, [UNK_INDEX, 0, 0, 0]);
        assert_eq!(ds.examples[0].valid_len(), 1);
    }
}
