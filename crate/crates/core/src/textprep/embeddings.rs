use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::error::{PanError, Result};
use crate::numerics::Tensor;
use crate::rng;
use crate::textprep::vocab::{Vocabulary, PAD_INDEX};

/// Half-width of the uniform range used for words missing from the vector file.
pub const OOV_RANGE: f64 = 0.05;

/// Frozen `|vocabulary| × d_emb` lookup table. Row 0 (PAD) is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    table: Tensor,
}

impl EmbeddingMatrix {
    pub fn from_tensor(table: Tensor) -> Result<Self> {
        table.dims2()?;
        if table.row(PAD_INDEX).iter().any(|&v| v != 0.0) {
            return Err(PanError::Contract("embedding PAD row must be zero".into()));
        }
        Ok(EmbeddingMatrix { table })
    }

    /// Every non-PAD row drawn from uniform(−0.05, 0.05).
    pub fn random(vocab_size: usize, d_emb: usize, seed: u64) -> Self {
        let mut table = Tensor::zeros(&[vocab_size, d_emb]);
        fill_oov(&mut table, &vec![false; vocab_size], seed);
        EmbeddingMatrix { table }
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.table.row(index)
    }

    /// Little-endian bytes of every value, for bit-exact comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.table.values().iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Result of [`load_embeddings`]: the matrix and how many vocabulary entries
/// the vector file covered.
#[derive(Clone, Debug)]
pub struct LoadedEmbeddings {
    pub matrix: EmbeddingMatrix,
    pub found: usize,
}

impl LoadedEmbeddings {
    pub fn coverage(&self) -> f64 {
        self.found as f64 / self.matrix.vocab_size() as f64
    }
}

fn fill_oov(table: &mut Tensor, found: &[bool], seed: u64) {
    let d = table.shape()[1];
    let mut rng = rng::stream(seed, rng::STREAM_OOV, &[]);
    let values = table.values_mut();
    for (row, &hit) in found.iter().enumerate() {
        if row == PAD_INDEX || hit {
            continue;
        }
        for v in &mut values[row * d..(row + 1) * d] {
            *v = rng.gen_range(-OOV_RANGE..OOV_RANGE);
        }
    }
}

/// Reads `word v1 ... vd` lines. Vocabulary words found in the file get their
/// vectors verbatim (first occurrence wins); UNK and every other word get
/// seeded uniform(−0.05, 0.05) vectors; PAD stays zero.
pub fn read_embeddings<R: BufRead>(
    reader: R,
    source_name: &str,
    vocab: &Vocabulary,
    d_emb: usize,
    seed: u64,
) -> Result<LoadedEmbeddings> {
    let mut table = Tensor::zeros(&[vocab.len(), d_emb]);
    let mut found = vec![false; vocab.len()];
    let mut seen_words = HashSet::new();
    let mut first_data_line = true;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| PanError::io(source_name, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let word = fields.next().unwrap_or_default();
        let numbers: Vec<&str> = fields.collect();
        if numbers.len() != d_emb {
            if first_data_line {
                return Err(PanError::Config(format!(
                    "{source_name}: vectors have dimension {}, configuration expects {d_emb}",
                    numbers.len()
                )));
            }
            return Err(PanError::Parse {
                source_name: source_name.to_string(),
                line: line_no,
                message: format!("expected {} fields, found {}", d_emb + 1, numbers.len() + 1),
            });
        }
        first_data_line = false;
        let Some(row) = vocab.get(word) else { continue };
        if row == PAD_INDEX || !seen_words.insert(word.to_string()) {
            continue;
        }
        let dst = &mut table.values_mut()[row * d_emb..(row + 1) * d_emb];
        for (slot, raw) in dst.iter_mut().zip(&numbers) {
            *slot = raw.parse::<f64>().map_err(|e| PanError::Parse {
                source_name: source_name.to_string(),
                line: line_no,
                message: format!("bad number {raw:?}: {e}"),
            })?;
        }
        found[row] = true;
    }

    fill_oov(&mut table, &found, seed);
    Ok(LoadedEmbeddings {
        found: found.iter().filter(|&&f| f).count(),
        matrix: EmbeddingMatrix { table },
    })
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, d_emb: usize, seed: u64) -> Result<LoadedEmbeddings> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PanError::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string(), vocab, d_emb, seed)
}
