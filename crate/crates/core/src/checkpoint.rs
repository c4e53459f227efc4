//! Binary checkpoint container.
//!
//! ```text
//! "PANCKPT1"                     8 bytes magic
//! version                        u32
//! record count                   u32
//! per record (canonical order, embedding.W_e first):
//!   name length                  u32
//!   name                         UTF-8
//!   rank                         u32
//!   dims                         u64 × rank
//!   values                       f64 × prod(dims)
//! vocabulary block               u64 length + UTF-8, one token per line
//! config block                   u64 length + UTF-8 key = value text
//! best validation loss           f64
//! ```
//!
//! All integers and floats are little-endian. Equal contents always produce
//! identical bytes.

use std::fs;
use std::path::Path;

use crate::config::ConfigSnapshot;
use crate::error::{PanError, Result};
use crate::model::{ModelParams, EMBEDDING_NAME};
use crate::numerics::Tensor;
use crate::textprep::{EmbeddingMatrix, Vocabulary};

pub const MAGIC: &[u8; 8] = b"PANCKPT1";
pub const FORMAT_VERSION: u32 = 1;

const VOCAB_BLOCK: &str = "<vocabulary>";
const CONFIG_BLOCK: &str = "<config>";
const TRAILER: &str = "<best_val_loss>";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub config: ConfigSnapshot,
    pub best_val_loss: f64,
}

fn err(record: &str, message: impl Into<String>) -> PanError {
    PanError::Checkpoint {
        record: record.to_string(),
        message: message.into(),
    }
}

fn record_names() -> Vec<String> {
    let mut names = vec![EMBEDDING_NAME.to_string()];
    names.extend(ModelParams::trainable_names());
    names
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.vocab.len() != self.params.embedding.vocab_size() {
            return Err(PanError::Contract(format!(
                "vocabulary has {} tokens but the embedding has {} rows",
                self.vocab.len(),
                self.params.embedding.vocab_size()
            )));
        }
        if let Some(t) = self.vocab.tokens().iter().find(|t| t.contains('\n')) {
            return Err(PanError::Contract(format!("vocabulary token {t:?} contains a newline")));
        }
        let mut tensors = vec![self.params.embedding.table()];
        tensors.extend(self.params.trainable());
        let names = record_names();

        let mut out = Vec::with_capacity(MAGIC.len() + 8 * (self.params.trainable_count() + 1024));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for (name, t) in names.iter().zip(tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for block in [self.vocab.tokens().join("\n"), self.config.to_text()] {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            out.extend_from_slice(block.as_bytes());
        }
        out.extend_from_slice(&self.best_val_loss.to_le_bytes());
        Ok(out)
    }

    /// Decodes a whole checkpoint; nothing is returned unless every record
    /// parses and the parameter set is complete and consistent.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "<header>")?;
        if magic != MAGIC {
            return Err(err("<header>", "bad magic bytes, not a checkpoint file"));
        }
        let version = r.u32("<header>")?;
        if version != FORMAT_VERSION {
            return Err(err(
                "<header>",
                format!("format version {version} is not supported (expected {FORMAT_VERSION})"),
            ));
        }
        let expected = record_names();
        let count = r.u32("<header>")? as usize;
        if count != expected.len() {
            return Err(err("<header>", format!("{count} records, expected {}", expected.len())));
        }

        let mut tensors = Vec::with_capacity(count);
        for want in &expected {
            let name_len = r.u32(want)? as usize;
            let name = std::str::from_utf8(r.take(name_len, want)?)
                .map_err(|_| err(want, "record name is not UTF-8"))?;
            if name != want {
                return Err(err(name, format!("unexpected record, expected `{want}`")));
            }
            let rank = r.u32(want)? as usize;
            if rank != 2 {
                return Err(err(want, format!("rank {rank}, expected 2")));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = usize::try_from(r.u64(want)?).map_err(|_| err(want, "dimension overflows usize"))?;
                dims.push(d);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| err(want, format!("dims {dims:?} overflow or exceed the file size")))?;
            let values = r
                .take(numel * 8, want)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&dims, values).map_err(|e| err(want, e.to_string()))?;
            tensors.push(t);
        }

        let vocab_text = r.block(VOCAB_BLOCK)?;
        let vocab = Vocabulary::from_tokens(vocab_text.split('\n').map(String::from).collect())
            .map_err(|e| err(VOCAB_BLOCK, e.to_string()))?;
        let config_text = r.block(CONFIG_BLOCK)?;
        let config = ConfigSnapshot::parse(&config_text, CONFIG_BLOCK).map_err(|e| err(CONFIG_BLOCK, e.to_string()))?;
        let best_val_loss = f64::from_le_bytes(r.take(8, TRAILER)?.try_into().expect("8 bytes"));
        if r.remaining() != 0 {
            return Err(err(TRAILER, format!("{} unexpected trailing bytes", r.remaining())));
        }

        let mut tensors = tensors.into_iter();
        let embedding = EmbeddingMatrix::from_tensor(tensors.next().expect("embedding record"))
            .map_err(|e| err(EMBEDDING_NAME, e.to_string()))?;
        if embedding.vocab_size() != vocab.len() {
            return Err(err(
                VOCAB_BLOCK,
                format!("{} tokens for {} embedding rows", vocab.len(), embedding.vocab_size()),
            ));
        }
        let trainable: Vec<Tensor> = tensors.collect();
        let hidden = trainable[0].shape()[1];
        let mut params = ModelParams::zeros(embedding, hidden);
        for ((slot, t), name) in params.trainable_mut().into_iter().zip(trainable).zip(&expected[1..]) {
            if slot.shape() != t.shape() {
                return Err(err(name, format!("shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        params.validate().map_err(|e| err("<params>", e.to_string()))?;
        Ok(Checkpoint {
            params,
            vocab,
            config,
            best_val_loss,
        })
    }

    /// Writes through a sibling temporary file so a crash never leaves a
    /// truncated checkpoint at `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| PanError::io(dir, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, &bytes).map_err(|e| PanError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| PanError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| PanError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, record: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(err(
                record,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, record: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, record)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, record: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, record)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self, record: &str) -> Result<String> {
        let len = usize::try_from(self.u64(record)?).map_err(|_| err(record, "length overflows usize"))?;
        let raw = self.take(len, record)?;
        String::from_utf8(raw.to_vec()).map_err(|_| err(record, "block is not UTF-8"))
    }
}
