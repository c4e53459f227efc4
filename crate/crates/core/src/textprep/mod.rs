//! Tweet text to padded index sequences, plus the external file formats.

pub mod dataset;
pub mod embeddings;
pub mod tokenize;
pub mod vocab;

pub use dataset::{
    decode, encode, load_semeval_tsv, read_semeval_tsv, write_semeval_tsv, Dataset, Example, LabelSet, Tweet, EMOTIONS, NUM_EMOTIONS,
};
pub use embeddings::{load_embeddings, read_embeddings, EmbeddingMatrix, LoadedEmbeddings};
pub use tokenize::tokenize;
pub use vocab::{build_vocabulary, Vocabulary, PAD, PAD_INDEX, UNK, UNK_INDEX};
