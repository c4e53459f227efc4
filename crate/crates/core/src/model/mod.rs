//! The network: embedding, two bidirectional GRU layers, two-level pyramid
//! attention pooling and a sigmoid multi-label head.

pub mod attention;
pub mod forward;
pub mod gru;
pub mod params;

pub use attention::{attention_pool, attention_pool_batch, Pooled};
pub use forward::{embed, embed_steps, forward, forward_graph, Batch, DropoutMasks, ForwardGraph, ForwardOutput, Mode};
pub use gru::{bigru_layer, gru_cell, gru_step};
pub use params::{
    AttentionParams, AttentionVars, GruDirectionParams, GruVars, HiddenWeightNoise, ModelDims, ModelParams,
    ModelVars, ParamKind, EMBEDDING_NAME,
};
