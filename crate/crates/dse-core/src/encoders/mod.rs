//! Encoding and fusion layers.
//!
//! [`embedding`] holds the word and relation tables plus the external
//! embedding file loader; [`lstm`] is the recurrent cell in both gate
//! variants and the masked BiLSTM runner; [`bilm`] is the toy
//! bidirectional language model; [`fusion`] combines each token with its
//! relation and head vectors.

pub mod bilm;
pub mod embedding;
pub mod fusion;
pub mod lstm;

pub use bilm::{bilm_embed, bilm_embed_batch, bilm_loss, BiLmError, BiLmSpec};
pub use embedding::{apply_external, parse_embedding_file, EmbedFileError, EmbeddingSpec};
pub use fusion::{fuse_concat, fuse_gate};
pub use lstm::{
    bilstm_encode, flatten_steps, lstm_cell, lstm_run, step_masks, BiLstmOut, LstmSpec,
    LstmVariant, LstmVars,
};
