//! Dependency syntax expansion: linearize dependency trees into per-token
//! (word, relation, head) triples and encode them with a BiLSTM over fused
//! embeddings, plus everything needed to train and evaluate the result —
//! a reverse-mode autodiff tape, CoNLL-U ingestion, task heads, a
//! tree-structured baseline, and deterministic synthetic data generators.

pub mod conllu;
pub mod dedup;
pub mod encoders;
pub mod expand;
pub mod heads;
pub mod model;
pub mod par;
pub mod params;
pub mod synth;
pub mod train;
pub mod treelstm;
pub mod tensor;
