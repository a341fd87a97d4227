//! Multi-hop dense retrieval: hashed and trainable encoders, exact and graph
//! MIPS indexes, beam search over passage chains, contrastive training, and
//! evaluation metrics.

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod index;
pub mod jsonl;
pub mod retriever;
pub mod text;
pub mod trainer;
