//! Algorithmic core of the multimodal RAG engine.
//!
//! Everything here is pure and allocation-only: exact inner-product search,
//! score fusion, modality assembly, knowledge-base distillation, retrieval
//! and generation metrics, re-ranking parsers and aggregation, and the
//! self-reflection agent loop. IO, HTTP and file formats live in the `mrag`
//! companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agent;
pub mod corpus;
pub mod distill;
pub mod fusion;
pub mod generate;
pub mod index;
pub mod metrics;
pub mod modality;
pub mod rank;
pub mod rerank;
pub mod text;

pub use agent::{AgentConfig, AgentTranscript, FAIL_SENTINEL};
pub use corpus::{Article, ArticleStore, QueryCase, Section};
pub use fusion::{fuse, FusedEmbedding};
pub use index::VectorIndex;
pub use modality::{CandidateSide, ModalityConfig, QuerySide};
pub use rank::RankedList;
