//! Std side of the multimodal RAG engine: stage file formats, the model
//! gateway and its mock server, prompt assembly, pipeline orchestration and
//! the HTTP service.

pub mod agent;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod generate;
pub mod index_file;
pub mod jsonl;
pub mod mock;
pub mod prompts;
pub mod records;
pub mod rerank;
pub mod retrieval;
pub mod config;
pub mod pipeline;
pub mod service;
pub mod synth;
