//! Agentic retrieval over heterogeneous knowledge graphs.
//!
//! The crate exposes a small, composable stack:
//!
//! - [`graph`] — validated immutable graph with typed nodes/edges and
//!   symmetric adjacency ([`ingest`] loads the JSONL dump format);
//! - [`index`] — BM25 relevance over node descriptors;
//! - [`tools`] — the two retrieval tools (global search, one-hop
//!   neighborhood exploration) plus machine-readable schemas;
//! - [`agent`] / [`policy`] — the interactive retrieval loop driven by a
//!   scripted or remote-model policy;
//! - [`fusion`] — parallel agents and vote-count rank fusion;
//! - [`eval`] — Hit@k / Recall@20 / MRR over query splits and trajectory
//!   behavior statistics;
//! - [`distill`] — loss-masked conversation export for supervised
//!   fine-tuning;
//! - [`bundle`] / [`server`] — on-disk graph+index bundles and the HTTP
//!   tool service.
//!
//! Start with the runnable examples (`cargo run -p kgsearch --example ...`),
//! each of which demonstrates one capability end to end on the bundled
//! fixture graph.

pub mod agent;
pub mod graph;
pub mod index;
pub mod ingest;
pub mod policy;
pub mod prompt;
pub mod tools;

#[cfg(test)]
pub(crate) mod testutil;

pub use graph::{Direction, EdgeRecord, Graph, GraphError, GraphStats, NodeId, NodeRecord, TypeManifest};
pub use index::{Bm25Params, InvertedIndex, ScoredNode};
