//! File formats, chat backends, the evaluation harness and the command line
//! for molecule-caption translation by retrieval-augmented prompting.
//!
//! The algorithms live in [`molrag_core`]; this crate adds everything that
//! needs `std`: TSV ingest, store persistence, HTTP and replay transports
//! with retry, TOML configuration, and batch evaluation with resumable
//! checkpoints.

pub mod ablate;
pub mod client;
pub mod config;
pub mod evaluate;
pub mod persist;
pub mod report;
pub mod templates;
pub mod tsv;

pub use molrag_core as core;
