//! Core of the molecule-caption translation toolkit.
//!
//! Everything here is allocation-only `no_std`: SMILES graphs, Morgan
//! fingerprints, BM25, the example store and its retrieval strategies, prompt
//! assembly, output calibration against an abstract chat backend, and the
//! evaluation metrics. File formats, HTTP and the command line live in the
//! `molrag` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backend;
pub mod bm25;
pub mod calibration;
pub mod fingerprint;
pub mod hash;
pub mod metrics;
pub mod prompt;
pub mod smiles;
pub mod store;
mod task;

pub use task::Task;
