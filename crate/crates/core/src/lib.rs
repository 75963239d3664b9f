//! Active learning for adapting an incremental span-clustering coreference
//! model to a new domain.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`]: documents, candidate spans, featurization, synthetic data.
//! * [`scorer`]: mention, pairwise and gate networks plus continued training.
//! * [`clusterer`]: incremental inference with per-span assignment traces.
//! * [`acquisition`]: uncertainty and random sampling strategies.
//! * [`active_loop`]: budgeted selection, oracle labeling, cycles and grids.
//! * [`metrics`]: MUC, B³, CEAF-φ4 and mention detection scores.
//! * [`analysis`]: sampled-span types, error taxonomy and timing tables.

pub mod acquisition;
pub mod active_loop;
pub mod analysis;
pub mod clusterer;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod scorer;

pub use error::{Error, Result};
