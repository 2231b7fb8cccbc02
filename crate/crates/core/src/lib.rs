//! Incremental temporal knowledge-graph completion.
//!
//! Shallow time-aware embedding models trained step by step over a sequence of
//! KG snapshots, with pattern-frequency experience replay, deleted-fact
//! negatives, distillation and temporal regularisation.

pub mod agem;
pub mod config;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod replay;
pub mod trainer;

pub use error::{Error, Result};
