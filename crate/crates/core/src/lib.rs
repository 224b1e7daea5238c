//! TitAnt: offline T+1 fraud-model training over transaction-network
//! embeddings, a date-versioned feature store, and an online scorer.

pub mod detect;
pub mod embed;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod serve;
pub mod store;

pub use error::{Error, Result};
