//! Graph-convolutional recommender with high-order similarity constraints
//! and variational completion of the user-item interaction graph.

pub mod error;
pub mod eval;
pub mod generative;
pub mod graphconv;
pub mod highorder;
pub mod ingest;
pub mod numeric;
pub mod training;

pub use error::{Error, Result};
