//! Variational co-embedding of nodes and attributes for clustering
//! attributed graphs.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pca;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
