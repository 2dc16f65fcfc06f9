pub mod cli;
pub mod error;
pub mod features;
pub mod fsio;
pub mod gnn;
pub mod graph;
pub mod layer;
pub mod merge;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
