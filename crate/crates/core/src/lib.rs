pub mod cli;
pub mod data;
pub mod edits;
pub mod error;
pub mod eval;
pub mod features;
pub mod lattice;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
