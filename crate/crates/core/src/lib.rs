pub mod bpref;
pub mod cli;
pub mod costmeter;
pub mod data;
pub mod error;
pub mod ffcore;
pub mod metrics;
mod linalg;
pub mod qtensor;
pub mod rng;

pub use error::{Error, Result};
