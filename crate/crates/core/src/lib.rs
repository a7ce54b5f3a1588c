pub mod data;
pub mod error;
pub mod harness;
pub mod initkit;
pub mod metrics;
pub mod netlab;
pub mod nn;
pub mod probes;
pub mod trainbench;

pub use error::{Error, Result};
