pub mod cli;
pub mod coupling;
pub mod density;
pub mod distributions;
pub mod error;
pub mod field;
pub mod fixtures;
pub mod hrf;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod sampler;

pub use error::{Error, Result};
