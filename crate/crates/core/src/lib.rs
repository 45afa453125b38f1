pub mod dataset;
pub mod error;
pub mod imagecore;
pub mod metrics;
pub mod pipeline;
pub mod ttsr;

pub use error::{Error, Result};
