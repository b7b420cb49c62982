//! Query-conditioned target sound extraction with a shared-trunk event
//! classifier whose clip-level predictions refine the query at inference time.

pub mod audio;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod float;
pub mod metrics;
pub mod model;
pub mod query;
pub mod refinement;
pub mod synthesis;
pub mod training;

pub use audio::{AudioClip, SAMPLE_RATE};
pub use error::{Result, TseError};
pub use query::Query;
