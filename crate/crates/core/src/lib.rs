pub mod ats;
pub mod backends;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod eval;
pub mod error;
pub mod knowledge;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod router;
pub mod trace;
pub mod verification;

pub use error::{Error, Result};
