pub mod env;
pub mod error;
pub mod eval;
pub mod io;
pub mod curation;
pub mod policy;
pub mod rollout;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
