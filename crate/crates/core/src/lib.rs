pub mod acquisition;
pub mod error;
pub mod explain;
mod linalg;
pub mod orchestrator;
pub mod preference;
pub mod rng;
pub mod task;
pub mod tnp;

pub use error::{Error, Result};
