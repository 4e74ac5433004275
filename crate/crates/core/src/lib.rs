pub mod cli;
pub mod coarse;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod losses;
pub mod pipeline;
pub mod refine;
pub mod render;

pub use error::{Error, Result};
