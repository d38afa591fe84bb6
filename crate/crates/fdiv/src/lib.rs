//! File formats, synthetic generators and the experiment harness around `fdiv-core`.

mod error;
pub mod formats;
pub mod generators;
pub mod harness;

pub use error::{FdivError, Result};
