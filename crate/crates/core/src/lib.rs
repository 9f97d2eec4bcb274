//! Piecewise space-filling curves learned with a bit merging tree.

pub mod bmtree;
pub mod cost_model;
pub mod drift;
pub mod error;
pub mod index_bench;
pub mod learner;
pub mod sfc;
pub mod workload;

pub use error::{Error, Result};
