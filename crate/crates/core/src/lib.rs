//! Heterogeneous multi-agent trajectory forecasting with risk graphs and
//! grammar-aligned scene graphs.

pub mod bezier;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod hrg;
pub mod hsg;
pub mod model;
pub mod nn;
pub mod patterns;

pub use error::{Error, Result};
