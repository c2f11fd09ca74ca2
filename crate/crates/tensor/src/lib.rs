//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every forward operator is a method on [`Tape`] and records enough state
//! for a single backward pass. Learnable weights live in a [`ParamStore`] and
//! are bound onto a fresh tape per forward pass through a [`Session`].

mod backward;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
mod params;
mod tape;

pub use checkpoint::Container;
pub use error::{Result, TensorError};
pub use ops::{BatchNormMode, BatchStats};
pub use optim::{Adam, StepDecay};
pub use params::{ParamStore, Session, Tensor};
pub use tape::{Tape, Var};
