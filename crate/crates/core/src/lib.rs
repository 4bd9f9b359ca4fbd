//! Explicit model predictive control with an encoder-only transformer policy.
//!
//! The policy maps the current state and an `N`-step reference window to the
//! whole `N`-step control sequence in one forward pass. It is trained by
//! differentiating the finite-horizon cost through the plant model with a
//! reverse-mode tape, and checked against a numerical horizon optimizer.

pub mod autodiff;
pub mod checks;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod models;
pub mod oracle;
pub mod policy;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type ParamSet64 = autodiff::ParamSet<f64>;
pub type ReferenceWindow64 = models::ReferenceWindow<f64>;
pub type ControlSequence64 = models::ControlSequence<f64>;
