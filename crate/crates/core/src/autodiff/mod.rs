//! Dense tensors and a reverse-mode gradient tape.

pub mod checkpoint;
pub mod gradcheck;
pub mod opcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use opcheck::{op_suite, OpCheck};
pub use params::ParamSet;
pub use tape::{Gradients, OpKind, Tape};
pub use tensor::{NodeRef, Tensor};
