//! Minimal reverse-mode automatic differentiation over scalar graphs,
//! dense MLP evaluation, the Adam optimizer, and a finite-difference
//! gradient checker.

mod adam;
mod fd;
mod mlp;
mod scalar;
mod tape;

pub use adam::{adam_step, AdamState, NonFiniteGrad};
pub use fd::{finite_diff_check, FdReport};
pub use mlp::{Head, LayoutBuilder, Mlp, MlpScratch};
pub use scalar::Scalar;
pub use tape::{OpKind, Tape, Var};
