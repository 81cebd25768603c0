//! Dense and sparse matrices, the gradient tape, and the Adam updater.

mod adam;
mod dense;
pub mod gradcheck;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamState};
pub use dense::{dot, DenseMatrix};
pub use gradcheck::finite_diff_check;
pub use sparse::SparseCsr;
pub use tape::{activation, sigmoid, Activation, Function, Gradients, SparseOperand, Tape, Var};
