//! Dense tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::gradcheck;
pub use tape::{BackwardFn, Tape, Var, NORM_FLOOR};
pub use tensor::Tensor;

pub(crate) use tape::{matmul_raw, norm};
