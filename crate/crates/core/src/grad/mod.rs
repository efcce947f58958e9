//! Reverse-mode differentiation over dense `f64` arrays and the ADAM optimizer.

mod adam;
mod real;
mod tape;
pub(crate) use tape::gemm;
mod tensor;

pub use adam::AdamState;
pub use real::Real;
pub use tape::{concat_cols, concat_rows, sigmoid, Tape, Var};
pub use tensor::Tensor;
