//! Minimal dense tensor arithmetic with a recording tape for reverse-mode
//! automatic differentiation, plus an Adam optimizer.
//!
//! Everything is generic over the element type so that training can run in
//! `f32` while gradient checks run the very same graph in `f64`.

mod error;
pub mod gradcheck;
mod kernels;
mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use kernels::{matmul_nn, matmul_nt, matmul_tn};
pub use optim::{AdamConfig, AdamState};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
