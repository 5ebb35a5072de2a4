//! Dense tensors, a reverse-mode tape and first-order optimizers.

pub mod check;
pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use check::{finite_diff_grad, relative_error};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Gradients, Graph, Var};
pub use tensor::Tensor;
