//! Tensors, differentiable kernels, the autodiff tape, optimizers, and
//! checkpoint serialization.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod tensor;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use optim::{Optimizer, OptimizerKind, Parameter};
pub use tensor::Tensor;
