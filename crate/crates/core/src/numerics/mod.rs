//! Dense tensors, a small reverse-mode tape, RMSProp and a finite-difference checker.

pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod store;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckReport, ParamCheck};
pub use kernels::{activation, conv2d, fc, Activation, Padding};
pub use optim::{rmsprop_step, OptimizerConfig};
pub use store::{ParamId, Parameter, ParameterStore};
pub use tape::{kl_divergence, NodeId, Tape};
pub use tensor::{Scalar, Tensor};
