//! Small reverse-mode differentiable numeric core.
//!
//! Only the primitives the detection model needs are provided. Each has a
//! forward rule and a hand-written backward rule, checked against central
//! finite differences in the tests below.

mod gradcheck;
pub mod kernels;
mod param;
mod sparse;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, probe_weights};
pub use param::{ParamId, ParamStore, Parameter};
pub use sparse::Csr;
pub use tape::{top_k_indices, Activation, Gradients, Tape, Var, PROB_EPS};
pub use tensor::Tensor;
