//! Dense reverse-mode differentiation and the Adam optimizer.
//!
//! Values are `f64` throughout. Build a [`Graph`] per forward pass, register
//! parameters with [`Graph::param`], and call [`Graph::backward`] on a scalar.

mod graph;
pub mod gradcheck;
pub mod optim;
pub mod tensor;

pub use gradcheck::grad_check;
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use optim::{Adam, Schedule};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("gradient check failed: {0}")]
    Check(String),
}

pub type Result<T> = std::result::Result<T, AutogradError>;
