//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix; vectors are `1 x n` rows and
//! scalars are `1 x 1`. A [`Graph`] records operations eagerly, and
//! [`Graph::backward`] walks the tape in reverse to produce [`Gradients`].
//! Trainable weights live in a [`ParamStore`] and enter a graph through
//! [`Graph::param`], so gradients can be routed back to them by id.

mod check;
mod graph;
mod optim;
mod params;

pub use check::{check_gradients, check_param_gradients, numerical_gradient, relative_error, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_global_norm, Adafactor, AdafactorConfig, LinearWarmup, Sgd};
pub use params::{ParamGroup, ParamId, ParamStore};

pub use ndarray;

/// Dense matrix type used throughout the tape.
pub type Mat = ndarray::Array2<f64>;

#[derive(Debug, thiserror::Error)]
pub enum GradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("gradient check failed for input {input}: relative error {rel_err:e} exceeds {tol:e}")]
    GradCheck { input: usize, rel_err: f64, tol: f64 },
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NotScalar((usize, usize)),
}

pub type Result<T> = std::result::Result<T, GradError>;
