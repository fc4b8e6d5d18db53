//! From-scratch neural building blocks.
//!
//! Everything is generic over [`Real`] so the runtime f32 networks and
//! the f64 copies used for finite-difference gradient checking share one
//! implementation. All kernels are single-threaded with a fixed reduction
//! order, so identical inputs give bit-identical outputs run to run.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod matrix;
pub mod nets;
pub mod optim;

use thiserror::Error;

/// Scalar type for network math.
pub trait Real:
    num_traits::Float + num_traits::NumAssign + Default + std::fmt::Debug + std::fmt::Display + 'static
{
    /// Lossy conversion from f64 (used for hyperparameter constants).
    fn from_f64(v: f64) -> Self {
        num_traits::cast(v).expect("finite constant")
    }

    fn to_f64(self) -> f64 {
        num_traits::cast(self).expect("finite value")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("BatchTooSmallForTrainMode: got {rows} row(s), need at least 2 for batch statistics")]
    BatchTooSmallForTrainMode { rows: usize },
}
