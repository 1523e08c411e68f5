//! Minimal reverse-mode autodiff for the mesh autoencoder.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Graph, Var};
pub use params::{NamedTensor, ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use tensor::gemm;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
