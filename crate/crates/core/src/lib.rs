//! Alternating optimization with ADMM inner solvers for constrained, linearly
//! coupled matrix, CP and PARAFAC2 factorizations.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`, which the default tolerances assume.

pub mod admm;
pub mod config;
pub mod driver;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod prox;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::DenseMatrix<f64>;
pub type Tensor3 = tensor::DenseTensor3<f64>;
pub type Ragged = tensor::RaggedTensor<f64>;
pub type Dataset = model::Dataset<f64>;
pub type Model = model::ModelSpec<f64>;
pub type Decomposition = model::DecompositionSpec<f64>;
pub type Coupling = model::CouplingSpec<f64>;
pub type Factors = model::Factors<f64>;
pub type FactorSet = model::FactorSet<f64>;
pub type Regularizer = prox::Regularizer<f64>;
pub type Settings = driver::OuterSettings<f64>;
pub type InnerSettings = admm::AdmmSettings<f64>;
pub type RunReport = driver::RunReport<f64>;
pub type MultiStartReport = driver::MultiStartReport<f64>;
pub type SolverState = admm::SolverState<f64>;
pub type SynthData = synth::SynthData<f64>;
