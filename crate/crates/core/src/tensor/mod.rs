//! Dense containers and numerical kernels.

mod kernels;
mod matrix;
mod ragged;
mod tensor3;

pub use kernels::{
    cholesky_factor, cholesky_factor_jittered, cholesky_solve, gram_hadamard, khatri_rao, mttkrp, procrustes_orthogonal,
    thin_svd, Cholesky, ThinSvd,
};
pub(crate) use kernels::{banded_spd_solve, inv_sqrt_spd};
pub use matrix::DenseMatrix;
pub(crate) use matrix::{axpy, dot, norm2};
pub use ragged::RaggedTensor;
pub use tensor3::DenseTensor3;
