use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

use super::matrix::DenseMatrix;
use super::tensor3::DenseTensor3;

/// `K` frontal slices `X_k` of size `I×J_k` sharing the row dimension `I`.
#[derive(Clone, Debug, PartialEq)]
pub struct RaggedTensor<T> {
    slices: Vec<DenseMatrix<T>>,
}

impl<T: Scalar> RaggedTensor<T> {
    pub fn new(slices: Vec<DenseMatrix<T>>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidParameter("ragged tensor needs K >= 1 slices".into()))?;
        let rows = first.rows();
        if let Some((k, s)) = slices.iter().enumerate().find(|(_, s)| s.rows() != rows) {
            return dim_err(
                "RaggedTensor::new",
                format!("slice {k} has {} rows, expected {rows}", s.rows()),
            );
        }
        Ok(Self { slices })
    }

    #[inline]
    pub fn slices(&self) -> &[DenseMatrix<T>] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [DenseMatrix<T>] {
        &mut self.slices
    }

    #[inline]
    pub fn slice(&self, k: usize) -> &DenseMatrix<T> {
        &self.slices[k]
    }

    /// Shared row count `I`.
    #[inline]
    pub fn rows(&self) -> usize {
        self.slices[0].rows()
    }

    /// Number of slices `K`.
    #[inline]
    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn slice_widths(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.cols()).collect()
    }

    pub fn frobenius_norm_sq(&self) -> T {
        self.slices.iter().map(|s| s.frobenius_norm_sq()).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn scale_mut(&mut self, alpha: T) {
        self.slices.iter_mut().for_each(|s| s.scale_mut(alpha));
    }

    pub fn is_finite(&self) -> bool {
        self.slices.iter().all(|s| s.is_finite())
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.slices.iter().flat_map(|s| s.values().iter().copied())
    }

    /// Builds the slices `A diag(C[k,:]) B_kᵀ`.
    pub fn from_parafac2(
        a: &DenseMatrix<T>,
        b: &[DenseMatrix<T>],
        c: &DenseMatrix<T>,
    ) -> Result<Self> {
        if b.len() != c.rows() {
            return dim_err(
                "RaggedTensor::from_parafac2",
                format!("{} B_k slices but C has {} rows", b.len(), c.rows()),
            );
        }
        let slices = b
            .iter()
            .enumerate()
            .map(|(k, bk)| {
                let mut scaled = bk.clone();
                scaled.scale_columns(&c.row(k));
                a.matmul_t(&scaled)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(slices)
    }

    /// Stacks the slices into a dense tensor when all widths agree.
    pub fn to_dense(&self) -> Result<DenseTensor3<T>> {
        DenseTensor3::from_slices(&self.slices)
    }
}

impl<T: Scalar> From<&DenseTensor3<T>> for RaggedTensor<T> {
    fn from(t: &DenseTensor3<T>) -> Self {
        Self {
            slices: t.frontal_slices(),
        }
    }
}
