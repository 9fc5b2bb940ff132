use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

use super::matrix::DenseMatrix;

/// Dense third-order tensor in Kolda–Bader (first index fastest) layout.
///
/// Entry `(i, j, k)` lives at `values[i + I*j + I*J*k]`. Frontal slice `k`
/// is therefore a contiguous column-major `I×J` matrix and the mode-1
/// unfolding `X_(1)` (columns indexed by `j + J*k`) shares the same memory.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor3<T> {
    dims: (usize, usize, usize),
    values: Vec<T>,
}

impl<T: Scalar> DenseTensor3<T> {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            values: vec![T::zero(); dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_values(dims: (usize, usize, usize), values: Vec<T>) -> Result<Self> {
        if values.len() != dims.0 * dims.1 * dims.2 {
            return dim_err(
                "DenseTensor3::from_values",
                format!("{} values for dims {:?}", values.len(), dims),
            );
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for k in 0..dims.2 {
            for j in 0..dims.1 {
                for i in 0..dims.0 {
                    values.push(f(i, j, k));
                }
            }
        }
        Self { dims, values }
    }

    /// Stacks equally sized frontal slices.
    pub fn from_slices(slices: &[DenseMatrix<T>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidParameter("no slices".into()))?;
        let (i, j) = first.shape();
        let mut values = Vec::with_capacity(i * j * slices.len());
        for (k, s) in slices.iter().enumerate() {
            if s.shape() != (i, j) {
                return dim_err(
                    "DenseTensor3::from_slices",
                    format!("slice {k} is {:?}, expected {:?}", s.shape(), (i, j)),
                );
            }
            values.extend_from_slice(s.values());
        }
        Ok(Self {
            dims: (i, j, slices.len()),
            values,
        })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        let (ni, nj, _) = self.dims;
        self.values[i + ni * (j + nj * k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let (ni, nj, _) = self.dims;
        self.values[i + ni * (j + nj * k)] = v;
    }

    /// Contiguous view of frontal slice `k` (column-major `I×J`).
    #[inline]
    pub fn slice_values(&self, k: usize) -> &[T] {
        let s = self.dims.0 * self.dims.1;
        &self.values[k * s..(k + 1) * s]
    }

    pub fn frontal_slice(&self, k: usize) -> DenseMatrix<T> {
        DenseMatrix::from_col_major(self.dims.0, self.dims.1, self.slice_values(k).to_vec())
            .expect("slice shape")
    }

    pub fn frontal_slices(&self) -> Vec<DenseMatrix<T>> {
        (0..self.dims.2).map(|k| self.frontal_slice(k)).collect()
    }

    /// Mode-`n` unfolding (`n` in 0..3) with Kolda–Bader column ordering.
    pub fn unfold(&self, mode: usize) -> Result<DenseMatrix<T>> {
        let (ni, nj, nk) = self.dims;
        match mode {
            0 => DenseMatrix::from_col_major(ni, nj * nk, self.values.clone()),
            1 => Ok(DenseMatrix::from_fn(nj, ni * nk, |j, c| {
                self.get(c % ni, j, c / ni)
            })),
            2 => Ok(DenseMatrix::from_fn(nk, ni * nj, |k, c| {
                self.get(c % ni, c / ni, k)
            })),
            _ => Err(Error::InvalidParameter(format!("mode {mode} of a 3-way tensor"))),
        }
    }

    pub fn frobenius_norm_sq(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn scale_mut(&mut self, alpha: T) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Builds `⟦F0, F1, F2⟧ = Σ_r f0_r ∘ f1_r ∘ f2_r`.
    pub fn from_cp(f0: &DenseMatrix<T>, f1: &DenseMatrix<T>, f2: &DenseMatrix<T>) -> Result<Self> {
        let r = f0.cols();
        if f1.cols() != r || f2.cols() != r {
            return dim_err(
                "DenseTensor3::from_cp",
                format!("ranks {}, {}, {}", r, f1.cols(), f2.cols()),
            );
        }
        let dims = (f0.rows(), f1.rows(), f2.rows());
        let mut out = Self::zeros(dims);
        let slice_len = dims.0 * dims.1;
        // slice k = F0 diag(F2[k,:]) F1ᵀ
        for k in 0..dims.2 {
            let mut scaled = f1.clone();
            scaled.scale_columns(&f2.row(k));
            let s = f0.matmul_t(&scaled)?;
            out.values[k * slice_len..(k + 1) * slice_len].copy_from_slice(s.values());
        }
        Ok(out)
    }
}
