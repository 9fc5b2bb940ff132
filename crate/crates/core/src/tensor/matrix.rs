use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Dense real matrix stored in column-major order.
///
/// Entry `(i, j)` lives at `values[i + rows * j]`, so every column is a
/// contiguous slice. All kernels in this crate are written against that
/// layout.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    /// Builds a matrix from column-major values.
    pub fn from_col_major(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != rows * cols {
            return dim_err(
                "DenseMatrix::from_col_major",
                format!("{} values for a {rows}x{cols} matrix", values.len()),
            );
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from a list of rows. Panics on ragged input; meant for
    /// literals in tests and configuration.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        assert!(
            rows.iter().all(|r| r.as_ref().len() == m),
            "from_rows: ragged rows"
        );
        Self::from_fn(n, m, |i, j| rows[i].as_ref()[j])
    }

    /// Diagonal matrix with the given entries.
    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[T] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        let r = self.rows;
        &mut self.values[j * r..(j + 1) * r]
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    pub fn set_row(&mut self, i: usize, row: &[T]) {
        debug_assert_eq!(row.len(), self.cols);
        for (j, &v) in row.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return dim_err(
                "matmul",
                format!("{:?} * {:?}", self.shape(), other.shape()),
            );
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.values[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == T::zero() {
                    continue;
                }
                axpy(b, self.col(k), dst);
            }
        }
        Ok(out)
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return dim_err(
                "t_matmul",
                format!("{:?}ᵀ * {:?}", self.shape(), other.shape()),
            );
        }
        Ok(Self::from_fn(self.cols, other.cols, |i, j| {
            dot(self.col(i), other.col(j))
        }))
    }

    /// `self * otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return dim_err(
                "matmul_t",
                format!("{:?} * {:?}ᵀ", self.shape(), other.shape()),
            );
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for j in 0..other.rows {
            let dst = &mut out.values[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other[(j, k)];
                if b == T::zero() {
                    continue;
                }
                axpy(b, self.col(k), dst);
            }
        }
        Ok(out)
    }

    /// `selfᵀ * self`.
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.col(i), self.col(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return dim_err(op, format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        axpy(alpha, &other.values, &mut self.values);
        Ok(())
    }

    pub fn scaled(&self, alpha: T) -> Self {
        self.map(|v| v * alpha)
    }

    pub fn scale_mut(&mut self, alpha: T) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Multiplies column `j` by `scales[j]`.
    pub fn scale_columns(&mut self, scales: &[T]) {
        debug_assert_eq!(scales.len(), self.cols);
        for (j, &s) in scales.iter().enumerate() {
            self.col_mut(j).iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn column_norms(&self) -> Vec<T> {
        (0..self.cols).map(|j| norm2(self.col(j))).collect()
    }

    /// Scales every nonzero column to unit ℓ2 norm and returns the old norms.
    pub fn normalize_columns(&mut self) -> Vec<T> {
        let norms = self.column_norms();
        for (j, &n) in norms.iter().enumerate() {
            if n > T::zero() {
                self.col_mut(j).iter_mut().for_each(|v| *v /= n);
            }
        }
        norms
    }

    pub fn frobenius_norm_sq(&self) -> T {
        dot(&self.values, &self.values)
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "inner")?;
        Ok(dot(&self.values, &other.values))
    }

    /// `‖self − other‖_F`.
    pub fn distance(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    pub fn copy_from(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        self.values.copy_from_slice(&other.values);
    }

    /// Selects the given columns in order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.rows * cols.len());
        for &j in cols {
            values.extend_from_slice(self.col(j));
        }
        Self {
            rows: self.rows,
            cols: cols.len(),
            values,
        }
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .map(|v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.values[i + self.rows * j]
    }
}

impl<T> IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.values[i + self.rows * j]
    }
}

impl<T: fmt::Debug> fmt::Debug for DenseMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(12) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                write!(f, "{:>12.5?} ", self.values[i + self.rows * j])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn norm2<T: Scalar>(x: &[T]) -> T {
    dot(x, x).sqrt()
}
