//! Numerical kernels shared by the solver updates: Khatri–Rao products,
//! Gram identities, MTTKRP, Cholesky solves and the orthogonal Procrustes
//! projection.

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

use super::matrix::{axpy, dot, norm2, DenseMatrix};
use super::tensor3::DenseTensor3;

/// Column-wise Kronecker product `B ⊙ A` (`IJ×R` for `B: J×R`, `A: I×R`).
///
/// Column `r` is `b_r ⊗ a_r`, so row `i + I*j` holds `A[i,r]·B[j,r]`.
pub fn khatri_rao<T: Scalar>(b: &DenseMatrix<T>, a: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols() != b.cols() {
        return dim_err(
            "khatri_rao",
            format!("column counts {} and {}", b.cols(), a.cols()),
        );
    }
    let (ni, nj, r) = (a.rows(), b.rows(), a.cols());
    let mut out = DenseMatrix::zeros(ni * nj, r);
    for c in 0..r {
        let (ac, bc) = (a.col(c), b.col(c));
        let dst = out.col_mut(c);
        for j in 0..nj {
            let bj = bc[j];
            for i in 0..ni {
                dst[i + ni * j] = ac[i] * bj;
            }
        }
    }
    Ok(out)
}

/// `(AᵀA) ∗ (BᵀB)`, equal to `(B ⊙ A)ᵀ(B ⊙ A)` without forming the product.
pub fn gram_hadamard<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if a.cols() != b.cols() {
        return dim_err(
            "gram_hadamard",
            format!("column counts {} and {}", a.cols(), b.cols()),
        );
    }
    a.gram().hadamard(&b.gram())
}

/// Matricized tensor times Khatri–Rao product for `mode` in 0..3.
///
/// `f_lo` and `f_hi` are the factors of the two other modes in increasing
/// mode order, and the result is `Y_(mode) (f_hi ⊙ f_lo)`. The Khatri–Rao
/// product itself is never materialized.
pub fn mttkrp<T: Scalar>(
    y: &DenseTensor3<T>,
    f_lo: &DenseMatrix<T>,
    f_hi: &DenseMatrix<T>,
    mode: usize,
) -> Result<DenseMatrix<T>> {
    let (ni, nj, nk) = y.dims();
    let (lo_dim, hi_dim) = match mode {
        0 => (nj, nk),
        1 => (ni, nk),
        2 => (ni, nj),
        _ => return Err(Error::InvalidParameter(format!("mttkrp mode {mode}"))),
    };
    if f_lo.rows() != lo_dim || f_hi.rows() != hi_dim || f_lo.cols() != f_hi.cols() {
        return dim_err(
            "mttkrp",
            format!(
                "tensor {:?}, mode {mode}, factors {:?} and {:?}",
                y.dims(),
                f_lo.shape(),
                f_hi.shape()
            ),
        );
    }
    let r = f_lo.cols();
    let mut tmp = vec![T::zero(); ni];
    match mode {
        0 => {
            // M[:,r] = Σ_k C[k,r] · X_k B[:,r]
            let mut out = DenseMatrix::zeros(ni, r);
            for k in 0..nk {
                let slice = y.slice_values(k);
                for c in 0..r {
                    let ck = f_hi[(k, c)];
                    if ck == T::zero() {
                        continue;
                    }
                    tmp.iter_mut().for_each(|v| *v = T::zero());
                    let bc = f_lo.col(c);
                    for j in 0..nj {
                        axpy(bc[j], &slice[j * ni..(j + 1) * ni], &mut tmp);
                    }
                    axpy(ck, &tmp, out.col_mut(c));
                }
            }
            Ok(out)
        }
        1 => {
            // M[j,r] = Σ_k C[k,r] · ⟨X_k[:,j], A[:,r]⟩
            let mut out = DenseMatrix::zeros(nj, r);
            for k in 0..nk {
                let slice = y.slice_values(k);
                for c in 0..r {
                    let ck = f_hi[(k, c)];
                    if ck == T::zero() {
                        continue;
                    }
                    let ac = f_lo.col(c);
                    let dst = out.col_mut(c);
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d += ck * dot(&slice[j * ni..(j + 1) * ni], ac);
                    }
                }
            }
            Ok(out)
        }
        _ => {
            // M[k,r] = ⟨A[:,r], X_k B[:,r]⟩
            let mut out = DenseMatrix::zeros(nk, r);
            for k in 0..nk {
                let slice = y.slice_values(k);
                for c in 0..r {
                    tmp.iter_mut().for_each(|v| *v = T::zero());
                    let bc = f_hi.col(c);
                    for j in 0..nj {
                        axpy(bc[j], &slice[j * ni..(j + 1) * ni], &mut tmp);
                    }
                    out[(k, c)] = dot(&tmp, f_lo.col(c));
                }
            }
            Ok(out)
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = S`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: DenseMatrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors a symmetric positive definite matrix. Only the lower triangle
    /// of `s` is read.
    pub fn factor(s: &DenseMatrix<T>) -> Result<Self> {
        let n = s.rows();
        if s.cols() != n {
            return dim_err("cholesky_factor", format!("{:?} is not square", s.shape()));
        }
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = s[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: d.to_f64_lossy(),
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            let inv = T::one() / djj;
            for i in j + 1..n {
                let mut v = s[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v * inv;
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &DenseMatrix<T> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `L Lᵀ x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.l.rows();
        debug_assert_eq!(b.len(), n);
        // forward: L y = b, column oriented
        for j in 0..n {
            let col = self.l.col(j);
            b[j] /= col[j];
            let bj = b[j];
            for i in j + 1..n {
                b[i] -= col[i] * bj;
            }
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let col = self.l.col(i);
            let mut v = b[i];
            for k in i + 1..n {
                v -= col[k] * b[k];
            }
            b[i] = v / col[i];
        }
    }

    /// Solves `S X = rhs` column by column.
    pub fn solve(&self, rhs: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if rhs.rows() != self.dim() {
            return dim_err(
                "cholesky_solve",
                format!("factor of order {} vs rhs {:?}", self.dim(), rhs.shape()),
            );
        }
        let mut x = rhs.clone();
        for j in 0..x.cols() {
            self.solve_in_place(x.col_mut(j));
        }
        Ok(x)
    }

    /// Solves `X S = rhs` row by row (`S` symmetric).
    pub fn solve_rows(&self, rhs: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        if rhs.cols() != self.dim() {
            return dim_err(
                "cholesky_solve_rows",
                format!("factor of order {} vs rhs {:?}", self.dim(), rhs.shape()),
            );
        }
        let mut x = rhs.clone();
        let mut buf = vec![T::zero(); self.dim()];
        for i in 0..x.rows() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x[(i, j)];
            }
            self.solve_in_place(&mut buf);
            for (j, &b) in buf.iter().enumerate() {
                x[(i, j)] = b;
            }
        }
        Ok(x)
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub fn cholesky_factor<T: Scalar>(s: &DenseMatrix<T>) -> Result<Cholesky<T>> {
    Cholesky::factor(s)
}

/// Solves `(L Lᵀ) X = rhs`.
pub fn cholesky_solve<T: Scalar>(l: &Cholesky<T>, rhs: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    l.solve(rhs)
}

/// Cholesky factor of `s`, retried with a growing diagonal shift when `s` is
/// numerically singular. Returns the original error if no shift helps.
pub fn cholesky_factor_jittered<T: Scalar>(s: &DenseMatrix<T>) -> Result<Cholesky<T>> {
    match cholesky_factor(s) {
        Ok(l) => Ok(l),
        Err(first) => {
            let n = s.rows().max(1);
            let scale = (s.trace().abs() / T::lit(n as f64)).max(T::one());
            let mut shift = scale * T::epsilon().sqrt();
            for _ in 0..8 {
                let mut t = s.clone();
                for i in 0..s.rows() {
                    t[(i, i)] += shift;
                }
                if let Ok(l) = cholesky_factor(&t) {
                    return Ok(l);
                }
                shift *= T::lit(100.0);
            }
            Err(first)
        }
    }
}

/// Thin singular value decomposition `M = U diag(σ) Vᵀ`.
#[derive(Clone, Debug)]
pub struct ThinSvd<T> {
    pub u: DenseMatrix<T>,
    pub singular_values: Vec<T>,
    pub v: DenseMatrix<T>,
}

/// One-sided Jacobi SVD of a tall matrix (`rows >= cols`).
///
/// Singular values are returned in decreasing order. Left singular vectors
/// belonging to (numerically) zero singular values are completed to an
/// orthonormal set, so `U` always has orthonormal columns even for
/// rank-deficient input. In that case `U` is not unique.
pub fn thin_svd<T: Scalar>(m: &DenseMatrix<T>) -> Result<ThinSvd<T>> {
    let (rows, n) = m.shape();
    if rows < n {
        return dim_err("thin_svd", format!("{:?} has fewer rows than columns", m.shape()));
    }
    let mut u = m.clone();
    let mut v = DenseMatrix::<T>::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(u.col(p), u.col(p));
                let beta = dot(u.col(q), u.col(q));
                let gamma = dot(u.col(p), u.col(q));
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut u, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<T> = (0..n).map(|j| norm2(u.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut u = u.select_columns(&order);
    let v = v.select_columns(&order);
    sigma = order.iter().map(|&j| sigma[j]).collect();

    let smax = sigma.first().copied().unwrap_or(T::zero());
    let cutoff = smax * eps * T::lit((rows.max(n) * 4) as f64);
    let mut rank = 0;
    for j in 0..n {
        if sigma[j] > cutoff && sigma[j] > T::zero() {
            let inv = T::one() / sigma[j];
            u.col_mut(j).iter_mut().for_each(|x| *x *= inv);
            rank += 1;
        } else {
            break;
        }
    }
    if rank < n {
        complete_orthonormal(&mut u, rank);
    }
    Ok(ThinSvd {
        u,
        singular_values: sigma,
        v,
    })
}

fn rotate_columns<T: Scalar>(m: &mut DenseMatrix<T>, p: usize, q: usize, c: T, s: T) {
    let rows = m.rows();
    let vals = m.values_mut();
    let (left, right) = vals.split_at_mut(q * rows);
    let cp = &mut left[p * rows..(p + 1) * rows];
    let cq = &mut right[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Replaces columns `start..` of `u` by unit vectors orthogonal to all
/// earlier columns (Gram–Schmidt on the canonical basis).
fn complete_orthonormal<T: Scalar>(u: &mut DenseMatrix<T>, start: usize) {
    let (rows, n) = u.shape();
    let mut next_basis = 0;
    for j in start..n {
        loop {
            let mut cand = vec![T::zero(); rows];
            cand[next_basis % rows] = T::one();
            next_basis += 1;
            for _ in 0..2 {
                for p in 0..j {
                    let proj = dot(u.col(p), &cand);
                    axpy(-proj, u.col(p), &mut cand);
                }
            }
            let nrm = norm2(&cand);
            if nrm > T::lit(0.5) {
                let inv = T::one() / nrm;
                for (d, c) in u.col_mut(j).iter_mut().zip(&cand) {
                    *d = *c * inv;
                }
                break;
            }
            assert!(next_basis < 2 * rows + n, "orthonormal completion failed");
        }
    }
}

/// `S^{-1/2}` of a symmetric positive semidefinite `S`, or `None` when the
/// eigenvalue ratio is below `1e-8`.
pub(crate) fn inv_sqrt_spd<T: Scalar>(s: &DenseMatrix<T>) -> Result<Option<DenseMatrix<T>>> {
    let eig = thin_svd(s)?;
    let lam = &eig.singular_values;
    match (lam.first(), lam.last()) {
        (Some(&hi), Some(&lo)) if hi > T::zero() && lo > hi * T::lit(1e-8) => {
            let mut vs = eig.v.clone();
            vs.scale_columns(&lam.iter().map(|&l| T::one() / l.sqrt()).collect::<Vec<_>>());
            Ok(Some(vs.matmul_t(&eig.v)?))
        }
        _ => Ok(None),
    }
}

/// Solves `max trace(Pᵀ M)` subject to `PᵀP = I`, returning `P = U Vᵀ` from
/// the thin SVD of `M` (`J×R`, `J >= R`).
///
/// For rank-deficient `M` the maximizer is not unique; the returned `P` is
/// one valid choice with exactly orthonormal columns.
pub fn procrustes_orthogonal<T: Scalar>(m: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if m.rows() < m.cols() {
        return dim_err("procrustes_orthogonal", format!("{}x{} has fewer rows than columns", m.rows(), m.cols()));
    }
    // Well-conditioned M: polar factor M (MᵀM)^{-1/2} from the small Gram,
    // polished by one Newton–Schulz step.
    if let Some(w) = inv_sqrt_spd(&m.gram())? {
        let p = m.matmul(&w)?;
        let mut corr = p.gram().scaled(-T::lit(0.5));
        for i in 0..corr.rows() {
            corr[(i, i)] += T::lit(1.5);
        }
        return p.matmul(&corr);
    }
    let svd = thin_svd(m)?;
    svd.u.matmul_t(&svd.v)
}

/// Solves the banded symmetric positive definite system `S x = b` for every
/// column of `rhs`, where `S` has half-bandwidth `bw` (entries with
/// `|i-j| > bw` are ignored).
pub(crate) fn banded_spd_solve<T: Scalar>(
    s: impl Fn(usize, usize) -> T,
    n: usize,
    bw: usize,
    rhs: &mut DenseMatrix<T>,
) -> Result<()> {
    // band storage: l[i][d] = L[i, i-d] for d in 0..=bw
    let w = bw + 1;
    let mut l = vec![T::zero(); n * w];
    for i in 0..n {
        let jlo = i.saturating_sub(bw);
        for j in jlo..=i {
            let mut v = s(i, j);
            let klo = jlo.max(j.saturating_sub(bw));
            for k in klo..j {
                v -= l[i * w + (i - k)] * l[j * w + (j - k)];
            }
            if i == j {
                if !(v > T::zero()) {
                    return Err(Error::NotPositiveDefinite {
                        pivot: i,
                        value: v.to_f64_lossy(),
                    });
                }
                l[i * w] = v.sqrt();
            } else {
                l[i * w + (i - j)] = v / l[j * w];
            }
        }
    }
    for c in 0..rhs.cols() {
        let b = rhs.col_mut(c);
        for i in 0..n {
            let mut v = b[i];
            for k in i.saturating_sub(bw)..i {
                v -= l[i * w + (i - k)] * b[k];
            }
            b[i] = v / l[i * w];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                v -= l[k * w + (k - i)] * b[k];
            }
            b[i] = v / l[i * w];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    type M = DenseMatrix<f64>;

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> M {
        M::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_orthonormal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> M {
        let g = randn(rng, r, c);
        let svd = thin_svd(&g).unwrap();
        svd.u
    }

    #[test]
    fn khatri_rao_trivial_cases() {
        let b = M::from_rows(&[[1.0], [0.0]]);
        let a = M::from_rows(&[[1.0], [1.0]]);
        let kr = khatri_rao(&b, &a).unwrap();
        assert_eq!(kr.values(), &[1.0, 1.0, 0.0, 0.0]);

        let i2 = M::identity(2);
        let kr = khatri_rao(&i2, &i2).unwrap();
        assert_eq!(kr.col(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kr.col(1), &[0.0, 0.0, 0.0, 1.0]);

        assert!(khatri_rao(&M::zeros(3, 2), &M::zeros(3, 3)).is_err());
    }

    #[test]
    fn khatri_rao_matches_naive_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = randn(&mut rng, 3, 2);
        let a = randn(&mut rng, 4, 2);
        let kr = khatri_rao(&b, &a).unwrap();
        for r in 0..2 {
            let mut kron = Vec::new();
            for j in 0..3 {
                for i in 0..4 {
                    kron.push(b[(j, r)] * a[(i, r)]);
                }
            }
            assert_eq!(kr.col(r), kron.as_slice());
        }
    }

    #[test]
    fn gram_hadamard_cases() {
        let i2 = M::identity(2);
        assert_eq!(gram_hadamard(&i2, &i2).unwrap(), i2);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = randn(&mut rng, 5, 3);
        let bk = randn(&mut rng, 4, 3);
        let explicit = khatri_rao(&bk, &a).unwrap().gram();
        let fast = gram_hadamard(&a, &bk).unwrap();
        assert!(fast.max_abs_diff(&explicit).unwrap() < 1e-10);

        a.col_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let g = gram_hadamard(&a, &bk).unwrap();
        for j in 0..3 {
            assert_eq!(g[(1, j)], 0.0);
            assert_eq!(g[(j, 1)], 0.0);
        }
    }

    #[test]
    fn mttkrp_trivial_cases() {
        let y = DenseTensor3::<f64>::zeros((2, 3, 4));
        let out = mttkrp(&y, &M::filled(3, 2, 1.0), &M::filled(4, 2, 1.0), 0).unwrap();
        assert_eq!(out, M::zeros(2, 2));

        let ones = DenseTensor3::from_fn((2, 2, 2), |_, _, _| 1.0);
        let f = M::filled(2, 1, 1.0);
        let out = mttkrp(&ones, &f, &f, 0).unwrap();
        assert_eq!(out, M::filled(2, 1, 4.0));

        assert!(mttkrp(&ones, &M::filled(3, 1, 1.0), &f, 0).is_err());
    }

    #[test]
    fn mttkrp_matches_unfolding_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ni, nj, nk, r) = (3, 4, 5, 2);
        let y = DenseTensor3::from_fn((ni, nj, nk), |_, _, _| rng.sample(StandardNormal));
        let fs = [randn(&mut rng, ni, r), randn(&mut rng, nj, r), randn(&mut rng, nk, r)];
        for mode in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&m| m != mode).collect();
            let (lo, hi) = (&fs[others[0]], &fs[others[1]]);
            let naive = y.unfold(mode).unwrap().matmul(&khatri_rao(hi, lo).unwrap()).unwrap();
            let fast = mttkrp(&y, lo, hi, mode).unwrap();
            let rel = fast.distance(&naive).unwrap() / naive.frobenius_norm();
            assert!(rel < 1e-12, "mode {mode}: {rel}");
        }
    }

    #[test]
    fn cholesky_cases() {
        let l = cholesky_factor(&M::identity(2).scaled(4.0)).unwrap();
        assert_eq!(*l.lower(), M::identity(2).scaled(2.0));

        let s = M::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let l = cholesky_factor(&s).unwrap();
        let rec = l.lower().matmul_t(l.lower()).unwrap();
        assert!(rec.max_abs_diff(&s).unwrap() < 1e-12);

        let indefinite = M::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            cholesky_factor(&indefinite),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn cholesky_solve_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rhs = randn(&mut rng, 3, 2);
        let id = cholesky_factor(&M::identity(3)).unwrap();
        assert_eq!(cholesky_solve(&id, &rhs).unwrap(), rhs);

        let g = randn(&mut rng, 6, 3);
        let s = g.gram().add(&M::identity(3).scaled(0.1)).unwrap();
        let l = cholesky_factor(&s).unwrap();
        let x = cholesky_solve(&l, &rhs).unwrap();
        let res = s.matmul(&x).unwrap().distance(&rhs).unwrap() / rhs.frobenius_norm();
        assert!(res < 1e-8);
        assert_eq!(cholesky_solve(&l, &M::zeros(3, 2)).unwrap(), M::zeros(3, 2));

        let xr = l.solve_rows(&rhs.transpose()).unwrap();
        assert!(xr.matmul(&s).unwrap().distance(&rhs.transpose()).unwrap() < 1e-10);
        assert!(cholesky_solve(&l, &M::zeros(4, 1)).is_err());
    }

    #[test]
    fn procrustes_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_orthonormal(&mut rng, 5, 2);
        let p = procrustes_orthogonal(&q).unwrap();
        assert!(p.max_abs_diff(&q).unwrap() < 1e-12);

        let p = procrustes_orthogonal(&M::identity(2).scaled(3.0)).unwrap();
        assert!(p.max_abs_diff(&M::identity(2)).unwrap() < 1e-14);
    }

    #[test]
    fn procrustes_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = randn(&mut rng, 5, 2);
        let p = procrustes_orthogonal(&m).unwrap();
        let best = p.inner(&m).unwrap();
        for _ in 0..10_000 {
            let q = random_orthonormal(&mut rng, 5, 2);
            assert!(q.inner(&m).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn svd_handles_rank_deficiency() {
        let m = M::from_rows(&[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 0.0], [1.0, 2.0, 0.0]]);
        let svd = thin_svd(&m).unwrap();
        let utu = svd.u.gram();
        assert!(utu.max_abs_diff(&M::identity(3)).unwrap() < 1e-12);
        let mut us = svd.u.clone();
        us.scale_columns(&svd.singular_values);
        let rec = us.matmul_t(&svd.v).unwrap();
        assert!(rec.max_abs_diff(&m).unwrap() < 1e-12);
        let p = procrustes_orthogonal(&M::zeros(4, 2)).unwrap();
        assert!(p.gram().max_abs_diff(&M::identity(2)).unwrap() < 1e-12);
    }

    #[test]
    fn banded_solve_matches_dense() {
        let n = 7;
        let s = |i: usize, j: usize| -> f64 {
            if i == j {
                3.0
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        };
        let dense = M::from_fn(n, n, s);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rhs = randn(&mut rng, n, 2);
        let mut x = rhs.clone();
        banded_spd_solve(s, n, 1, &mut x).unwrap();
        let expect = cholesky_factor(&dense).unwrap().solve(&rhs).unwrap();
        assert!(x.max_abs_diff(&expect).unwrap() < 1e-12);
    }
}
