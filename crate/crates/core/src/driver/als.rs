//! Unconstrained PARAFAC2-ALS: alternate the `K` Procrustes problems for
//! `P_k` with one CP-ALS sweep on the projected tensor `Y_k = X_k P_k`.

use crate::error::{Error, Result};
use crate::model::{random_factor, seeded_rng, Factors};
use crate::scalar::Scalar;
use crate::tensor::{cholesky_factor_jittered, mttkrp, procrustes_orthogonal, DenseMatrix, DenseTensor3, RaggedTensor};

use super::{start_seed, OuterSettings};

#[derive(Clone, Debug)]
pub struct AlsReport<T> {
    pub factors: Factors<T>,
    /// `Σ_k ‖X_k − A D_k B_kᵀ‖²` at termination.
    pub loss: T,
    pub iterations: usize,
    pub start: usize,
}

/// Best of `settings.n_starts` PARAFAC2-ALS runs (lowest loss).
///
/// Each run stops when the loss changes by less than `outer_abs_tol` or by
/// less than `outer_rel_tol` relative, or after `max_outer_iters` sweeps.
pub fn parafac2_als_baseline<T: Scalar>(
    x: &RaggedTensor<T>,
    rank: usize,
    settings: &OuterSettings<T>,
) -> Result<AlsReport<T>> {
    let min_width = x.slice_widths().into_iter().min().unwrap_or(0);
    if rank == 0 || rank > x.rows() || rank > min_width {
        return Err(Error::InvalidParameter(format!(
            "rank {rank} must be in 1..=min(I = {}, min J_k = {min_width})",
            x.rows()
        )));
    }
    let mut best: Option<AlsReport<T>> = None;
    for s in 0..settings.n_starts.max(1) {
        let run = als_run(x, rank, settings, s)?;
        if best.as_ref().is_none_or(|b| run.loss < b.loss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

fn als_run<T: Scalar>(x: &RaggedTensor<T>, r: usize, settings: &OuterSettings<T>, start: usize) -> Result<AlsReport<T>> {
    let mut rng = seeded_rng(start_seed(settings.seed, start));
    let k = x.num_slices();
    let mut a: DenseMatrix<T> = random_factor(&mut rng, x.rows(), r, false);
    let mut delta = DenseMatrix::<T>::identity(r);
    let mut c = DenseMatrix::<T>::filled(k, r, T::one());
    let x_norm_sq = x.frobenius_norm_sq();

    let mut p: Vec<DenseMatrix<T>> = Vec::with_capacity(k);
    let mut prev = T::infinity();
    let mut loss = T::infinity();
    let mut iterations = 0;
    for it in 1..=settings.max_outer_iters.max(1) {
        iterations = it;
        // P_k = argmax trace(P_kᵀ X_kᵀ A D_k Δᵀ)
        p.clear();
        for (kk, xk) in x.slices().iter().enumerate() {
            let mut adk = a.clone();
            adk.scale_columns(&c.row(kk));
            p.push(procrustes_orthogonal(&xk.t_matmul(&adk)?.matmul_t(&delta)?)?);
        }
        let ys: Vec<DenseMatrix<T>> = x
            .slices()
            .iter()
            .zip(&p)
            .map(|(xk, pk)| xk.matmul(pk))
            .collect::<Result<_>>()?;
        let y = DenseTensor3::from_slices(&ys)?;

        // one CP-ALS sweep on Y ≈ ⟦A, Δ, C⟧
        a = cp_step(&y, &delta, &c, 0)?;
        delta = cp_step(&y, &a, &c, 1)?;
        c = cp_step(&y, &a, &delta, 2)?;

        // ‖X − model‖² = ‖X‖² − ‖Y‖² + ‖Y − ⟦A, Δ, C⟧‖² for orthonormal P_k
        let rec = DenseTensor3::from_cp(&a, &delta, &c)?;
        let resid: T = y
            .values()
            .iter()
            .zip(rec.values())
            .map(|(&u, &v)| (u - v) * (u - v))
            .sum();
        loss = (x_norm_sq - y.frobenius_norm_sq() + resid).max(T::zero());
        let change = (prev - loss).abs();
        if change < settings.outer_abs_tol || change < settings.outer_rel_tol * prev.abs() {
            break;
        }
        prev = loss;
    }
    let b = p.iter().map(|pk| pk.matmul(&delta)).collect::<Result<Vec<_>>>()?;
    Ok(AlsReport {
        factors: Factors::parafac2(a, b, c),
        loss,
        iterations,
        start,
    })
}

/// Least-squares update of CP mode `mode` given the other two factors in
/// increasing mode order.
fn cp_step<T: Scalar>(y: &DenseTensor3<T>, lo: &DenseMatrix<T>, hi: &DenseMatrix<T>, mode: usize) -> Result<DenseMatrix<T>> {
    let m = mttkrp(y, lo, hi, mode)?;
    let g = lo.gram().hadamard(&hi.gram())?;
    cholesky_factor_jittered(&g)?.solve_rows(&m)
}
