//! Double-split ADMM for the varying PARAFAC2 mode `B_k`: one split carries
//! the PARAFAC2 constraint `B_k = P_k Δ_B`, the other the regularizer.

use crate::error::{Error, Result};
use crate::model::{DecompositionKind, ModelSpec, PARAFAC2_B, PARAFAC2_C};
use crate::scalar::Scalar;
use crate::tensor::{inv_sqrt_spd, procrustes_orthogonal, DenseMatrix};

use super::{
    factor_with_jitter, parafac2_slices, refresh_caches, stop_check, AdmmSettings, SolverState, StopScales,
};

/// Outcome of the alternating projection onto the PARAFAC2 set.
#[derive(Clone, Debug)]
pub struct ProjectionResult<T> {
    pub p: Vec<DenseMatrix<T>>,
    pub delta_b: DenseMatrix<T>,
    pub rounds: usize,
}

/// Approximates `argmin Σ_k w_k ‖Y_k − P_k Δ_B‖²` over orthonormal-column
/// `P_k` and a shared `Δ_B` by alternating `K` Procrustes problems with a
/// weighted average for `Δ_B`, starting from `delta_init`.
///
/// Stops after `max_rounds` or once `‖ΔΔ_B‖ ≤ tol·‖Δ_B‖`. `weights = None`
/// averages uniformly.
pub fn parafac2_projection<T: Scalar>(
    targets: &[DenseMatrix<T>],
    weights: Option<&[T]>,
    delta_init: &DenseMatrix<T>,
    max_rounds: usize,
    tol: T,
) -> Result<ProjectionResult<T>> {
    if targets.is_empty() {
        return Err(Error::InvalidParameter("projection needs at least one slice".into()));
    }
    let r = delta_init.rows();
    if delta_init.cols() != r || targets.iter().any(|y| y.cols() != r) {
        return Err(Error::DimensionMismatch {
            op: "parafac2_projection",
            detail: format!("delta {:?}, rank {r}", delta_init.shape()),
        });
    }
    let uniform = vec![T::one(); targets.len()];
    let w = weights.unwrap_or(&uniform);
    let w_sum: T = w.iter().copied().sum();
    // The rounds only need G_k = Y_kᵀY_k: with M_k = Δ G_k Δᵀ the Procrustes
    // solution satisfies P_kᵀY_k = M_k^{-1/2} Δ G_k.
    let grams: Vec<DenseMatrix<T>> = targets.iter().map(|y| y.gram()).collect();
    let mut delta = delta_init.clone();
    let mut used = delta.clone();
    let mut rounds = 0;
    for _ in 0..max_rounds.max(1) {
        rounds += 1;
        used.copy_from(&delta);
        let mut next = DenseMatrix::zeros(r, r);
        for ((y, g), &wk) in targets.iter().zip(&grams).zip(w) {
            let dg = delta.matmul(g)?;
            let pty = match inv_sqrt_spd(&dg.matmul_t(&delta)?)? {
                Some(s) => s.matmul(&dg)?,
                None => procrustes_orthogonal(&y.matmul_t(&delta)?)?.t_matmul(y)?,
            };
            next.add_scaled(wk / w_sum, &pty)?;
        }
        let change = next.distance(&delta)?;
        let scale = next.frobenius_norm();
        delta = next;
        if change <= tol * scale {
            break;
        }
    }
    let p = targets
        .iter()
        .map(|y| procrustes_orthogonal(&y.matmul_t(&used)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectionResult { p, delta_b: delta, rounds })
}

/// ADMM update of all `B_k` of PARAFAC2 decomposition `d` with `A` and `C`
/// fixed.
///
/// Per slice the primal system is
/// `B_k (w·D_k AᵀA D_k + (ρ_k/2)(1 + s)·I) = w·X_kᵀ A D_k + (ρ_k/2)(P_k Δ_B − μ_Δk + s·(Z_k − μ_Zk))`
/// with `s = 1` when mode `B` is regularized and `ρ_k = trace(D_k AᵀA D_k)/R`.
pub fn update_parafac2_b_mode<T: Scalar>(
    state: &mut SolverState<T>,
    model: &ModelSpec<T>,
    d: usize,
    settings: &AdmmSettings<T>,
) -> Result<()> {
    let spec = &model.decompositions[d];
    if spec.kind != DecompositionKind::Parafac2 {
        return Err(Error::InvalidParameter(format!("decomposition {d} is not PARAFAC2")));
    }
    let slices = parafac2_slices(model, d)?;
    let r = spec.rank;
    let w = spec.weight;
    let half = T::lit(0.5);
    let reg = &spec.regularizers[PARAFAC2_B];
    let split = !reg.is_none();
    let n_terms = if split { T::lit(2.0) } else { T::one() };

    let f = &state.factors.decompositions[d];
    let (a, c) = (f.dense(0).clone(), f.dense(PARAFAC2_C).clone());
    let ata = state.grams[d][0].as_dense().clone();

    // Per-slice data terms, fixed during the inner loop.
    let mut rho = Vec::with_capacity(slices.len());
    let mut data_rhs = Vec::with_capacity(slices.len());
    let mut solvers = Vec::with_capacity(slices.len());
    for (k, x) in slices.iter().enumerate() {
        let ck = c.row(k);
        let gk = DenseMatrix::from_fn(r, r, |p, q| ck[p] * ck[q] * ata[(p, q)]);
        let rho_k = state.step_size(gk.trace(), r);
        let mut nk = x.t_matmul(&a)?;
        nk.scale_columns(&ck);
        nk.scale_mut(w);
        let mut sys = gk.scaled(w);
        for i in 0..r {
            sys[(i, i)] += half * rho_k * n_terms;
        }
        solvers.push(factor_with_jitter(&sys)?);
        data_rhs.push(nk);
        rho.push(rho_k);
    }

    let total_len: usize = slices.iter().map(|x| x.cols() * r).sum();
    let mut iters = 0;
    for _ in 0..settings.max_inner_iters {
        iters += 1;
        let aux = state.aux[d][PARAFAC2_B].as_slices();

        // primal
        let mut bs = Vec::with_capacity(slices.len());
        for k in 0..slices.len() {
            let mut aug = aux.p[k].matmul(&aux.delta_b)?;
            aug.add_scaled(-T::one(), &aux.mu_delta[k])?;
            if let (Some(z), Some(mu)) = (&aux.z, &aux.mu_z) {
                aug.add_scaled(T::one(), &z[k])?;
                aug.add_scaled(-T::one(), &mu[k])?;
            }
            let mut rhs = data_rhs[k].clone();
            rhs.add_scaled(half * rho[k], &aug)?;
            bs.push(solvers[k].solve_rows(&rhs)?);
        }

        // PARAFAC2 projection
        let old_pd: Vec<DenseMatrix<T>> = aux
            .p
            .iter()
            .map(|p| p.matmul(&aux.delta_b))
            .collect::<Result<_>>()?;
        let targets = bs
            .iter()
            .zip(&aux.mu_delta)
            .map(|(b, mu)| b.add(mu))
            .collect::<Result<Vec<_>>>()?;
        let weights = settings.weighted_projection.then_some(rho.as_slice());
        let proj = parafac2_projection(
            &targets,
            weights,
            &aux.delta_b,
            settings.projection_rounds,
            settings.projection_tol,
        )?;

        let aux = state.aux[d][PARAFAC2_B].as_slices_mut();
        aux.p = proj.p;
        aux.delta_b = proj.delta_b;

        let mut converged = true;

        // regularizer split
        if split {
            let (mut r2, mut s2, mut x2, mut z2, mut d2) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            let zs = aux.z.as_mut().expect("split variable");
            let mus = aux.mu_z.as_mut().expect("split dual");
            for k in 0..bs.len() {
                let z = reg.prox(&bs[k].add(&mus[k])?, rho[k])?;
                mus[k].add_scaled(T::one(), &bs[k])?;
                mus[k].add_scaled(-T::one(), &z)?;
                r2 += bs[k].distance(&z)?.powi(2);
                s2 += (rho[k] * z.distance(&zs[k])?).powi(2);
                x2 += bs[k].frobenius_norm_sq();
                z2 += z.frobenius_norm_sq();
                d2 += (rho[k] * mus[k].frobenius_norm()).powi(2);
                zs[k] = z;
            }
            let scales = StopScales {
                len: total_len,
                x_norm: x2.sqrt(),
                z_norm: z2.sqrt(),
                dual_norm: d2.sqrt(),
            };
            converged &= stop_check(r2.sqrt(), s2.sqrt(), &scales, settings);
        }

        // PARAFAC2 constraint duals
        let (mut r2, mut s2, mut x2, mut z2, mut d2) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
        for k in 0..bs.len() {
            let pd = aux.p[k].matmul(&aux.delta_b)?;
            aux.mu_delta[k].add_scaled(T::one(), &bs[k])?;
            aux.mu_delta[k].add_scaled(-T::one(), &pd)?;
            r2 += bs[k].distance(&pd)?.powi(2);
            s2 += (rho[k] * pd.distance(&old_pd[k])?).powi(2);
            x2 += bs[k].frobenius_norm_sq();
            z2 += pd.frobenius_norm_sq();
            d2 += (rho[k] * aux.mu_delta[k].frobenius_norm()).powi(2);
        }
        let scales = StopScales {
            len: total_len,
            x_norm: x2.sqrt(),
            z_norm: z2.sqrt(),
            dual_norm: d2.sqrt(),
        };
        converged &= stop_check(r2.sqrt(), s2.sqrt(), &scales, settings);

        *state.factors.decompositions[d].modes[PARAFAC2_B].as_slices_mut() = bs;
        if converged {
            break;
        }
    }

    let aux = state.aux[d][PARAFAC2_B].as_slices_mut();
    aux.rho = rho;
    aux.last_iters = iters;
    refresh_caches(state, model, d, PARAFAC2_B)
}
