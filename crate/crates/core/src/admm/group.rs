//! ADMM for dense modes: single uncoupled modes and coupling groups whose
//! members are updated jointly with the generating variable `Δ`.
//!
//! Every member `X` (`n×R`) has a row-wise data term: row `i` minimizes
//! `w·(x G_i xᵀ − 2 x m_iᵀ)` where `G_i` is shared by all rows (static modes)
//! or differs per row (PARAFAC2 mode `C`). Each row carries its own step
//! size `ρ_i`.

use crate::error::{Error, Result};
use crate::model::{CouplingCase, Dataset, DecompositionKind, ModelSpec, PARAFAC2_B, PARAFAC2_C};
use crate::prox::Regularizer;
use crate::scalar::Scalar;
use crate::tensor::{dot, mttkrp, Cholesky, DenseMatrix};

use super::{
    factor_with_jitter, refresh_caches, row_weighted_norm, stop_check, AdmmSettings, SolverState, StopScales,
};

enum RowGrams<T> {
    Shared(DenseMatrix<T>),
    PerRow(Vec<DenseMatrix<T>>),
}

enum PrimalSolver<T> {
    Shared(Cholesky<T>),
    PerRow(Vec<Cholesky<T>>),
    /// System on the row-stacked `vec(Xᵀ)` for transforms in the mode dimension.
    Stacked(Cholesky<T>),
}

struct Member<'a, T: Scalar> {
    d: usize,
    mode: usize,
    weight: T,
    grams: RowGrams<T>,
    rhs: DenseMatrix<T>,
    rho: Vec<T>,
    reg: &'a Regularizer<T>,
    transform: Option<DenseMatrix<T>>,
}

impl<T: Scalar> Member<'_, T> {
    fn rho_max(&self) -> T {
        self.rho.iter().copied().fold(T::zero(), T::max)
    }

    fn has_split(&self) -> bool {
        !self.reg.is_none()
    }
}

/// Updates one dense mode. A coupled mode is updated jointly with the rest
/// of its coupling group.
pub fn update_static_mode<T: Scalar>(
    state: &mut SolverState<T>,
    model: &ModelSpec<T>,
    d: usize,
    mode: usize,
    settings: &AdmmSettings<T>,
) -> Result<()> {
    if model.decompositions[d].kind == DecompositionKind::Parafac2 && mode == PARAFAC2_B {
        return Err(Error::InvalidParameter(
            "the varying PARAFAC2 mode is updated by update_parafac2_b_mode".into(),
        ));
    }
    match model.coupling_of(d, mode) {
        Some((c, _)) => update_coupled_group(state, model, c, settings),
        None => run_block(state, model, &[(d, mode)], None, settings),
    }
}

/// Updates mode `C` of PARAFAC2 decomposition `d` (row-wise systems with
/// individual step sizes), jointly with its coupling partners if coupled.
pub fn update_parafac2_c_mode<T: Scalar>(
    state: &mut SolverState<T>,
    model: &ModelSpec<T>,
    d: usize,
    settings: &AdmmSettings<T>,
) -> Result<()> {
    if model.decompositions[d].kind != DecompositionKind::Parafac2 {
        return Err(Error::InvalidParameter(format!("decomposition {d} is not PARAFAC2")));
    }
    update_static_mode(state, model, d, PARAFAC2_C, settings)
}

/// Joint ADMM update of all members of coupling `c` and its `Δ`.
pub fn update_coupled_group<T: Scalar>(
    state: &mut SolverState<T>,
    model: &ModelSpec<T>,
    c: usize,
    settings: &AdmmSettings<T>,
) -> Result<()> {
    let members: Vec<(usize, usize)> = model.couplings[c]
        .members
        .iter()
        .map(|m| (m.decomposition, m.mode))
        .collect();
    run_block(state, model, &members, Some(c), settings)
}

fn member_system<T: Scalar>(
    state: &SolverState<T>,
    model: &ModelSpec<T>,
    d: usize,
    mode: usize,
) -> Result<(RowGrams<T>, DenseMatrix<T>)> {
    let spec = &model.decompositions[d];
    let f = &state.factors.decompositions[d];
    let g = &state.grams[d];
    let data = &model.datasets[d];
    let mismatch = || Error::InvalidModel(format!("dataset {d} does not match its decomposition"));
    match spec.kind {
        DecompositionKind::Matrix => {
            let Dataset::Matrix(y) = data else { return Err(mismatch()) };
            if mode == 0 {
                Ok((RowGrams::Shared(g[1].as_dense().clone()), y.matmul(f.dense(1))?))
            } else {
                Ok((RowGrams::Shared(g[0].as_dense().clone()), y.t_matmul(f.dense(0))?))
            }
        }
        DecompositionKind::Cp => {
            let Dataset::Tensor(y) = data else { return Err(mismatch()) };
            let others: Vec<usize> = (0..3).filter(|&m| m != mode).collect();
            let (lo, hi) = (others[0], others[1]);
            let gram = g[lo].as_dense().hadamard(g[hi].as_dense())?;
            let m = mttkrp(y, f.dense(lo), f.dense(hi), mode)?;
            Ok((RowGrams::Shared(gram), m))
        }
        DecompositionKind::Parafac2 => {
            let xb = state.xb[d].as_ref().ok_or_else(mismatch)?;
            let btb = g[PARAFAC2_B].as_slices();
            let (a, c) = (f.dense(0), f.dense(PARAFAC2_C));
            let r = spec.rank;
            match mode {
                0 => {
                    // G = Σ_k D_k B_kᵀB_k D_k, M = Σ_k X_k B_k D_k
                    let mut gram = DenseMatrix::zeros(r, r);
                    let mut m = DenseMatrix::zeros(a.rows(), r);
                    for k in 0..c.rows() {
                        let ck = c.row(k);
                        for q in 0..r {
                            for p in 0..r {
                                gram[(p, q)] += ck[p] * ck[q] * btb[k][(p, q)];
                            }
                            crate::tensor::axpy(ck[q], xb[k].col(q), m.col_mut(q));
                        }
                    }
                    Ok((RowGrams::Shared(gram), m))
                }
                PARAFAC2_C => {
                    // G_k = AᵀA ∗ B_kᵀB_k, M(k,:) = diag(Aᵀ X_k B_k)
                    let ata = g[0].as_dense();
                    let grams = btb
                        .iter()
                        .map(|b| ata.hadamard(b))
                        .collect::<Result<Vec<_>>>()?;
                    let m = DenseMatrix::from_fn(c.rows(), r, |k, q| dot(a.col(q), xb[k].col(q)));
                    Ok((RowGrams::PerRow(grams), m))
                }
                _ => Err(Error::InvalidParameter("mode B has no dense system".into())),
            }
        }
    }
}

fn add_identity<T: Scalar>(m: &mut DenseMatrix<T>, alpha: T) {
    for i in 0..m.rows() {
        m[(i, i)] += alpha;
    }
}

/// `T_i(X)`, the factor side of the coupling constraint `T_i(X) = S_i(Δ)`.
fn factor_side<T: Scalar>(case: CouplingCase, h: Option<&DenseMatrix<T>>, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    Ok(match (case, h) {
        (CouplingCase::TransformFactorRows, Some(h)) => h.matmul(x)?,
        (CouplingCase::TransformFactorCols, Some(h)) => x.matmul(h)?,
        _ => x.clone(),
    })
}

/// `S_i(Δ)`, the generating-variable side of the coupling constraint.
fn delta_side<T: Scalar>(case: CouplingCase, h: Option<&DenseMatrix<T>>, delta: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    Ok(match (case, h) {
        (CouplingCase::TransformDeltaRows, Some(h)) => h.matmul(delta)?,
        (CouplingCase::TransformDeltaCols, Some(h)) => delta.matmul(h)?,
        _ => delta.clone(),
    })
}

fn run_block<T: Scalar>(
    state: &mut SolverState<T>,
    model: &ModelSpec<T>,
    members_idx: &[(usize, usize)],
    coupling: Option<usize>,
    settings: &AdmmSettings<T>,
) -> Result<()> {
    let case = coupling.map(|c| model.couplings[c].case);
    let half = T::lit(0.5);

    let mut members = Vec::with_capacity(members_idx.len());
    for (i, &(d, mode)) in members_idx.iter().enumerate() {
        let spec = &model.decompositions[d];
        let (grams, rhs) = member_system(state, model, d, mode)?;
        let r = spec.rank;
        let n = rhs.rows();
        let mut rho: Vec<T> = match &grams {
            RowGrams::Shared(g) => vec![state.step_size(g.trace(), r); n],
            RowGrams::PerRow(gs) => gs.iter().map(|g| state.step_size(g.trace(), r)).collect(),
        };
        if case == Some(CouplingCase::TransformFactorRows) {
            let mean = rho.iter().copied().sum::<T>() / T::lit(n as f64);
            rho = vec![mean; n];
        }
        let transform = match (coupling, case) {
            (Some(c), Some(cs)) if cs != CouplingCase::Exact => {
                let size = match cs {
                    CouplingCase::TransformFactorRows | CouplingCase::TransformDeltaRows => n,
                    _ => r,
                };
                Some(model.couplings[c].transform(i, size))
            }
            _ => None,
        };
        members.push(Member {
            d,
            mode,
            weight: spec.weight,
            grams,
            rhs,
            rho,
            reg: &spec.regularizers[mode],
            transform,
        });
    }

    // Unregularized, uncoupled: plain least squares, no ADMM needed.
    if coupling.is_none() && !members[0].has_split() {
        let m = &members[0];
        let x = match &m.grams {
            RowGrams::Shared(g) => factor_with_jitter(g)?.solve_rows(&m.rhs)?,
            RowGrams::PerRow(gs) => {
                let mut x = m.rhs.clone();
                let mut row = vec![T::zero(); x.cols()];
                for (k, g) in gs.iter().enumerate() {
                    row.copy_from_slice(&x.row(k));
                    factor_with_jitter(g)?.solve_in_place(&mut row);
                    x.set_row(k, &row);
                }
                x
            }
        };
        *state.factors.decompositions[m.d].modes[m.mode].as_dense_mut() = x;
        let aux = state.aux[m.d][m.mode].as_dense_mut();
        aux.rho = m.rho.clone();
        aux.last_iters = 0;
        return refresh_caches(state, model, m.d, m.mode);
    }

    // Primal solvers, fixed for the whole inner loop.
    let mut solvers = Vec::with_capacity(members.len());
    for m in &members {
        let r = m.rhs.cols();
        let split = if m.has_split() { T::one() } else { T::zero() };
        let q: Option<DenseMatrix<T>> = match (case, &m.transform) {
            (None, _) => None,
            (Some(CouplingCase::TransformFactorCols), Some(h)) => Some(h.matmul_t(h)?),
            (Some(CouplingCase::TransformFactorRows), _) => None,
            _ => Some(DenseMatrix::identity(r)),
        };
        let system = |g: &DenseMatrix<T>, rho: T| -> Result<Cholesky<T>> {
            let mut s = g.scaled(m.weight);
            add_identity(&mut s, half * rho * split);
            if let Some(q) = &q {
                s.add_scaled(half * rho, q)?;
            }
            factor_with_jitter(&s)
        };
        let solver = if case == Some(CouplingCase::TransformFactorRows) {
            let h = m.transform.as_ref().expect("transform");
            let hth = h.gram();
            let n = m.rhs.rows();
            let rho = m.rho[0];
            let mut s = DenseMatrix::zeros(n * r, n * r);
            for i in 0..n {
                let gi = match &m.grams {
                    RowGrams::Shared(g) => g,
                    RowGrams::PerRow(gs) => &gs[i],
                };
                for q in 0..r {
                    for p in 0..r {
                        s[(i * r + p, i * r + q)] += m.weight * gi[(p, q)];
                    }
                }
                for j in 0..n {
                    let v = half * rho * hth[(i, j)];
                    for p in 0..r {
                        s[(i * r + p, j * r + p)] += v;
                    }
                }
            }
            add_identity(&mut s, half * rho * split);
            PrimalSolver::Stacked(factor_with_jitter(&s)?)
        } else {
            match &m.grams {
                RowGrams::Shared(g) => PrimalSolver::Shared(system(g, m.rho[0])?),
                RowGrams::PerRow(gs) => PrimalSolver::PerRow(
                    gs.iter()
                        .zip(&m.rho)
                        .map(|(g, &rho)| system(g, rho))
                        .collect::<Result<Vec<_>>>()?,
                ),
            }
        };
        solvers.push(solver);
    }

    // Δ systems for the cases where Δ is not a plain average.
    let delta_solver = match (coupling, case) {
        (Some(c), Some(CouplingCase::TransformDeltaRows)) => {
            let m1 = model.couplings[c].delta_shape.0;
            let mut lhs = DenseMatrix::zeros(m1, m1);
            for m in &members {
                let mut ph = m.transform.clone().expect("transform");
                for (i, &rho) in m.rho.iter().enumerate() {
                    let row: Vec<T> = ph.row(i).iter().map(|&v| v * rho).collect();
                    ph.set_row(i, &row);
                }
                lhs.add_scaled(T::one(), &m.transform.as_ref().expect("transform").t_matmul(&ph)?)?;
            }
            vec![factor_with_jitter(&lhs)?]
        }
        (Some(c), Some(CouplingCase::TransformDeltaCols)) => {
            let (m1, m2) = model.couplings[c].delta_shape;
            let hht: Vec<DenseMatrix<T>> = members
                .iter()
                .map(|m| {
                    let h = m.transform.as_ref().expect("transform");
                    h.matmul_t(h)
                })
                .collect::<Result<_>>()?;
            (0..m1)
                .map(|i| {
                    let mut lhs = DenseMatrix::zeros(m2, m2);
                    for (m, h) in members.iter().zip(&hht) {
                        lhs.add_scaled(m.rho[i], h)?;
                    }
                    factor_with_jitter(&lhs)
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => Vec::new(),
    };

    let mut iters = 0;
    for _ in 0..settings.max_inner_iters {
        iters += 1;

        // primal updates
        for (m, solver) in members.iter().zip(&solvers) {
            let aux = state.aux[m.d][m.mode].as_dense();
            let (n, r) = m.rhs.shape();
            let mut aug = DenseMatrix::zeros(n, r);
            if let (Some(z), Some(mu)) = (&aux.z, &aux.mu_z) {
                aug.add_scaled(T::one(), z)?;
                aug.add_scaled(-T::one(), mu)?;
            }
            if let (Some(c), Some(cs)) = (coupling, case) {
                let delta = &state.deltas[c];
                let mu = aux.mu_delta.as_ref().expect("coupled mode has a dual");
                let h = m.transform.as_ref();
                let term = match cs {
                    CouplingCase::TransformFactorCols => delta.sub(mu)?.matmul_t(h.expect("transform"))?,
                    CouplingCase::TransformFactorRows => h.expect("transform").t_matmul(&delta.sub(mu)?)?,
                    _ => delta_side(cs, h, delta)?.sub(mu)?,
                };
                aug.add_scaled(T::one(), &term)?;
            }
            let mut rhs = m.rhs.scaled(m.weight);
            for q in 0..r {
                let (dst, src) = (rhs.col_mut(q), aug.col(q));
                for i in 0..n {
                    dst[i] += half * m.rho[i] * src[i];
                }
            }
            let x = match solver {
                PrimalSolver::Shared(l) => l.solve_rows(&rhs)?,
                PrimalSolver::PerRow(ls) => {
                    let mut row = vec![T::zero(); r];
                    for (i, l) in ls.iter().enumerate() {
                        row.copy_from_slice(&rhs.row(i));
                        l.solve_in_place(&mut row);
                        rhs.set_row(i, &row);
                    }
                    rhs
                }
                PrimalSolver::Stacked(l) => {
                    let mut v = rhs.transpose().into_values();
                    l.solve_in_place(&mut v);
                    DenseMatrix::from_col_major(r, n, v)?.transpose()
                }
            };
            *state.factors.decompositions[m.d].modes[m.mode].as_dense_mut() = x;
        }

        // coupling variable
        let mut converged = true;
        let mut old_sides: Vec<DenseMatrix<T>> = Vec::new();
        if let (Some(c), Some(cs)) = (coupling, case) {
            let old = state.deltas[c].clone();
            for m in &members {
                old_sides.push(delta_side(cs, m.transform.as_ref(), &old)?);
            }
            let new = update_delta(state, &members, cs, &delta_solver, old.shape())?;
            state.deltas[c] = new;
        }

        // splits
        for m in &members {
            if !m.has_split() {
                continue;
            }
            let x = state.factors.decompositions[m.d].modes[m.mode].as_dense().clone();
            let aux = state.aux[m.d][m.mode].as_dense_mut();
            let mu = aux.mu_z.as_mut().expect("split dual");
            let z_old = aux.z.take().expect("split variable");
            let z = m.reg.prox(&x.add(mu)?, m.rho_max())?;
            mu.add_scaled(T::one(), &x)?;
            mu.add_scaled(-T::one(), &z)?;
            let r_norm = x.distance(&z)?;
            let s_norm = row_weighted_norm(&z.sub(&z_old)?, &m.rho);
            let scales = StopScales {
                len: x.len(),
                x_norm: x.frobenius_norm(),
                z_norm: z.frobenius_norm(),
                dual_norm: row_weighted_norm(mu, &m.rho),
            };
            converged &= stop_check(r_norm, s_norm, &scales, settings);
            aux.z = Some(z);
        }

        // coupling duals
        if let (Some(c), Some(cs)) = (coupling, case) {
            for (m, old_side) in members.iter().zip(&old_sides) {
                let x = state.factors.decompositions[m.d].modes[m.mode].as_dense();
                let tx = factor_side(cs, m.transform.as_ref(), x)?;
                let sd = delta_side(cs, m.transform.as_ref(), &state.deltas[c])?;
                let aux = state.aux[m.d][m.mode].as_dense_mut();
                let mu = aux.mu_delta.as_mut().expect("coupling dual");
                mu.add_scaled(T::one(), &tx)?;
                mu.add_scaled(-T::one(), &sd)?;
                let r_norm = tx.distance(&sd)?;
                let s_norm = row_weighted_norm(&sd.sub(old_side)?, &m.rho);
                let scales = StopScales {
                    len: tx.len(),
                    x_norm: tx.frobenius_norm(),
                    z_norm: sd.frobenius_norm(),
                    dual_norm: row_weighted_norm(mu, &m.rho),
                };
                converged &= stop_check(r_norm, s_norm, &scales, settings);
            }
        }

        if converged {
            break;
        }
    }

    for m in &members {
        let aux = state.aux[m.d][m.mode].as_dense_mut();
        aux.rho = m.rho.clone();
        aux.last_iters = iters;
    }
    for m in &members {
        refresh_caches(state, model, m.d, m.mode)?;
    }
    Ok(())
}

fn update_delta<T: Scalar>(
    state: &SolverState<T>,
    members: &[Member<'_, T>],
    case: CouplingCase,
    delta_solver: &[Cholesky<T>],
    shape: (usize, usize),
) -> Result<DenseMatrix<T>> {
    let (m1, m2) = shape;
    let targets = members
        .iter()
        .map(|m| {
            let x = state.factors.decompositions[m.d].modes[m.mode].as_dense();
            let mu = state.aux[m.d][m.mode].as_dense().mu_delta.as_ref().expect("coupling dual");
            // T_i(X_i) + μ_i for averaging cases, X_i + μ_i otherwise
            factor_side(case, m.transform.as_ref(), x)?.add(mu)
        })
        .collect::<Result<Vec<_>>>()?;
    match case {
        CouplingCase::Exact | CouplingCase::TransformFactorCols | CouplingCase::TransformFactorRows => {
            let mut num = DenseMatrix::zeros(m1, m2);
            let mut den = vec![T::zero(); m1];
            for (m, t) in members.iter().zip(&targets) {
                for i in 0..m1 {
                    let rho = if m.rho.len() == m1 { m.rho[i] } else { m.rho[0] };
                    den[i] += rho;
                    for q in 0..m2 {
                        num[(i, q)] += rho * t[(i, q)];
                    }
                }
            }
            for q in 0..m2 {
                for (v, &dn) in num.col_mut(q).iter_mut().zip(&den) {
                    *v /= dn;
                }
            }
            Ok(num)
        }
        CouplingCase::TransformDeltaRows => {
            let mut rhs = DenseMatrix::zeros(m1, m2);
            for (m, t) in members.iter().zip(&targets) {
                let mut pt = t.clone();
                for q in 0..m2 {
                    for (v, &rho) in pt.col_mut(q).iter_mut().zip(&m.rho) {
                        *v *= rho;
                    }
                }
                rhs.add_scaled(T::one(), &m.transform.as_ref().expect("transform").t_matmul(&pt)?)?;
            }
            delta_solver[0].solve(&rhs)
        }
        CouplingCase::TransformDeltaCols => {
            let mut out = DenseMatrix::zeros(m1, m2);
            let mut row = vec![T::zero(); m2];
            for i in 0..m1 {
                row.iter_mut().for_each(|v| *v = T::zero());
                for (m, t) in members.iter().zip(&targets) {
                    let h = m.transform.as_ref().expect("transform");
                    let ti = t.row(i);
                    for (p, rv) in row.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for (q, &tv) in ti.iter().enumerate() {
                            acc += tv * h[(p, q)];
                        }
                        *rv += m.rho[i] * acc;
                    }
                }
                delta_solver[i].solve_in_place(&mut row);
                out.set_row(i, &row);
            }
            Ok(out)
        }
    }
}
