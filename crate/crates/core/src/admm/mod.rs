//! Inner ADMM solvers for the mode subproblems and the solver state they
//! share across outer iterations.

mod bmode;
mod group;

use std::borrow::Cow;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    random_factors, random_uniform, seeded_rng, Dataset, DecompositionKind, FactorMatrix, FactorSet,
    ModelSpec, PARAFAC2_B,
};
use crate::scalar::Scalar;
use crate::tensor::DenseMatrix;

pub use bmode::{parafac2_projection, update_parafac2_b_mode, ProjectionResult};
pub use group::{update_coupled_group, update_parafac2_c_mode, update_static_mode};

/// Inner-loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmSettings<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_inner_iters: usize,
    /// Rounds of the alternating PARAFAC2 projection per ADMM iteration.
    pub projection_rounds: usize,
    /// Relative change of `Δ_B` that ends the projection early.
    pub projection_tol: T,
    /// Weight the `Δ_B` average by the per-slice step sizes.
    pub weighted_projection: bool,
}

impl<T: Scalar> Default for AdmmSettings<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::lit(1e-5),
            rel_tol: T::lit(1e-5),
            max_inner_iters: 5,
            projection_rounds: 5,
            projection_tol: T::lit(1e-8),
            weighted_projection: true,
        }
    }
}

impl<T: Scalar> AdmmSettings<T> {
    pub fn check(&self) -> Result<()> {
        if !(self.abs_tol > T::zero() && self.rel_tol > T::zero()) {
            return Err(Error::InvalidParameter("ADMM tolerances must be > 0".into()));
        }
        if self.max_inner_iters == 0 || self.projection_rounds == 0 {
            return Err(Error::InvalidParameter(
                "max_inner_iters and projection_rounds must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Scales entering the ADMM tolerances of one constraint `x − z = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopScales<T> {
    /// Number of entries of the constraint (and of the primal variable).
    pub len: usize,
    /// `‖x‖`, the primal side of the constraint.
    pub x_norm: T,
    /// `‖z‖`, the split side of the constraint.
    pub z_norm: T,
    /// `ρ‖μ‖` with the scaled dual `μ`.
    pub dual_norm: T,
}

impl<T: Scalar> StopScales<T> {
    pub fn eps_primal(&self, settings: &AdmmSettings<T>) -> T {
        T::lit(self.len as f64).sqrt() * settings.abs_tol + settings.rel_tol * self.x_norm.max(self.z_norm)
    }

    pub fn eps_dual(&self, settings: &AdmmSettings<T>) -> T {
        T::lit(self.len as f64).sqrt() * settings.abs_tol + settings.rel_tol * self.dual_norm
    }
}

/// ADMM termination test: `‖r‖ ≤ ε_pri` and `‖s‖ ≤ ε_dual` with
/// `ε_pri = √len·ε_abs + ε_rel·max(‖x‖, ‖z‖)` and
/// `ε_dual = √len·ε_abs + ε_rel·ρ‖μ‖`.
pub fn stop_check<T: Scalar>(r_norm: T, s_norm: T, scales: &StopScales<T>, settings: &AdmmSettings<T>) -> bool {
    r_norm <= scales.eps_primal(settings) && s_norm <= scales.eps_dual(settings)
}

/// ADMM variables of a dense mode.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseAux<T> {
    /// Split variable carrying the regularizer (absent for unregularized modes).
    pub z: Option<DenseMatrix<T>>,
    pub mu_z: Option<DenseMatrix<T>>,
    /// Scaled dual of the coupling constraint (absent for uncoupled modes).
    pub mu_delta: Option<DenseMatrix<T>>,
    /// Step size per row from the last update.
    pub rho: Vec<T>,
    /// Inner iterations used by the last update.
    pub last_iters: usize,
}

/// ADMM variables of the varying PARAFAC2 mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceAux<T> {
    pub z: Option<Vec<DenseMatrix<T>>>,
    pub mu_z: Option<Vec<DenseMatrix<T>>>,
    /// Orthonormal-column `P_k` of the projection onto the PARAFAC2 set.
    pub p: Vec<DenseMatrix<T>>,
    /// Shared `Δ_B` with `B_k ≈ P_k Δ_B`.
    pub delta_b: DenseMatrix<T>,
    /// Scaled duals of `B_k = P_k Δ_B`.
    pub mu_delta: Vec<DenseMatrix<T>>,
    pub rho: Vec<T>,
    pub last_iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModeAux<T> {
    Dense(DenseAux<T>),
    Slices(SliceAux<T>),
}

impl<T: Scalar> ModeAux<T> {
    pub fn as_dense(&self) -> &DenseAux<T> {
        match self {
            Self::Dense(a) => a,
            Self::Slices(_) => panic!("expected dense ADMM variables"),
        }
    }

    pub fn as_dense_mut(&mut self) -> &mut DenseAux<T> {
        match self {
            Self::Dense(a) => a,
            Self::Slices(_) => panic!("expected dense ADMM variables"),
        }
    }

    pub fn as_slices(&self) -> &SliceAux<T> {
        match self {
            Self::Slices(a) => a,
            Self::Dense(_) => panic!("expected slice ADMM variables"),
        }
    }

    pub fn as_slices_mut(&mut self) -> &mut SliceAux<T> {
        match self {
            Self::Slices(a) => a,
            Self::Dense(_) => panic!("expected slice ADMM variables"),
        }
    }

    pub fn last_iters(&self) -> usize {
        match self {
            Self::Dense(a) => a.last_iters,
            Self::Slices(a) => a.last_iters,
        }
    }
}

/// Cached Gram matrices of one mode.
#[derive(Clone, Debug, PartialEq)]
pub enum GramCache<T> {
    Dense(DenseMatrix<T>),
    Slices(Vec<DenseMatrix<T>>),
}

impl<T: Scalar> GramCache<T> {
    pub fn as_dense(&self) -> &DenseMatrix<T> {
        match self {
            Self::Dense(g) => g,
            Self::Slices(_) => panic!("expected a dense Gram"),
        }
    }

    pub fn as_slices(&self) -> &[DenseMatrix<T>] {
        match self {
            Self::Slices(g) => g,
            Self::Dense(_) => panic!("expected per-slice Grams"),
        }
    }
}

/// Everything the inner solvers carry between outer iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState<T> {
    pub factors: FactorSet<T>,
    /// ADMM variables indexed `[decomposition][mode]`.
    pub aux: Vec<Vec<ModeAux<T>>>,
    /// Generating variable `Δ` of each coupling.
    pub deltas: Vec<DenseMatrix<T>>,
    /// Gram matrices `XᵀX` (per slice for `B_k`) indexed `[decomposition][mode]`.
    pub grams: Vec<Vec<GramCache<T>>>,
    /// `X_k B_k` for every PARAFAC2 decomposition.
    pub xb: Vec<Option<Vec<DenseMatrix<T>>>>,
    /// Number of times a zero Gram trace forced the fallback step size 1.
    pub zero_trace_events: usize,
}

impl<T: Scalar> SolverState<T> {
    /// Random factors plus uniform `[0, 1)` split, dual and coupling
    /// variables, deterministic for `seed`.
    pub fn random_init(model: &ModelSpec<T>, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let factors = random_factors(model, &mut rng)?;
        Self::from_factors(model, factors, &mut rng)
    }

    /// State around given factors, drawing the auxiliary variables from `rng`.
    pub fn from_factors(model: &ModelSpec<T>, factors: FactorSet<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        factors.check_shapes(model)?;
        let mut state = Self {
            factors,
            aux: Vec::new(),
            deltas: Vec::new(),
            grams: Vec::new(),
            xb: Vec::new(),
            zero_trace_events: 0,
        };
        state.randomize_aux(model, rng);
        state.refresh_all(model)?;
        Ok(state)
    }

    /// Redraws every split, dual and coupling variable (the factors stay).
    pub fn randomize_aux(&mut self, model: &ModelSpec<T>, rng: &mut ChaCha8Rng) {
        let mut aux = Vec::with_capacity(model.decompositions.len());
        for (d, spec) in model.decompositions.iter().enumerate() {
            let f = &self.factors.decompositions[d];
            let mut modes = Vec::with_capacity(f.modes.len());
            for (m, fm) in f.modes.iter().enumerate() {
                let regularized = !spec.regularizers[m].is_none();
                match fm {
                    FactorMatrix::Dense(x) => {
                        let (n, r) = x.shape();
                        let z = regularized.then(|| random_uniform(rng, n, r));
                        let mu_z = regularized.then(|| random_uniform(rng, n, r));
                        let mu_delta = model.coupling_of(d, m).map(|(c, _)| {
                            let (tr, tc) = coupled_shape(model, c, (n, r));
                            random_uniform(rng, tr, tc)
                        });
                        modes.push(ModeAux::Dense(DenseAux {
                            z,
                            mu_z,
                            mu_delta,
                            rho: vec![T::one(); n],
                            last_iters: 0,
                        }));
                    }
                    FactorMatrix::Slices(bs) => {
                        let r = spec.rank;
                        let z = regularized.then(|| bs.iter().map(|b| random_uniform(rng, b.rows(), r)).collect());
                        let mu_z = regularized.then(|| bs.iter().map(|b| random_uniform(rng, b.rows(), r)).collect());
                        let delta_b = random_uniform(rng, r, r);
                        let mu_delta = bs.iter().map(|b| random_uniform(rng, b.rows(), r)).collect();
                        let p = bs
                            .iter()
                            .map(|b| DenseMatrix::from_fn(b.rows(), r, |i, j| if i == j { T::one() } else { T::zero() }))
                            .collect();
                        modes.push(ModeAux::Slices(SliceAux {
                            z,
                            mu_z,
                            p,
                            delta_b,
                            mu_delta,
                            rho: vec![T::one(); bs.len()],
                            last_iters: 0,
                        }));
                    }
                }
            }
            aux.push(modes);
        }
        self.aux = aux;
        self.deltas = model
            .couplings
            .iter()
            .map(|c| random_uniform(rng, c.delta_shape.0, c.delta_shape.1))
            .collect();
    }

    /// Cold start of the inner solvers: scaled duals become zero and every
    /// split restarts at its factor. `Δ`, `P_k` and `Δ_B` are kept.
    pub fn reset_duals(&mut self) {
        for (modes, f) in self.aux.iter_mut().zip(&self.factors.decompositions) {
            for (aux, fm) in modes.iter_mut().zip(&f.modes) {
                match (aux, fm) {
                    (ModeAux::Dense(a), FactorMatrix::Dense(x)) => {
                        if let Some(z) = a.z.as_mut() {
                            z.copy_from(x);
                        }
                        for mu in [a.mu_z.as_mut(), a.mu_delta.as_mut()].into_iter().flatten() {
                            mu.fill(T::zero());
                        }
                    }
                    (ModeAux::Slices(a), FactorMatrix::Slices(bs)) => {
                        if let Some(zs) = a.z.as_mut() {
                            for (z, b) in zs.iter_mut().zip(bs) {
                                z.copy_from(b);
                            }
                        }
                        for mu in a.mu_z.iter_mut().flatten().chain(a.mu_delta.iter_mut()) {
                            mu.fill(T::zero());
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    /// Recomputes every cache from the current factors.
    pub fn refresh_all(&mut self, model: &ModelSpec<T>) -> Result<()> {
        self.grams = self
            .factors
            .decompositions
            .iter()
            .map(|f| f.modes.iter().map(gram_of).collect())
            .collect();
        self.xb = vec![None; model.decompositions.len()];
        for (d, spec) in model.decompositions.iter().enumerate() {
            if spec.kind == DecompositionKind::Parafac2 {
                self.refresh_xb(model, d)?;
            }
        }
        Ok(())
    }

    fn refresh_xb(&mut self, model: &ModelSpec<T>, d: usize) -> Result<()> {
        let slices = parafac2_slices(model, d)?;
        let bs = self.factors.decompositions[d].modes[PARAFAC2_B].as_slices();
        let xb = slices
            .iter()
            .zip(bs)
            .map(|(x, b)| x.matmul(b))
            .collect::<Result<Vec<_>>>()?;
        self.xb[d] = Some(xb);
        Ok(())
    }

    pub(crate) fn step_size(&mut self, gram_trace: T, rank: usize) -> T {
        step_size(gram_trace, rank, &mut self.zero_trace_events)
    }
}

/// `trace(G)/R`, or 1 when the trace vanishes.
pub(crate) fn step_size<T: Scalar>(gram_trace: T, rank: usize, zero_events: &mut usize) -> T {
    let rho = gram_trace / T::lit(rank as f64);
    if rho > T::zero() && rho.is_finite() {
        rho
    } else {
        *zero_events += 1;
        T::one()
    }
}

fn gram_of<T: Scalar>(f: &FactorMatrix<T>) -> GramCache<T> {
    match f {
        FactorMatrix::Dense(x) => GramCache::Dense(x.gram()),
        FactorMatrix::Slices(s) => GramCache::Slices(s.iter().map(|b| b.gram()).collect()),
    }
}

/// Shape of `T_i(X_i)` for member `i` of coupling `c` with factor shape `(n, r)`.
pub(crate) fn coupled_shape<T: Scalar>(model: &ModelSpec<T>, c: usize, (n, r): (usize, usize)) -> (usize, usize) {
    use crate::model::CouplingCase::*;
    let cs = &model.couplings[c];
    let (m1, m2) = cs.delta_shape;
    match cs.case {
        Exact | TransformDeltaRows | TransformDeltaCols => (n, r),
        TransformFactorRows => (m1, r),
        TransformFactorCols => (n, m2),
    }
}

/// Frontal slices of a PARAFAC2 dataset.
pub(crate) fn parafac2_slices<T: Scalar>(model: &ModelSpec<T>, d: usize) -> Result<Cow<'_, [DenseMatrix<T>]>> {
    match model.datasets.get(d) {
        Some(Dataset::Ragged(r)) => Ok(Cow::Borrowed(r.slices())),
        Some(Dataset::Tensor(t)) => Ok(Cow::Owned(t.frontal_slices())),
        _ => Err(Error::InvalidModel(format!("dataset {d} is not a third-order tensor"))),
    }
}

/// Recomputes the caches owned by `(d, mode)` after its factor changed.
pub fn refresh_caches<T: Scalar>(state: &mut SolverState<T>, model: &ModelSpec<T>, d: usize, mode: usize) -> Result<()> {
    let g = gram_of(&state.factors.decompositions[d].modes[mode]);
    state.grams[d][mode] = g;
    if model.decompositions[d].kind == DecompositionKind::Parafac2 && mode == PARAFAC2_B {
        state.refresh_xb(model, d)?;
    }
    Ok(())
}

pub(crate) use crate::tensor::cholesky_factor_jittered as factor_with_jitter;

/// `sqrt(Σ_i ρ_i² ‖row_i‖²)` with one step size per row, or a single shared
/// step size when `rho` has length 1 or does not match the row count.
pub(crate) fn row_weighted_norm<T: Scalar>(m: &DenseMatrix<T>, rho: &[T]) -> T {
    if rho.len() == m.rows() && rho.len() > 1 {
        let mut acc = T::zero();
        for c in 0..m.cols() {
            for (v, &r) in m.col(c).iter().zip(rho) {
                acc += (r * *v) * (r * *v);
            }
        }
        acc.sqrt()
    } else {
        rho.first().copied().unwrap_or(T::one()) * m.frobenius_norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_check_examples() {
        let s = AdmmSettings::<f64>::default();
        let zero = StopScales {
            len: 4,
            x_norm: 0.0,
            z_norm: 0.0,
            dual_norm: 0.0,
        };
        assert!(stop_check(0.0, 0.0, &zero, &s));
        let tiny = AdmmSettings {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            ..s.clone()
        };
        assert!(!stop_check(1.0, 0.0, &zero, &tiny));

        // 2x2 case: x = [[1,2],[3,4]], z = [[1,2],[3,3]], μ = 0.5·ones, ρ = 2
        let scales = StopScales {
            len: 4,
            x_norm: 30f64.sqrt(),
            z_norm: 23f64.sqrt(),
            dual_norm: 2.0 * 1.0,
        };
        let eps_pri = 2.0 * 1e-5 + 1e-5 * 30f64.sqrt();
        let eps_dual = 2.0 * 1e-5 + 1e-5 * 2.0;
        assert!((scales.eps_primal(&s) - eps_pri).abs() < 1e-18);
        assert!((scales.eps_dual(&s) - eps_dual).abs() < 1e-18);
        assert!(stop_check(eps_pri, eps_dual, &scales, &s));
        assert!(!stop_check(eps_pri * 1.0001, eps_dual, &scales, &s));
    }

    #[test]
    fn step_size_falls_back_to_one() {
        let mut events = 0;
        assert_eq!(step_size(6.0, 3, &mut events), 2.0);
        assert_eq!(step_size(0.0, 3, &mut events), 1.0);
        assert_eq!(events, 1);
    }
}
