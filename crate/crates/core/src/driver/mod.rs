//! Outer alternating-optimization loop, multi-start selection and the
//! classic PARAFAC2-ALS baseline.

mod als;

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::admm::{
    update_coupled_group, update_parafac2_b_mode, update_static_mode, AdmmSettings, SolverState,
};
use crate::error::{Error, Result};
use crate::model::{
    random_factors, seeded_rng, Dataset, DecompositionKind, FactorMatrix, FactorSet, ModelSpec, PARAFAC2_B,
};
use crate::scalar::Scalar;

pub use als::{parafac2_als_baseline, AlsReport};

/// Outer-loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterSettings<T> {
    pub outer_abs_tol: T,
    pub outer_rel_tol: T,
    pub max_outer_iters: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub time_budget: Option<Duration>,
    /// Keep the inner ADMM variables between outer iterations. Without warm
    /// starts every outer iteration resets the scaled duals to zero and the
    /// splits to their factors.
    pub warm_start: bool,
    /// Only stop on the function-value criteria once every in-solver
    /// feasibility gap (split, coupling, PARAFAC2) is below this value.
    pub feasibility_tol: Option<T>,
    /// Run independent starts on the rayon pool.
    pub parallel_starts: bool,
    pub admm: AdmmSettings<T>,
}

impl<T: Scalar> Default for OuterSettings<T> {
    fn default() -> Self {
        Self {
            outer_abs_tol: T::lit(1e-7),
            outer_rel_tol: T::lit(1e-8),
            max_outer_iters: 5000,
            n_starts: 10,
            seed: 0,
            time_budget: None,
            warm_start: true,
            feasibility_tol: None,
            parallel_starts: true,
            admm: AdmmSettings::default(),
        }
    }
}

impl<T: Scalar> OuterSettings<T> {
    pub fn check(&self) -> Result<()> {
        if !(self.outer_abs_tol > T::zero() && self.outer_rel_tol > T::zero()) {
            return Err(Error::InvalidParameter("outer tolerances must be > 0".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::InvalidParameter("n_starts must be >= 1".into()));
        }
        self.admm.check()
    }
}

/// One unit of the outer sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Mode { decomposition: usize, mode: usize },
    Coupling(usize),
}

/// Update order: decompositions in order, each in its mode order; a coupled
/// mode pulls its whole coupling group in at its first occurrence.
pub fn schedule<T: Scalar>(model: &ModelSpec<T>) -> Vec<Block> {
    let mut out = Vec::new();
    for (d, spec) in model.decompositions.iter().enumerate() {
        for &mode in spec.kind.mode_order() {
            let block = match model.coupling_of(d, mode) {
                Some((c, _)) => Block::Coupling(c),
                None => Block::Mode { decomposition: d, mode },
            };
            if !out.contains(&block) {
                out.push(block);
            }
        }
    }
    out
}

/// Human-readable mode label such as `d0.B` or `d1.m0`.
pub fn mode_label<T: Scalar>(model: &ModelSpec<T>, d: usize, mode: usize) -> String {
    match model.decompositions[d].kind {
        DecompositionKind::Parafac2 => format!("d{d}.{}", ["A", "B", "C"][mode]),
        _ => format!("d{d}.m{mode}"),
    }
}

fn block_label<T: Scalar>(model: &ModelSpec<T>, b: &Block) -> String {
    match *b {
        Block::Mode { decomposition, mode } => mode_label(model, decomposition, mode),
        Block::Coupling(c) => {
            let names: Vec<String> = model.couplings[c]
                .members
                .iter()
                .map(|m| mode_label(model, m.decomposition, m.mode))
                .collect();
            format!("{{{}}}", names.join(","))
        }
    }
}

/// Regularized objective: `Σ_i w_i‖data_i − model_i‖² + Σ g(factor)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionValue<T> {
    pub value: T,
    /// Unweighted `‖data_i − model_i‖²_F` per dataset.
    pub residuals_sq: Vec<T>,
    pub penalty: T,
    /// False if any hard constraint is violated by the factors.
    pub feasible: bool,
}

pub fn function_value<T: Scalar>(model: &ModelSpec<T>, factors: &FactorSet<T>) -> Result<FunctionValue<T>> {
    let mut value = T::zero();
    let mut penalty = T::zero();
    let mut feasible = true;
    let mut residuals_sq = Vec::with_capacity(model.decompositions.len());
    for (d, spec) in model.decompositions.iter().enumerate() {
        let f = &factors.decompositions[d];
        let res = f.residual_sq(&model.datasets[d])?;
        value += spec.weight * res;
        residuals_sq.push(res);
        for (reg, fm) in spec.regularizers.iter().zip(&f.modes) {
            let p = match fm {
                FactorMatrix::Dense(x) => reg.penalty(x),
                FactorMatrix::Slices(s) => s
                    .iter()
                    .map(|x| reg.penalty(x))
                    .fold(crate::prox::Penalty::zero(), |a, b| a.combine(b)),
            };
            penalty += p.value;
            feasible &= p.feasible;
        }
    }
    Ok(FunctionValue {
        value: value + penalty,
        residuals_sq,
        penalty,
        feasible,
    })
}

/// Per-iteration record of an outer loop.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub f: f64,
    /// Fit in percent per dataset.
    pub fits: Vec<f64>,
    /// `(1/K) Σ_k ‖B_k − P_kΔ_B‖/‖B_k‖` per PARAFAC2 decomposition, using the
    /// solver's own `P_k` and `Δ_B`.
    pub parafac2_residuals: Vec<f64>,
    /// Relative coupling residual per coupling (largest over members).
    pub coupling_residuals: Vec<f64>,
    /// Largest relative gap `‖X − Z‖/‖X‖` over regularized modes.
    pub split_gap: f64,
    pub feasible: bool,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    AbsoluteTolerance,
    RelativeTolerance,
    MaxIterations,
    TimeBudget,
    Diverged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AbsoluteTolerance => "absolute_tolerance",
            Self::RelativeTolerance => "relative_tolerance",
            Self::MaxIterations => "max_iterations",
            Self::TimeBudget => "time_budget",
            Self::Diverged => "diverged",
        })
    }
}

/// Result of one start.
#[derive(Clone, Debug)]
pub struct RunReport<T> {
    pub start: usize,
    pub seed: u64,
    /// Record 0 describes the initialization.
    pub records: Vec<IterationRecord>,
    pub final_f: f64,
    pub stop_reason: StopReason,
    pub factors: FactorSet<T>,
    pub state: SolverState<T>,
    pub mode_order: Vec<String>,
    pub seconds: f64,
    pub zero_trace_events: usize,
}

impl<T> RunReport<T> {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("a report always holds the initial record")
    }
}

/// Result of [`multi_start_fit`].
#[derive(Clone, Debug)]
pub struct MultiStartReport<T> {
    pub best: usize,
    pub runs: Vec<Result<RunReport<T>>>,
}

impl<T> MultiStartReport<T> {
    pub fn best_run(&self) -> &RunReport<T> {
        self.runs[self.best].as_ref().expect("best run succeeded")
    }

    pub fn into_best(mut self) -> RunReport<T> {
        self.runs.swap_remove(self.best).expect("best run succeeded")
    }
}

fn observe<T: Scalar>(
    model: &ModelSpec<T>,
    state: &SolverState<T>,
    iteration: usize,
    start: Instant,
) -> Result<IterationRecord> {
    let fv = function_value(model, &state.factors)?;
    let fits = fv
        .residuals_sq
        .iter()
        .zip(&model.datasets)
        .map(|(&r, data)| 100.0 * (1.0 - r.to_f64_lossy() / data.frobenius_norm_sq().to_f64_lossy()))
        .collect();

    let mut parafac2_residuals = Vec::new();
    for (d, spec) in model.decompositions.iter().enumerate() {
        if spec.kind != DecompositionKind::Parafac2 {
            continue;
        }
        let aux = state.aux[d][PARAFAC2_B].as_slices();
        let bs = state.factors.decompositions[d].modes[PARAFAC2_B].as_slices();
        let mut acc = 0.0;
        for (b, p) in bs.iter().zip(&aux.p) {
            let pd = p.matmul(&aux.delta_b)?;
            let nb = b.frobenius_norm().to_f64_lossy();
            acc += if nb > 0.0 { b.distance(&pd)?.to_f64_lossy() / nb } else { 0.0 };
        }
        parafac2_residuals.push(acc / bs.len() as f64);
    }

    let mut coupling_residuals = Vec::with_capacity(model.couplings.len());
    for (c, cs) in model.couplings.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, m) in cs.members.iter().enumerate() {
            let x = state.factors.decompositions[m.decomposition].dense(m.mode);
            let delta = &state.deltas[c];
            use crate::model::CouplingCase::*;
            let (lhs, rhs) = match cs.case {
                Exact => (x.clone(), delta.clone()),
                TransformFactorRows => (cs.transform(i, x.rows()).matmul(x)?, delta.clone()),
                TransformDeltaRows => (x.clone(), cs.transform(i, x.rows()).matmul(delta)?),
                TransformFactorCols => (x.matmul(&cs.transform(i, x.cols()))?, delta.clone()),
                TransformDeltaCols => (x.clone(), delta.matmul(&cs.transform(i, x.cols()))?),
            };
            let n = lhs.frobenius_norm().to_f64_lossy().max(f64::MIN_POSITIVE);
            worst = worst.max(lhs.distance(&rhs)?.to_f64_lossy() / n);
        }
        coupling_residuals.push(worst);
    }

    let mut split_gap: f64 = 0.0;
    for (d, modes) in state.aux.iter().enumerate() {
        for (m, aux) in modes.iter().enumerate() {
            let fm = &state.factors.decompositions[d].modes[m];
            let gap = match (aux, fm) {
                (crate::admm::ModeAux::Dense(a), FactorMatrix::Dense(x)) => match &a.z {
                    Some(z) => Some((x.distance(z)?, x.frobenius_norm())),
                    None => None,
                },
                (crate::admm::ModeAux::Slices(a), FactorMatrix::Slices(bs)) => match &a.z {
                    Some(zs) => {
                        let mut num = T::zero();
                        let mut den = T::zero();
                        for (b, z) in bs.iter().zip(zs) {
                            num += b.distance(z)?.powi(2);
                            den += b.frobenius_norm_sq();
                        }
                        Some((num.sqrt(), den.sqrt()))
                    }
                    None => None,
                },
                _ => None,
            };
            if let Some((num, den)) = gap {
                let den = den.to_f64_lossy().max(f64::MIN_POSITIVE);
                split_gap = split_gap.max(num.to_f64_lossy() / den);
            }
        }
    }

    Ok(IterationRecord {
        iteration,
        f: fv.value.to_f64_lossy(),
        fits,
        parafac2_residuals,
        coupling_residuals,
        split_gap,
        feasible: fv.feasible,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn max_gap(rec: &IterationRecord) -> f64 {
    rec.parafac2_residuals
        .iter()
        .chain(&rec.coupling_residuals)
        .copied()
        .fold(rec.split_gap, f64::max)
}

/// Runs the outer loop from a prepared state.
pub fn fit_from_state<T: Scalar>(
    model: &ModelSpec<T>,
    mut state: SolverState<T>,
    settings: &OuterSettings<T>,
    start_id: usize,
    seed: u64,
) -> Result<RunReport<T>> {
    let t0 = Instant::now();
    let blocks = schedule(model);
    let mode_order = blocks.iter().map(|b| block_label(model, b)).collect();
    let mut records = vec![observe(model, &state, 0, t0)?];
    let abs_tol = settings.outer_abs_tol.to_f64_lossy();
    let rel_tol = settings.outer_rel_tol.to_f64_lossy();
    let mut stop_reason = StopReason::MaxIterations;

    for it in 1..=settings.max_outer_iters {
        if !settings.warm_start && it > 1 {
            state.reset_duals();
        }
        for b in &blocks {
            match *b {
                Block::Mode { decomposition, mode }
                    if model.decompositions[decomposition].kind == DecompositionKind::Parafac2
                        && mode == PARAFAC2_B =>
                {
                    update_parafac2_b_mode(&mut state, model, decomposition, &settings.admm)?
                }
                Block::Mode { decomposition, mode } => {
                    update_static_mode(&mut state, model, decomposition, mode, &settings.admm)?
                }
                Block::Coupling(c) => update_coupled_group(&mut state, model, c, &settings.admm)?,
            }
        }
        let rec = observe(model, &state, it, t0)?;
        if !rec.f.is_finite() || !state.factors.is_finite() {
            return Err(Error::Divergence(format!(
                "start {start_id}: non-finite function value at iteration {it}"
            )));
        }
        let prev = records.last().expect("initial record").f;
        let change = (prev - rec.f).abs();
        let gaps_ok = settings
            .feasibility_tol
            .is_none_or(|tol| max_gap(&rec) <= tol.to_f64_lossy());
        records.push(rec);
        if gaps_ok && change < abs_tol {
            stop_reason = StopReason::AbsoluteTolerance;
            break;
        }
        if gaps_ok && change < rel_tol * prev.abs() {
            stop_reason = StopReason::RelativeTolerance;
            break;
        }
        if settings.time_budget.is_some_and(|b| t0.elapsed() >= b) {
            stop_reason = StopReason::TimeBudget;
            break;
        }
    }

    let final_f = records.last().expect("initial record").f;
    Ok(RunReport {
        start: start_id,
        seed,
        records,
        final_f,
        stop_reason,
        factors: state.factors.clone(),
        zero_trace_events: state.zero_trace_events,
        state,
        mode_order,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Converts dense PARAFAC2 datasets to slice lists once, so inner solvers
/// can borrow the slices.
pub fn prepare_model<T: Scalar>(model: &ModelSpec<T>) -> ModelSpec<T> {
    let mut m = model.clone();
    for (d, spec) in model.decompositions.iter().enumerate() {
        if spec.kind == DecompositionKind::Parafac2 {
            if let Some(Dataset::Tensor(t)) = m.datasets.get(d) {
                m.datasets[d] = Dataset::Ragged(crate::tensor::RaggedTensor::from(t));
            }
        }
    }
    m
}

/// Single start seeded with `settings.seed`.
pub fn fit<T: Scalar>(model: &ModelSpec<T>, settings: &OuterSettings<T>) -> Result<RunReport<T>> {
    settings.check()?;
    model.ensure_valid()?;
    let model = prepare_model(model);
    let state = SolverState::random_init(&model, settings.seed)?;
    fit_from_state(&model, state, settings, 0, settings.seed)
}

/// Seed of start `i`.
pub fn start_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// `settings.n_starts` independent starts (start `i` uses seed
/// `settings.seed + i`); the lowest final function value wins.
pub fn multi_start_fit<T: Scalar>(model: &ModelSpec<T>, settings: &OuterSettings<T>) -> Result<MultiStartReport<T>> {
    multi_start_fit_with(model, settings, Vec::new())
}

/// Like [`multi_start_fit`], with the first starts initialized from the given
/// factor sets instead of random draws.
pub fn multi_start_fit_with<T: Scalar>(
    model: &ModelSpec<T>,
    settings: &OuterSettings<T>,
    inits: Vec<FactorSet<T>>,
) -> Result<MultiStartReport<T>> {
    settings.check()?;
    model.ensure_valid()?;
    let model = prepare_model(model);
    let n = settings.n_starts.max(inits.len());
    let run = |i: usize| -> Result<RunReport<T>> {
        let seed = start_seed(settings.seed, i);
        let mut rng = seeded_rng(seed);
        let factors = match inits.get(i) {
            Some(f) => f.clone(),
            None => random_factors(&model, &mut rng)?,
        };
        let state = SolverState::from_factors(&model, factors, &mut rng)?;
        fit_from_state(&model, state, settings, i, seed)
    };
    let runs: Vec<Result<RunReport<T>>> = if settings.parallel_starts && n > 1 {
        (0..n).into_par_iter().map(run).collect()
    } else {
        (0..n).map(run).collect()
    };
    let best = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|r| (i, r.final_f)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| {
            let msgs: Vec<String> = runs
                .iter()
                .filter_map(|r| r.as_ref().err().map(|e| e.to_string()))
                .collect();
            Error::Divergence(format!("all {n} starts failed: {}", msgs.join("; ")))
        })?;
    Ok(MultiStartReport { best, runs })
}
