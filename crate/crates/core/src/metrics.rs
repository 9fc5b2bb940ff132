//! Fit, PARAFAC2 residual, factor match score and clustering accuracy.

use rand::Rng;

use crate::admm::parafac2_projection;
use crate::error::{Error, Result};
use crate::model::{seeded_rng, Dataset, DecompositionKind, FactorMatrix, FactorSet, Factors, PARAFAC2_B};
use crate::scalar::Scalar;
use crate::tensor::{cholesky_factor_jittered, DenseMatrix};

/// `100·(1 − ‖Z − Ẑ‖²/‖Z‖²)`. Can be negative.
pub fn fit_percent<T: Scalar>(data: &Dataset<T>, reconstruction: &Dataset<T>) -> Result<f64> {
    let norm = data.frobenius_norm_sq().to_f64_lossy();
    if norm == 0.0 {
        return Err(Error::Degenerate("fit of an all-zero dataset".into()));
    }
    let err = data.distance_sq(reconstruction)?.to_f64_lossy();
    Ok(100.0 * (1.0 - err / norm))
}

/// Rounds and tolerance of the projection used by [`parafac2_residual`].
pub const RESIDUAL_PROJECTION_ROUNDS: usize = 1000;
pub const RESIDUAL_PROJECTION_TOL: f64 = 1e-10;

/// `(1/K) Σ_k ‖B_k − P_kΔ_B‖/‖B_k‖` for the projection of `{B_k}` onto the
/// PARAFAC2 set.
///
/// The projection starts from `Δ_B` with `Δ_BᵀΔ_B = mean_k B_kᵀB_k`, which
/// is exact for inputs that satisfy the constraint.
pub fn parafac2_residual<T: Scalar>(b: &[DenseMatrix<T>]) -> Result<f64> {
    if b.is_empty() {
        return Err(Error::InvalidParameter("parafac2_residual needs K >= 1".into()));
    }
    if let Some(k) = b.iter().position(|bk| bk.frobenius_norm() == T::zero()) {
        return Err(Error::Degenerate(format!("B_{k} has zero norm")));
    }
    let r = b[0].cols();
    let mut phi = DenseMatrix::zeros(r, r);
    for bk in b {
        phi.add_scaled(T::one() / T::lit(b.len() as f64), &bk.gram())?;
    }
    let delta0 = cholesky_factor_jittered(&phi)?.lower().transpose();
    let proj = parafac2_projection(
        b,
        None,
        &delta0,
        RESIDUAL_PROJECTION_ROUNDS,
        T::lit(RESIDUAL_PROJECTION_TOL),
    )?;
    let mut acc = 0.0;
    for (bk, pk) in b.iter().zip(&proj.p) {
        let fitted = pk.matmul(&proj.delta_b)?;
        acc += (bk.distance(&fitted)? / bk.frobenius_norm()).to_f64_lossy();
    }
    Ok(acc / b.len() as f64)
}

/// Absolute congruences `|⟨t_r, e_s⟩|/(‖t_r‖‖e_s‖)` (`R×R`, truth rows).
pub fn congruence<T: Scalar>(truth: &DenseMatrix<T>, estimate: &DenseMatrix<T>) -> Result<Vec<Vec<f64>>> {
    if truth.shape() != estimate.shape() {
        return Err(Error::DimensionMismatch {
            op: "congruence",
            detail: format!("{:?} vs {:?}", truth.shape(), estimate.shape()),
        });
    }
    let tn = truth.column_norms();
    let en = estimate.column_norms();
    let r = truth.cols();
    Ok((0..r)
        .map(|p| {
            (0..r)
                .map(|q| {
                    let den = (tn[p] * en[q]).to_f64_lossy();
                    if den == 0.0 {
                        0.0
                    } else {
                        (crate::tensor::dot(truth.col(p), estimate.col(q)).to_f64_lossy() / den).abs()
                    }
                })
                .collect()
        })
        .collect())
}

/// Permutation `π` maximizing `Σ_r score[r][π(r)]`: exhaustive for
/// `n ≤ 8`, Hungarian assignment above.
pub fn best_assignment(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    if n <= 8 {
        let mut best = (f64::NEG_INFINITY, (0..n).collect::<Vec<_>>());
        let mut perm: Vec<usize> = (0..n).collect();
        let mut used = vec![false; n];
        search(score, 0, 0.0, &mut perm, &mut used, &mut best);
        best.1
    } else {
        hungarian_max(score)
    }
}

fn search(
    score: &[Vec<f64>],
    row: usize,
    acc: f64,
    perm: &mut Vec<usize>,
    used: &mut [bool],
    best: &mut (f64, Vec<usize>),
) {
    let n = score.len();
    if row == n {
        if acc > best.0 {
            *best = (acc, perm.clone());
        }
        return;
    }
    for c in 0..n {
        if !used[c] {
            used[c] = true;
            perm[row] = c;
            search(score, row + 1, acc + score[row][c], perm, used, best);
            used[c] = false;
        }
    }
}

/// O(n³) Hungarian algorithm on `−score`.
fn hungarian_max(score: &[Vec<f64>]) -> Vec<usize> {
    let n = score.len();
    let inf = f64::INFINITY;
    // 1-based potentials, column matching p[col] = row
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = -score[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            perm[p[j] - 1] = j - 1;
        }
    }
    perm
}

/// FMS of one decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionFms {
    pub total: f64,
    /// FMS restricted to each mode, under the same permutation.
    pub per_mode: Vec<f64>,
    /// Truth component `r` is matched with estimated component `permutation[r]`.
    pub permutation: Vec<usize>,
}

/// Factor match scores of a coupled model.
#[derive(Clone, Debug, PartialEq)]
pub struct FmsResult {
    /// Product of the per-decomposition scores.
    pub total: f64,
    pub decompositions: Vec<DecompositionFms>,
}

/// FMS of one decomposition: mean over components of the product of
/// per-mode absolute congruences, under the best component matching. The
/// `B_k` columns are concatenated over `k`.
pub fn fms_decomposition<T: Scalar>(truth: &Factors<T>, estimate: &Factors<T>) -> Result<DecompositionFms> {
    if truth.kind != estimate.kind || truth.modes.len() != estimate.modes.len() {
        return Err(Error::DimensionMismatch {
            op: "fms",
            detail: "decomposition kinds differ".into(),
        });
    }
    for (m, (t, e)) in truth.modes.iter().zip(&estimate.modes).enumerate() {
        let shapes = |f: &FactorMatrix<T>| -> Vec<(usize, usize)> {
            match f {
                FactorMatrix::Dense(x) => vec![x.shape()],
                FactorMatrix::Slices(s) => s.iter().map(DenseMatrix::shape).collect(),
            }
        };
        if shapes(t) != shapes(e) {
            return Err(Error::DimensionMismatch {
                op: "fms",
                detail: format!("mode {m} shapes differ"),
            });
        }
    }
    let r = truth.rank();
    let per_mode_cong = truth
        .modes
        .iter()
        .zip(&estimate.modes)
        .map(|(t, e)| congruence(&t.stacked(), &e.stacked()))
        .collect::<Result<Vec<_>>>()?;
    let product: Vec<Vec<f64>> = (0..r)
        .map(|p| (0..r).map(|q| per_mode_cong.iter().map(|c| c[p][q]).product()).collect())
        .collect();
    let permutation = best_assignment(&product);
    let mean = |m: &[Vec<f64>]| (0..r).map(|p| m[p][permutation[p]]).sum::<f64>() / r as f64;
    Ok(DecompositionFms {
        total: mean(&product),
        per_mode: per_mode_cong.iter().map(|c| mean(c)).collect(),
        permutation,
    })
}

pub fn fms<T: Scalar>(truth: &FactorSet<T>, estimate: &FactorSet<T>) -> Result<FmsResult> {
    if truth.decompositions.len() != estimate.decompositions.len() {
        return Err(Error::DimensionMismatch {
            op: "fms",
            detail: format!(
                "{} vs {} decompositions",
                truth.decompositions.len(),
                estimate.decompositions.len()
            ),
        });
    }
    let decompositions = truth
        .decompositions
        .iter()
        .zip(&estimate.decompositions)
        .map(|(t, e)| fms_decomposition(t, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(FmsResult {
        total: decompositions.iter().map(|d| d.total).product(),
        decompositions,
    })
}

/// FMS of a single factor matrix with its own best matching.
pub fn matrix_fms<T: Scalar>(truth: &DenseMatrix<T>, estimate: &DenseMatrix<T>) -> Result<(f64, Vec<usize>)> {
    let c = congruence(truth, estimate)?;
    let perm = best_assignment(&c);
    let r = c.len();
    Ok(((0..r).map(|p| c[p][perm[p]]).sum::<f64>() / r as f64, perm))
}

/// Columns of the factor used for clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterColumns {
    FirstTwo,
    All,
}

pub const KMEANS_RESTARTS: usize = 20;
pub const KMEANS_SEED: u64 = 0x6b6d_6561_6e73;

/// k-means with k-means++ seeding; returns labels of the restart with the
/// lowest within-cluster sum of squares.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} with {n} points")));
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut rng = seeded_rng(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
        while centers.len() < k {
            let d: Vec<f64> = points
                .iter()
                .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d.iter().sum();
            let next = if total > 0.0 {
                let mut t = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (i, &di) in d.iter().enumerate() {
                    if t < di {
                        idx = i;
                        break;
                    }
                    t -= di;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            centers.push(points[next].clone());
        }
        let mut labels = vec![0usize; n];
        for _ in 0..300 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let l = (0..k)
                    .min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b])))
                    .expect("k >= 1");
                if l != labels[i] {
                    labels[i] = l;
                    changed = true;
                }
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &l) in points.iter().zip(&labels) {
                counts[l] += 1;
                for (s, v) in sums[l].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&labels).map(|(p, &l)| dist2(p, &centers[l])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Percentage of rows whose k-means cluster maps to their label under the
/// best cluster-to-label assignment.
pub fn clustering_accuracy<T: Scalar>(
    a: &DenseMatrix<T>,
    labels: &[usize],
    k: usize,
    columns: ClusterColumns,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidParameter("clustering needs k >= 2".into()));
    }
    if labels.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            op: "clustering_accuracy",
            detail: format!("{} labels for {} rows", labels.len(), a.rows()),
        });
    }
    let cols = match columns {
        ClusterColumns::FirstTwo => a.cols().min(2),
        ClusterColumns::All => a.cols(),
    };
    let points: Vec<Vec<f64>> = (0..a.rows())
        .map(|i| (0..cols).map(|j| a[(i, j)].to_f64_lossy()).collect())
        .collect();
    let clusters = kmeans(&points, k, KMEANS_RESTARTS, KMEANS_SEED)?;
    let n_labels = labels.iter().copied().max().map_or(0, |m| m + 1);
    let size = k.max(n_labels);
    let mut confusion = vec![vec![0.0; size]; size];
    for (&c, &l) in clusters.iter().zip(labels) {
        confusion[c][l] += 1.0;
    }
    let assign = best_assignment(&confusion);
    let correct: f64 = (0..size).map(|c| confusion[c][assign[c]]).sum();
    Ok(100.0 * correct / labels.len() as f64)
}

/// Ground truth a fit is scored against.
#[derive(Clone, Copy, Debug)]
pub struct Reference<'a, T> {
    pub truth: Option<&'a FactorSet<T>>,
    /// Cluster label per row of the first factor of decomposition 0.
    pub labels: Option<&'a [usize]>,
    /// That factor before any perturbation.
    pub clean_a: Option<&'a DenseMatrix<T>>,
}

impl<T> Default for Reference<'_, T> {
    fn default() -> Self {
        Self {
            truth: None,
            labels: None,
            clean_a: None,
        }
    }
}

/// Scores of one fitted factor set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Fit per dataset, in percent.
    pub fits: Vec<f64>,
    /// [`parafac2_residual`] per PARAFAC2 decomposition, in model order.
    pub parafac2_residuals: Vec<f64>,
    pub fms: Option<FmsResult>,
    /// Clustering accuracy of the first factor of each decomposition whose
    /// row count matches the labels.
    pub clustering: Vec<Option<f64>>,
    /// FMS of the first factor of decomposition 0 against the clean one.
    pub fms_a_clean: Option<f64>,
}

/// Fits, residuals and, when a reference is given, FMS and clustering.
/// With no datasets the fits are left empty.
pub fn evaluate<T: Scalar>(
    datasets: &[Dataset<T>],
    factors: &FactorSet<T>,
    reference: Reference<'_, T>,
) -> Result<Evaluation> {
    if !datasets.is_empty() && datasets.len() != factors.decompositions.len() {
        return Err(Error::DimensionMismatch {
            op: "evaluate",
            detail: format!("{} datasets for {} decompositions", datasets.len(), factors.decompositions.len()),
        });
    }
    let mut fits = Vec::with_capacity(datasets.len());
    for (x, f) in datasets.iter().zip(&factors.decompositions) {
        let norm = x.frobenius_norm_sq().to_f64_lossy();
        if norm == 0.0 {
            return Err(Error::Degenerate("fit of an all-zero dataset".into()));
        }
        fits.push(100.0 * (1.0 - f.residual_sq(x)?.to_f64_lossy() / norm));
    }
    let parafac2_residuals = factors
        .decompositions
        .iter()
        .filter(|f| f.kind == DecompositionKind::Parafac2)
        .map(|f| parafac2_residual(f.modes[PARAFAC2_B].as_slices()))
        .collect::<Result<Vec<_>>>()?;
    let fms = reference.truth.map(|t| fms(t, factors)).transpose()?;
    // First factor of decomposition d, columns in truth order when known.
    let first = |d: usize| {
        let a = factors.decompositions[d].dense(0);
        match &fms {
            Some(s) => a.select_columns(&s.decompositions[d].permutation),
            None => a.clone(),
        }
    };
    let mut clustering = Vec::with_capacity(factors.decompositions.len());
    for d in 0..factors.decompositions.len() {
        clustering.push(match reference.labels {
            Some(labels) if labels.len() == factors.decompositions[d].dense(0).rows() => {
                let k = labels.iter().copied().max().map_or(0, |m| m + 1);
                Some(clustering_accuracy(&first(d), labels, k, ClusterColumns::FirstTwo)?)
            }
            _ => None,
        });
    }
    let fms_a_clean = match (reference.clean_a, factors.decompositions.is_empty()) {
        (Some(clean), false) => Some(matrix_fms(clean, &first(0))?.0),
        _ => None,
    };
    Ok(Evaluation {
        fits,
        parafac2_residuals,
        fms,
        clustering,
        fms_a_clean,
    })
}
