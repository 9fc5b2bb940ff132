//! Seeded generators for the synthetic experiment families and the models
//! fitted to them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    seeded_rng, selector, CouplingCase, CouplingMember, CouplingSpec, Dataset, DecompositionKind,
    DecompositionSpec, FactorSet, Factors, ModelSpec, PARAFAC2_B, PARAFAC2_C,
};
use crate::prox::Regularizer;
use crate::scalar::Scalar;
use crate::tensor::{DenseMatrix, DenseTensor3, RaggedTensor};

/// Standard deviation of the background noise on the evolving-network `B_k`.
pub const EXP3_BACKGROUND_SIGMA: f64 = 0.1;
/// Ridge penalty of the regularized evolving-network model.
pub const EXP3_RIDGE: f64 = 1e-4;
/// Graph-Laplacian penalty on the smooth `B_k` of the partial-coupling model.
pub const EXP4_SMOOTHNESS: f64 = 0.01;

/// Named synthetic experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    Exp1a,
    Exp1b,
    Exp1c,
    Exp2a,
    Exp2b,
    Exp2c,
    Exp2d,
    Exp3,
    Exp4,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Self::Exp1a,
        Self::Exp1b,
        Self::Exp1c,
        Self::Exp2a,
        Self::Exp2b,
        Self::Exp2c,
        Self::Exp2d,
        Self::Exp3,
        Self::Exp4,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Exp1a => "exp1a",
            Self::Exp1b => "exp1b",
            Self::Exp1c => "exp1c",
            Self::Exp2a => "exp2a",
            Self::Exp2b => "exp2b",
            Self::Exp2c => "exp2c",
            Self::Exp2d => "exp2d",
            Self::Exp3 => "exp3",
            Self::Exp4 => "exp4",
        }
    }

    /// Default noise level of each dataset (tensor `X` first).
    pub fn default_noise(self) -> [f64; 2] {
        match self {
            Self::Exp1c | Self::Exp2c => [0.8, 0.2],
            Self::Exp3 => [0.0, 0.0],
            Self::Exp4 => [0.5, 0.5],
            _ => [0.2, 0.2],
        }
    }

    /// Dimensions of the PARAFAC2/CP families.
    pub fn dims(self) -> Option<Exp12Dims> {
        let small = Exp12Dims {
            i: 40,
            j: 60,
            k: 50,
            y_cols: 60,
            y_third: None,
            rank: 4,
        };
        let large = Exp12Dims {
            i: 200,
            j: 250,
            k: 200,
            y_cols: 300,
            y_third: None,
            rank: 4,
        };
        Some(match self {
            Self::Exp1a | Self::Exp1c => small,
            Self::Exp1b => large,
            Self::Exp2a | Self::Exp2c => Exp12Dims {
                y_third: Some(50),
                ..small
            },
            Self::Exp2b => Exp12Dims {
                y_third: Some(200),
                ..large
            },
            Self::Exp2d => Exp12Dims {
                y_third: Some(50),
                rank: 10,
                ..small
            },
            Self::Exp3 | Self::Exp4 => return None,
        })
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment '{s}'")))
    }
}

/// Sizes for the shifted-`B_k` families: `X` is `i×j×k`, `Y` is `k×y_cols`
/// or the CP tensor `k×y_cols×y_third`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exp12Dims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub y_cols: usize,
    pub y_third: Option<usize>,
    pub rank: usize,
}

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub experiment: Experiment,
    /// Noise level `η` per dataset.
    pub noise: [f64; 2],
    /// Level of the Gaussian perturbation of `A` (evolving-network family).
    pub a_noise: f64,
    /// Overrides the experiment's default sizes.
    pub dims: Option<Exp12Dims>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            experiment,
            noise: experiment.default_noise(),
            a_noise: 0.0,
            dims: None,
            seed,
        }
    }

    pub fn with_noise(mut self, noise: [f64; 2]) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_a_noise(mut self, eta: f64) -> Self {
        self.a_noise = eta;
        self
    }

    pub fn with_dims(mut self, dims: Exp12Dims) -> Self {
        self.dims = Some(dims);
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.noise.iter().chain([&self.a_noise]).any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::InvalidParameter("noise levels must be finite and >= 0".into()));
        }
        if let Some(d) = self.dims {
            if [d.i, d.j, d.k, d.y_cols, d.rank].contains(&0) || d.y_third == Some(0) {
                return Err(Error::InvalidParameter("dimensions must be positive".into()));
            }
            if d.rank > d.i.min(d.j).min(d.k) {
                return Err(Error::InvalidParameter(format!("rank {} exceeds a dimension", d.rank)));
            }
        }
        Ok(())
    }
}

/// Generated datasets with their ground truth.
#[derive(Clone, Debug)]
pub struct SynthData<T> {
    pub experiment: Experiment,
    /// Noisy datasets normalized to unit Frobenius norm.
    pub datasets: Vec<Dataset<T>>,
    /// Noise-free datasets, reconstructed from `truth`.
    pub clean: Vec<Dataset<T>>,
    pub truth: FactorSet<T>,
    /// Cluster label per row of `A` (evolving-network family).
    pub labels: Option<Vec<usize>>,
    /// `A` before its perturbation (evolving-network family).
    pub clean_a: Option<DenseMatrix<T>>,
    /// Per decomposition and component, whether it is shared through `Δ`.
    pub shared: Option<Vec<Vec<bool>>>,
}

/// Model switches on top of an experiment's defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOptions {
    pub coupled: bool,
    /// Ridge penalty on every mode.
    pub ridge: Option<f64>,
    /// Graph-Laplacian penalty on `B_k`.
    pub smoothness: Option<f64>,
}

impl ModelOptions {
    pub fn for_experiment(experiment: Experiment) -> Self {
        Self {
            coupled: true,
            ridge: None,
            smoothness: (experiment == Experiment::Exp4).then_some(EXP4_SMOOTHNESS),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform_matrix<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| T::lit(lo + (hi - lo) * rng.random::<f64>()))
}

fn normal_matrix<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| T::lit(normal(rng)))
}

fn values_mut<T: Scalar>(x: &mut Dataset<T>) -> Box<dyn Iterator<Item = &mut T> + '_> {
    match x {
        Dataset::Matrix(m) => Box::new(m.values_mut().iter_mut()),
        Dataset::Tensor(t) => Box::new(t.values_mut().iter_mut()),
        Dataset::Ragged(r) => Box::new(r.slices_mut().iter_mut().flat_map(|s| s.values_mut().iter_mut())),
    }
}

/// `X + η·N·‖X‖/‖N‖` with standard normal `N` drawn from `seed`, without
/// normalization.
pub fn perturb<T: Scalar>(x: &Dataset<T>, eta: f64, seed: u64) -> Result<Dataset<T>> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise level {eta}")));
    }
    let x_norm = x.frobenius_norm().to_f64_lossy();
    if x_norm == 0.0 {
        return Err(Error::Degenerate("cannot add relative noise to all-zero data".into()));
    }
    let mut out = x.clone();
    if eta == 0.0 {
        return Ok(out);
    }
    let mut rng = seeded_rng(seed);
    let noise: Vec<f64> = values_mut(&mut out).map(|_| normal(&mut rng)).collect();
    let n_norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = eta * x_norm / n_norm;
    for (v, n) in values_mut(&mut out).zip(noise) {
        *v += T::lit(scale * n);
    }
    Ok(out)
}

/// [`perturb`] followed by scaling to unit Frobenius norm.
pub fn add_noise<T: Scalar>(x: &Dataset<T>, eta: f64, seed: u64) -> Result<Dataset<T>> {
    let mut out = perturb(x, eta, seed)?;
    let norm = out.frobenius_norm();
    out.scale_mut(T::one() / norm);
    Ok(out)
}

/// Generates the datasets of `spec`.
pub fn generate<T: Scalar>(spec: &SynthSpec) -> Result<SynthData<T>> {
    spec.check()?;
    let mut rng = seeded_rng(spec.seed);
    let mut data = match spec.experiment {
        Experiment::Exp3 => gen_exp3(&mut rng, spec.a_noise)?,
        Experiment::Exp4 => gen_exp4(&mut rng)?,
        e => {
            let dims = spec.dims.or(e.dims()).expect("shifted families have dimensions");
            gen_exp12(&mut rng, dims)?
        }
    };
    data.experiment = spec.experiment;
    data.datasets = data
        .clean
        .iter()
        .zip(spec.noise)
        .map(|(x, eta)| add_noise(x, eta, rng.random()))
        .collect::<Result<_>>()?;
    Ok(data)
}

/// `B_k` as circular row shifts by `k` of one base pattern, so every
/// `B_kᵀB_k` equals the base Gram.
pub fn shifted_slices<T: Scalar>(base: &DenseMatrix<T>, k: usize) -> Vec<DenseMatrix<T>> {
    let j = base.rows();
    (0..k)
        .map(|s| DenseMatrix::from_fn(j, base.cols(), |row, r| base[((row + j - s % j) % j, r)]))
        .collect()
}

fn gen_exp12<T: Scalar>(rng: &mut ChaCha8Rng, d: Exp12Dims) -> Result<SynthData<T>> {
    let r = d.rank;
    let a = uniform_matrix(rng, d.i, r, 0.0, 1.0);
    let base = uniform_matrix(rng, d.j, r, 0.0, 1.0);
    let b = shifted_slices(&base, d.k);
    let c = uniform_matrix(rng, d.k, r, 0.1, 1.1);
    let f = uniform_matrix(rng, d.y_cols, r, 0.0, 1.0);
    let second = match d.y_third {
        None => Factors::matrix(c.clone(), f),
        Some(n) => Factors::cp(c.clone(), f, uniform_matrix(rng, n, r, 0.0, 1.0)),
    };
    let truth = FactorSet::new(vec![Factors::parafac2(a, b, c), second]);
    let clean = reconstruct_all(&truth)?;
    Ok(SynthData {
        experiment: Experiment::Exp1a,
        datasets: Vec::new(),
        clean,
        truth,
        labels: None,
        clean_a: None,
        shared: None,
    })
}

fn reconstruct_all<T: Scalar>(truth: &FactorSet<T>) -> Result<Vec<Dataset<T>>> {
    truth.decompositions.iter().map(|f| f.reconstruct()).collect()
}

/// Indicator of rows `[start, start + width)` clipped to `0..n`.
fn window(n: usize, start: f64, width: f64) -> impl Fn(usize) -> f64 {
    let lo = start.round().max(0.0) as usize;
    let hi = ((start + width).round().max(0.0) as usize).min(n);
    move |row| if row >= lo && row < hi { 1.0 } else { 0.0 }
}

fn gen_exp3<T: Scalar>(rng: &mut ChaCha8Rng, a_noise: f64) -> Result<SynthData<T>> {
    let (i, j, k, y_cols, r) = (40usize, 120usize, 50usize, 60usize, 3usize);

    // A: four clusters of ten on a zero-mean 2×2 grid, third column free
    let centers = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
    let labels: Vec<usize> = (0..i).map(|row| row / (i / 4)).collect();
    let mut a_clean = DenseMatrix::<T>::zeros(i, r);
    for (row, &l) in labels.iter().enumerate() {
        a_clean[(row, 0)] = T::lit(centers[l].0 + 0.2 * normal(rng));
        a_clean[(row, 1)] = T::lit(centers[l].1 + 0.2 * normal(rng));
        a_clean[(row, 2)] = T::lit(rng.random::<f64>());
    }
    let a = match perturb(&Dataset::Matrix(a_clean.clone()), a_noise, rng.random())? {
        Dataset::Matrix(m) => m,
        _ => unreachable!("perturb keeps the layout"),
    };

    // B_k: shrinking, shifting and growing windows on disjoint row blocks,
    // plus background noise; unit-norm columns
    let third = j as f64 / 3.0;
    let b: Vec<DenseMatrix<T>> = (0..k)
        .map(|kk| {
            let t = kk as f64 / (k - 1) as f64;
            let cols: [Box<dyn Fn(usize) -> f64>; 3] = [
                Box::new(window(j, 0.0, third * (1.0 - 0.7 * t))),
                Box::new(window(j, third * (1.0 + 0.5 * t), third * 0.5)),
                Box::new(window(j, 2.0 * third, third * (0.3 + 0.7 * t))),
            ];
            let mut bk =
                DenseMatrix::from_fn(j, r, |row, col| T::lit(cols[col](row) + EXP3_BACKGROUND_SIGMA * normal(rng)));
            bk.normalize_columns();
            bk
        })
        .collect();

    // C: exponential, sigmoid and random temporal profiles
    let mut c = DenseMatrix::<T>::zeros(k, r);
    for kk in 0..k {
        let t = kk as f64 / (k - 1) as f64;
        c[(kk, 0)] = T::lit(0.1 + (2.0 * (t - 1.0)).exp());
        c[(kk, 1)] = T::lit(0.1 + 1.0 / (1.0 + (-12.0 * (t - 0.5)).exp()));
        c[(kk, 2)] = T::lit(0.1 + rng.random::<f64>());
    }

    let f = uniform_matrix(rng, y_cols, r, 0.0, 1.0);
    let truth = FactorSet::new(vec![
        Factors::parafac2(a, b, c),
        Factors::matrix(a_clean.clone(), f),
    ]);
    let clean = reconstruct_all(&truth)?;
    Ok(SynthData {
        experiment: Experiment::Exp3,
        datasets: Vec::new(),
        clean,
        truth,
        labels: Some(labels),
        clean_a: Some(a_clean),
        shared: None,
    })
}

/// Orthonormalizes the columns of `m` (modified Gram–Schmidt).
fn orthonormalize<T: Scalar>(m: &mut DenseMatrix<T>) -> Result<()> {
    for p in 0..m.cols() {
        for q in 0..p {
            let proj = crate::tensor::dot(m.col(q), m.col(p));
            let qv = m.col(q).to_vec();
            crate::tensor::axpy(-proj, &qv, m.col_mut(p));
        }
        let n = crate::tensor::norm2(m.col(p));
        if n <= T::epsilon() {
            return Err(Error::Degenerate("rank-deficient smooth basis".into()));
        }
        for v in m.col_mut(p) {
            *v /= n;
        }
    }
    Ok(())
}

/// Smooth `J×R` matrix with orthonormal columns: each column is a sum of
/// three random low-frequency sinusoids, then orthonormalized.
fn smooth_orthonormal<T: Scalar>(rng: &mut ChaCha8Rng, j: usize, r: usize) -> Result<DenseMatrix<T>> {
    let mut m = DenseMatrix::zeros(j, r);
    for col in 0..r {
        for _ in 0..3 {
            let freq = 0.5 + 2.5 * rng.random::<f64>();
            let phase = std::f64::consts::TAU * rng.random::<f64>();
            let amp = normal(rng);
            for row in 0..j {
                let x = row as f64 / j as f64;
                m[(row, col)] += T::lit(amp * (std::f64::consts::TAU * freq * x + phase).sin());
            }
        }
    }
    orthonormalize(&mut m)?;
    Ok(m)
}

/// Columns of `Δ` used by the PARAFAC2 (`C`) and CP (`E`) members.
pub const EXP4_C_COLUMNS: [usize; 3] = [0, 1, 2];
pub const EXP4_E_COLUMNS: [usize; 3] = [0, 1, 3];

fn gen_exp4<T: Scalar>(rng: &mut ChaCha8Rng) -> Result<SynthData<T>> {
    let (i, j, k, r) = (30usize, 200usize, 30usize, 3usize);
    let (f_rows, g_rows) = (20usize, 50usize);
    let a = normal_matrix(rng, i, r);
    // well-conditioned Δ_B
    let delta_b = loop {
        let cand: DenseMatrix<T> = normal_matrix(rng, r, r);
        let s = crate::tensor::thin_svd(&cand)?.singular_values;
        if (s[0] / s[r - 1]).to_f64_lossy() < 5.0 {
            break cand;
        }
    };
    let b = (0..k)
        .map(|_| smooth_orthonormal::<T>(rng, j, r)?.matmul(&delta_b))
        .collect::<Result<Vec<_>>>()?;
    let delta = uniform_matrix::<T>(rng, k, 4, 0.1, 1.1);
    let c = delta.select_columns(&EXP4_C_COLUMNS);
    let e = delta.select_columns(&EXP4_E_COLUMNS);
    let f = normal_matrix(rng, f_rows, r);
    let g = normal_matrix(rng, g_rows, r);
    let truth = FactorSet::new(vec![Factors::parafac2(a, b, c), Factors::cp(e, f, g)]);
    let clean = reconstruct_all(&truth)?;
    Ok(SynthData {
        experiment: Experiment::Exp4,
        datasets: Vec::new(),
        clean,
        truth,
        labels: None,
        clean_a: None,
        shared: Some(vec![vec![true, true, false], vec![true, true, false]]),
    })
}

impl<T: Scalar> SynthData<T> {
    /// The model fitted to this experiment's datasets.
    pub fn model(&self, options: &ModelOptions) -> Result<ModelSpec<T>> {
        let half = T::lit(0.5);
        let ridge = options.ridge.map(T::lit);
        let datasets = self.datasets.clone();
        let r = self.truth.decompositions[0].rank();
        let kind2 = self.truth.decompositions[1].kind;
        let par2 = DecompositionSpec::new(DecompositionKind::Parafac2, r).with_weight(half);
        let second = DecompositionSpec::new(kind2, r).with_weight(half);
        let nonneg = |lambda: Option<T>| match lambda {
            Some(l) => Regularizer::NonnegRidge { lambda: l },
            None => Regularizer::Nonneg,
        };
        let plain = |lambda: Option<T>| match lambda {
            Some(l) => Regularizer::Ridge { lambda: l },
            None => Regularizer::None,
        };
        let (d0, d1, couplings) = match self.experiment {
            Experiment::Exp3 => {
                let i = self.truth.decompositions[0].dense(0).rows();
                let d0 = par2
                    .with_regularizer(0, plain(ridge))
                    .with_regularizer(PARAFAC2_B, plain(ridge))
                    .with_regularizer(PARAFAC2_C, nonneg(ridge));
                let d1 = second.with_regularizer(0, plain(ridge)).with_regularizer(1, nonneg(ridge));
                let couplings = if options.coupled {
                    vec![CouplingSpec::exact(&[(0, 0), (1, 0)], (i, r))]
                } else {
                    Vec::new()
                };
                (d0, d1, couplings)
            }
            Experiment::Exp4 => {
                let k = self.truth.decompositions[0].dense(PARAFAC2_C).rows();
                let b_reg = match options.smoothness {
                    Some(l) => Regularizer::GraphLaplacian {
                        lambda: T::lit(l),
                        laplacian: None,
                    },
                    None => plain(ridge),
                };
                let d0 = par2
                    .with_regularizer(0, Regularizer::UnitBallColumns)
                    .with_regularizer(PARAFAC2_B, b_reg)
                    .with_regularizer(PARAFAC2_C, Regularizer::NonnegUnitBallColumns);
                let d1 = second
                    .with_regularizer(0, Regularizer::NonnegUnitBallColumns)
                    .with_regularizer(1, plain(ridge))
                    .with_regularizer(2, plain(ridge));
                let couplings = if options.coupled {
                    vec![CouplingSpec {
                        case: CouplingCase::TransformDeltaCols,
                        members: vec![
                            CouplingMember::new(0, PARAFAC2_C).with_transform(selector(4, &EXP4_C_COLUMNS)?),
                            CouplingMember::new(1, 0).with_transform(selector(4, &EXP4_E_COLUMNS)?),
                        ],
                        delta_shape: (k, 4),
                    }]
                } else {
                    Vec::new()
                };
                (d0, d1, couplings)
            }
            _ => {
                let k = self.truth.decompositions[0].dense(PARAFAC2_C).rows();
                let all = nonneg(ridge);
                let couplings = if options.coupled {
                    vec![CouplingSpec::exact(&[(0, PARAFAC2_C), (1, 0)], (k, r))]
                } else {
                    Vec::new()
                };
                (par2.with_all_regularizers(all.clone()), second.with_all_regularizers(all), couplings)
            }
        };
        let model = ModelSpec::new(datasets, vec![d0, d1], couplings);
        model.ensure_valid()?;
        Ok(model)
    }

    /// Truth, labels and clean `A` for [`crate::metrics::evaluate`].
    pub fn reference(&self) -> crate::metrics::Reference<'_, T> {
        crate::metrics::Reference {
            truth: Some(&self.truth),
            labels: self.labels.as_deref(),
            clean_a: self.clean_a.as_ref(),
        }
    }

    /// The PARAFAC2 tensor alone, for uncoupled single-dataset fits.
    pub fn parafac2_data(&self) -> Result<RaggedTensor<T>> {
        self.datasets[0]
            .to_ragged()
            .ok_or_else(|| Error::InvalidModel("first dataset is not third-order".into()))
    }
}

/// Dense third-order view of a ragged dataset with equal slice widths.
pub fn as_dense_tensor<T: Scalar>(x: &Dataset<T>) -> Result<DenseTensor3<T>> {
    match x {
        Dataset::Tensor(t) => Ok(t.clone()),
        Dataset::Ragged(r) => r.to_dense(),
        Dataset::Matrix(_) => Err(Error::InvalidModel("matrix is not third-order".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::parafac2_residual;

    #[test]
    fn noise_ratio_and_normalization() {
        let x = Dataset::Matrix(DenseMatrix::<f64>::from_fn(5, 4, |i, j| (i + 2 * j) as f64 + 1.0));
        let p = perturb(&x, 0.2, 7).unwrap();
        let noise = p.distance_sq(&x).unwrap().sqrt() / x.frobenius_norm();
        assert!((noise - 0.2).abs() < 1e-12);
        let q = perturb(&x, 0.2, 8).unwrap();
        assert_ne!(p, q);
        assert!((q.distance_sq(&x).unwrap().sqrt() / x.frobenius_norm() - 0.2).abs() < 1e-12);

        let z = add_noise(&x, 0.0, 1).unwrap();
        let mut expect = x.clone();
        expect.scale_mut(1.0 / x.frobenius_norm());
        assert_eq!(z, expect);
        assert!((add_noise(&x, 0.5, 1).unwrap().frobenius_norm() - 1.0).abs() < 1e-12);
        assert!(add_noise(&Dataset::Matrix(DenseMatrix::<f64>::zeros(2, 2)), 0.1, 1).is_err());
    }

    #[test]
    fn exp1_defaults() {
        let d = generate::<f64>(&SynthSpec::new(Experiment::Exp1a, 3)).unwrap();
        match (&d.datasets[0], &d.datasets[1]) {
            (Dataset::Ragged(x), Dataset::Matrix(y)) => {
                assert_eq!((x.rows(), x.num_slices()), (40, 50));
                assert!(x.slice_widths().iter().all(|&w| w == 60));
                assert_eq!(y.shape(), (50, 60));
            }
            _ => panic!("unexpected layouts"),
        }
        let f = &d.truth.decompositions[0];
        assert_eq!(f.rank(), 4);
        assert!(f.dense(PARAFAC2_C).values().iter().all(|&v| (0.1..=1.1).contains(&v)));
        assert!(parafac2_residual(f.modes[PARAFAC2_B].as_slices()).unwrap() <= 1e-8);
    }

    #[test]
    fn exp3_structure() {
        let d = generate::<f64>(&SynthSpec::new(Experiment::Exp3, 1)).unwrap();
        let labels = d.labels.as_ref().unwrap();
        for c in 0..4 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), 10);
        }
        let f = &d.truth.decompositions[0];
        assert_eq!(f.rank(), 3);
        assert!(parafac2_residual(f.modes[PARAFAC2_B].as_slices()).unwrap() > 1e-3);
    }

    #[test]
    fn exp4_structure() {
        let d = generate::<f64>(&SynthSpec::new(Experiment::Exp4, 2)).unwrap();
        let c = d.truth.decompositions[0].dense(PARAFAC2_C);
        let e = d.truth.decompositions[1].dense(0);
        assert!(c.values().iter().chain(e.values()).all(|&v| v >= 0.1));
        assert_eq!(c.col(0), e.col(0));
        assert_eq!(c.col(1), e.col(1));
        assert_eq!(d.shared.as_ref().unwrap()[0], vec![true, true, false]);
        let b = d.truth.decompositions[0].modes[PARAFAC2_B].as_slices();
        assert!(parafac2_residual(b).unwrap() <= 1e-8);
        d.model(&ModelOptions::for_experiment(Experiment::Exp4)).unwrap();
    }

    #[test]
    fn generators_are_deterministic() {
        for e in [Experiment::Exp1a, Experiment::Exp2a, Experiment::Exp3, Experiment::Exp4] {
            let a = generate::<f64>(&SynthSpec::new(e, 11)).unwrap();
            let b = generate::<f64>(&SynthSpec::new(e, 11)).unwrap();
            assert_eq!(a.datasets, b.datasets);
            assert_eq!(a.truth, b.truth);
            for (clean, f) in a.clean.iter().zip(&a.truth.decompositions) {
                assert!(clean.distance_sq(&f.reconstruct().unwrap()).unwrap() <= 1e-24);
            }
        }
    }
}
