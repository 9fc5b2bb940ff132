//! TOML run configuration.
//!
//! A run takes its data either from a generator (`[synth]`) or from a
//! container file (`[data]`). The model is either derived from the
//! generator (`[model]` switches) or spelled out with `[[decomposition]]`
//! and `[[coupling]]` tables, which map one-to-one onto [`ModelSpec`].
//!
//! ```toml
//! [synth]
//! experiment = "exp1a"
//! seed = 0
//! noise = [0.2, 0.2]
//!
//! [[decomposition]]
//! kind = "parafac2"
//! rank = 4
//! regularizers = [{ type = "nonneg" }, { type = "nonneg" }, { type = "nonneg" }]
//!
//! [[decomposition]]
//! kind = "matrix"
//! rank = 4
//! regularizers = [{ type = "nonneg" }, { type = "nonneg" }]
//!
//! [[coupling]]
//! case = "1"
//! members = [[0, 2], [1, 0]]
//! delta_shape = [50, 4]
//!
//! [solver]
//! n_starts = 10
//! max_outer_iters = 1000
//!
//! [output]
//! dir = "out/exp1a"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::admm::AdmmSettings;
use crate::driver::OuterSettings;
use crate::error::{Error, Result};
use crate::io::{self, Block, NamedBlock};
use crate::metrics::Reference;
use crate::model::{
    selector, CouplingCase, CouplingMember, CouplingSpec, Dataset, DecompositionKind, DecompositionSpec, FactorSet,
    ModeRows, ModelSpec,
};
use crate::prox::Regularizer;
use crate::scalar::Scalar;
use crate::synth::{generate, Exp12Dims, Experiment, ModelOptions, SynthData, SynthSpec};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default, rename = "decomposition", skip_serializing_if = "Vec::is_empty")]
    pub decompositions: Vec<DecompositionSection>,
    #[serde(default, rename = "coupling", skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub experiment: String,
    #[serde(default)]
    pub seed: u64,
    /// Noise level per dataset; the experiment default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<[f64; 2]>,
    #[serde(default)]
    pub a_noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<DimsSection>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub y_cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_third: Option<usize>,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Container with `data/<d>` blocks.
    pub file: PathBuf,
    /// Container with `factors/...` blocks to score the fit against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Scale every dataset to unit Frobenius norm before fitting.
    #[serde(default = "yes")]
    pub normalize: bool,
}

/// Switches for the model derived from a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "yes")]
    pub coupled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    /// Graph-Laplacian penalty on `B_k`; `0` disables the experiment default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            coupled: true,
            ridge: None,
            smoothness: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSection {
    pub kind: String,
    pub rank: usize,
    /// Defaults to one over the number of datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    /// One entry per mode; missing trailing entries mean no regularizer.
    #[serde(default)]
    pub regularizers: Vec<RegularizerSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerSection {
    None,
    Nonneg,
    Ridge { lambda: f64 },
    UnitBallColumns,
    NonnegRidge { lambda: f64 },
    NonnegUnitBallColumns,
    /// Path-graph Laplacian over the rows of the factor.
    GraphLaplacian { lambda: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// One of `1`, `2a`, `2b`, `3a`, `3b`.
    pub case: String,
    /// `[decomposition, mode]` pairs.
    pub members: Vec<[usize; 2]>,
    pub delta_shape: [usize; 2],
    /// Dense transform per member, as a list of rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transforms: Option<Vec<Vec<Vec<f64>>>>,
    /// Per member, the columns of `Δ` it uses (case 3b shorthand for
    /// identity-column selectors).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectors: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_starts")]
    pub n_starts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_outer")]
    pub max_outer_iters: usize,
    #[serde(default = "default_outer_abs")]
    pub outer_abs_tol: f64,
    #[serde(default = "default_outer_rel")]
    pub outer_rel_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_secs: Option<f64>,
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default = "default_inner_tol")]
    pub inner_abs_tol: f64,
    #[serde(default = "default_inner_tol")]
    pub inner_rel_tol: f64,
    #[serde(default = "default_inner_iters")]
    pub max_inner_iters: usize,
    #[serde(default = "default_inner_iters")]
    pub projection_rounds: usize,
    #[serde(default = "default_projection_tol")]
    pub projection_tol: f64,
    #[serde(default = "yes")]
    pub weighted_projection: bool,
    /// Worker threads for parallel starts; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        toml::from_str("").expect("solver defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

fn yes() -> bool {
    true
}
fn default_starts() -> usize {
    10
}
fn default_max_outer() -> usize {
    5000
}
fn default_outer_abs() -> f64 {
    1e-7
}
fn default_outer_rel() -> f64 {
    1e-8
}
fn default_inner_tol() -> f64 {
    1e-5
}
fn default_inner_iters() -> usize {
    5
}
fn default_projection_tol() -> f64 {
    1e-8
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Everything a run needs, with data loaded and the model built.
#[derive(Clone, Debug)]
pub struct ResolvedRun<T: Scalar> {
    pub model: ModelSpec<T>,
    pub settings: OuterSettings<T>,
    pub truth: Option<FactorSet<T>>,
    /// Generator output when the data was synthesized.
    pub synth: Option<SynthData<T>>,
    /// Cluster labels of the rows of the first factor.
    pub labels: Option<Vec<usize>>,
    /// First factor before perturbation.
    pub clean_a: Option<DenseMatrix<T>>,
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl<T: Scalar> ResolvedRun<T> {
    pub fn reference(&self) -> Reference<'_, T> {
        Reference {
            truth: self.truth.as_ref(),
            labels: self.labels.as_deref(),
            clean_a: self.clean_a.as_ref(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Canonical configuration of a synthetic experiment.
    pub fn for_experiment(experiment: Experiment, seed: u64) -> Self {
        Self {
            synth: Some(SynthSection {
                experiment: experiment.id().to_string(),
                seed,
                noise: None,
                a_noise: 0.0,
                dims: None,
            }),
            ..Self::default()
        }
    }

    pub fn solver_settings<T: Scalar>(&self) -> Result<OuterSettings<T>> {
        let s = &self.solver;
        let settings = OuterSettings {
            outer_abs_tol: T::lit(s.outer_abs_tol),
            outer_rel_tol: T::lit(s.outer_rel_tol),
            max_outer_iters: s.max_outer_iters,
            n_starts: s.n_starts,
            seed: s.seed,
            time_budget: match s.time_budget_secs {
                Some(t) if t.is_finite() && t > 0.0 => Some(Duration::from_secs_f64(t)),
                Some(t) => return Err(invalid(format!("time_budget_secs must be > 0, got {t}"))),
                None => None,
            },
            warm_start: s.warm_start,
            feasibility_tol: None,
            parallel_starts: true,
            admm: AdmmSettings {
                abs_tol: T::lit(s.inner_abs_tol),
                rel_tol: T::lit(s.inner_rel_tol),
                max_inner_iters: s.max_inner_iters,
                projection_rounds: s.projection_rounds,
                projection_tol: T::lit(s.projection_tol),
                weighted_projection: s.weighted_projection,
            },
        };
        settings.check()?;
        settings.admm.check()?;
        Ok(settings)
    }

    /// The generator spec of the `[synth]` section.
    pub fn synth_spec(&self) -> Result<Option<SynthSpec>> {
        let Some(s) = &self.synth else { return Ok(None) };
        let experiment: Experiment = s.experiment.parse()?;
        let mut spec = SynthSpec::new(experiment, s.seed).with_a_noise(s.a_noise);
        if let Some(noise) = s.noise {
            spec = spec.with_noise(noise);
        }
        if let Some(d) = s.dims {
            spec = spec.with_dims(Exp12Dims {
                i: d.i,
                j: d.j,
                k: d.k,
                y_cols: d.y_cols,
                y_third: d.y_third,
                rank: d.rank,
            });
        }
        spec.check()?;
        Ok(Some(spec))
    }

    /// Loads or generates the data and builds the model. Relative paths are
    /// taken relative to `base`.
    pub fn resolve<T: Scalar>(&self, base: &Path) -> Result<ResolvedRun<T>> {
        let settings = self.solver_settings()?;
        let mut extras = TruthExtras::default();
        let (datasets, truth, synth) = match (self.synth_spec()?, &self.data) {
            (Some(_), Some(_)) => return Err(invalid("config has both [synth] and [data]")),
            (None, None) => return Err(invalid("config needs a [synth] or a [data] section")),
            (Some(spec), None) => {
                let data: SynthData<T> = generate(&spec)?;
                extras.labels = data.labels.clone();
                extras.clean_a = data.clean_a.clone();
                (data.datasets.clone(), Some(data.truth.clone()), Some(data))
            }
            (None, Some(d)) => {
                let mut datasets = io::datasets_from_blocks(&io::load_blocks::<T>(&base.join(&d.file))?)?;
                if datasets.is_empty() {
                    return Err(Error::Format(format!("{}: no data blocks", d.file.display())));
                }
                if d.normalize {
                    for (i, x) in datasets.iter_mut().enumerate() {
                        let n = x.frobenius_norm();
                        if n == T::zero() {
                            return Err(Error::Degenerate(format!("dataset {i} is all zeros")));
                        }
                        x.scale_mut(T::one() / n);
                    }
                }
                let truth = match &d.truth {
                    Some(p) => {
                        let path = base.join(p);
                        let (truth, x) = load_truth(&path)?;
                        extras = x;
                        Some(truth)
                    }
                    None => None,
                };
                (datasets, truth, None)
            }
        };
        let model = if self.decompositions.is_empty() {
            if !self.couplings.is_empty() {
                return Err(invalid("[[coupling]] tables need explicit [[decomposition]] tables"));
            }
            let Some(data) = &synth else {
                return Err(invalid("a [data] run needs [[decomposition]] tables"));
            };
            let mut options = ModelOptions::for_experiment(data.experiment);
            options.coupled = self.model.coupled;
            options.ridge = self.model.ridge;
            if let Some(l) = self.model.smoothness {
                options.smoothness = (l > 0.0).then_some(l);
            }
            data.model(&options)?
        } else {
            self.explicit_model(datasets)?
        };
        model.ensure_valid()?;
        Ok(ResolvedRun {
            model,
            settings,
            truth,
            synth,
            labels: extras.labels,
            clean_a: extras.clean_a,
            threads: self.solver.threads,
            out_dir: base.join(&self.output.dir),
        })
    }

    fn explicit_model<T: Scalar>(&self, datasets: Vec<Dataset<T>>) -> Result<ModelSpec<T>> {
        let n = datasets.len();
        let mut decompositions = Vec::with_capacity(self.decompositions.len());
        for (d, s) in self.decompositions.iter().enumerate() {
            let kind: DecompositionKind = s.kind.parse()?;
            if s.regularizers.len() > kind.num_modes() {
                return Err(invalid(format!(
                    "decomposition {d}: {} regularizers for {} modes",
                    s.regularizers.len(),
                    kind.num_modes()
                )));
            }
            let weight = s.weight.unwrap_or(1.0 / n as f64);
            let mut spec = DecompositionSpec::new(kind, s.rank).with_weight(T::lit(weight));
            for (m, r) in s.regularizers.iter().enumerate() {
                spec = spec.with_regularizer(m, r.build());
            }
            decompositions.push(spec);
        }
        let mut couplings = Vec::with_capacity(self.couplings.len());
        for (c, s) in self.couplings.iter().enumerate() {
            couplings.push(s.build().map_err(|e| invalid(format!("coupling {c}: {e}")))?);
        }
        Ok(ModelSpec::new(datasets, decompositions, couplings))
    }
}

/// Labels and clean first factor stored next to a truth factor set.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthExtras<T> {
    pub labels: Option<Vec<usize>>,
    pub clean_a: Option<DenseMatrix<T>>,
}

impl<T> Default for TruthExtras<T> {
    fn default() -> Self {
        Self {
            labels: None,
            clean_a: None,
        }
    }
}

/// Blocks of a truth file: the factors plus optional `labels` (one column)
/// and `clean_a` blocks.
pub fn truth_blocks<T: Scalar>(truth: &FactorSet<T>, extras: &TruthExtras<T>) -> Vec<NamedBlock<T>> {
    let mut blocks = io::factor_blocks(truth);
    if let Some(l) = &extras.labels {
        let col = DenseMatrix::from_fn(l.len(), 1, |i, _| T::lit(l[i] as f64));
        blocks.push(NamedBlock::new("labels", Block::Matrix(col)));
    }
    if let Some(a) = &extras.clean_a {
        blocks.push(NamedBlock::new("clean_a", Block::Matrix(a.clone())));
    }
    blocks
}

/// Reads a file written from [`truth_blocks`].
pub fn load_truth<T: Scalar>(path: &Path) -> Result<(FactorSet<T>, TruthExtras<T>)> {
    let blocks = io::load_blocks::<T>(path)?;
    let truth = io::factor_set_from_blocks(&blocks).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut extras = TruthExtras::default();
    for b in &blocks {
        match (b.name.as_str(), &b.block) {
            ("labels", Block::Matrix(m)) if m.cols() == 1 => {
                let labels: Option<Vec<usize>> = m
                    .values()
                    .iter()
                    .map(|v| {
                        let v = v.to_f64_lossy();
                        (v >= 0.0 && v.fract() == 0.0).then_some(v as usize)
                    })
                    .collect();
                extras.labels =
                    Some(labels.ok_or_else(|| Error::Format(format!("{}: labels are not integers", path.display())))?);
            }
            ("clean_a", Block::Matrix(m)) => extras.clean_a = Some(m.clone()),
            _ => {}
        }
    }
    Ok((truth, extras))
}

/// Config tables describing the decompositions and couplings of `model`.
pub fn model_sections<T: Scalar>(model: &ModelSpec<T>) -> Result<(Vec<DecompositionSection>, Vec<CouplingSection>)> {
    let mut decompositions = Vec::with_capacity(model.decompositions.len());
    for (d, spec) in model.decompositions.iter().enumerate() {
        let regularizers = spec
            .regularizers
            .iter()
            .enumerate()
            .map(|(m, r)| {
                RegularizerSection::from_regularizer(r)
                    .ok_or_else(|| invalid(format!("decomposition {d} mode {m}: {r:?} has no config form")))
            })
            .collect::<Result<Vec<_>>>()?;
        decompositions.push(DecompositionSection {
            kind: spec.kind.name().to_string(),
            rank: spec.rank,
            weight: Some(spec.weight.to_f64_lossy()),
            regularizers,
        });
    }
    let couplings = model
        .couplings
        .iter()
        .map(|c| {
            let transforms: Vec<Option<Vec<Vec<f64>>>> = c
                .members
                .iter()
                .map(|m| {
                    m.transform.as_ref().map(|h| {
                        (0..h.rows())
                            .map(|i| (0..h.cols()).map(|j| h[(i, j)].to_f64_lossy()).collect())
                            .collect()
                    })
                })
                .collect();
            let transforms = if transforms.iter().all(Option::is_none) {
                None
            } else {
                let sizes: Vec<usize> = c
                    .members
                    .iter()
                    .map(|m| match c.case {
                        CouplingCase::Exact => 0,
                        CouplingCase::TransformFactorRows | CouplingCase::TransformDeltaRows => {
                            model.mode_rows(m.decomposition).map_or(0, |rows| match &rows[m.mode] {
                                ModeRows::Dense(n) => *n,
                                ModeRows::Slices(_) => 0,
                            })
                        }
                        CouplingCase::TransformFactorCols | CouplingCase::TransformDeltaCols => {
                            model.decompositions[m.decomposition].rank
                        }
                    })
                    .collect();
                Some(
                    transforms
                        .into_iter()
                        .zip(sizes)
                        .enumerate()
                        .map(|(i, (t, n))| {
                            t.unwrap_or_else(|| {
                                let id = c.transform(i, n);
                                (0..id.rows())
                                    .map(|i| (0..id.cols()).map(|j| id[(i, j)].to_f64_lossy()).collect())
                                    .collect()
                            })
                        })
                        .collect(),
                )
            };
            CouplingSection {
                case: c.case.label().to_string(),
                members: c.members.iter().map(|m| [m.decomposition, m.mode]).collect(),
                delta_shape: [c.delta_shape.0, c.delta_shape.1],
                transforms,
                selectors: None,
            }
        })
        .collect();
    Ok((decompositions, couplings))
}

impl RegularizerSection {
    pub fn from_regularizer<T: Scalar>(r: &Regularizer<T>) -> Option<Self> {
        Some(match r {
            Regularizer::None => Self::None,
            Regularizer::Nonneg => Self::Nonneg,
            Regularizer::Ridge { lambda } => Self::Ridge {
                lambda: lambda.to_f64_lossy(),
            },
            Regularizer::UnitBallColumns => Self::UnitBallColumns,
            Regularizer::NonnegRidge { lambda } => Self::NonnegRidge {
                lambda: lambda.to_f64_lossy(),
            },
            Regularizer::NonnegUnitBallColumns => Self::NonnegUnitBallColumns,
            Regularizer::GraphLaplacian { lambda, laplacian: None } => Self::GraphLaplacian {
                lambda: lambda.to_f64_lossy(),
            },
            Regularizer::GraphLaplacian { laplacian: Some(_), .. } | Regularizer::Custom(_) => return None,
        })
    }

    pub fn build<T: Scalar>(&self) -> Regularizer<T> {
        match *self {
            Self::None => Regularizer::None,
            Self::Nonneg => Regularizer::Nonneg,
            Self::Ridge { lambda } => Regularizer::Ridge { lambda: T::lit(lambda) },
            Self::UnitBallColumns => Regularizer::UnitBallColumns,
            Self::NonnegRidge { lambda } => Regularizer::NonnegRidge { lambda: T::lit(lambda) },
            Self::NonnegUnitBallColumns => Regularizer::NonnegUnitBallColumns,
            Self::GraphLaplacian { lambda } => Regularizer::GraphLaplacian {
                lambda: T::lit(lambda),
                laplacian: None,
            },
        }
    }
}

impl CouplingSection {
    pub fn build<T: Scalar>(&self) -> Result<CouplingSpec<T>> {
        let case = CouplingCase::from_label(&self.case)
            .ok_or_else(|| invalid(format!("unknown coupling case `{}`", self.case)))?;
        let n = self.members.len();
        let transforms: Vec<Option<DenseMatrix<T>>> = match (&self.transforms, &self.selectors) {
            (Some(_), Some(_)) => return Err(invalid("give either transforms or selectors, not both")),
            (Some(t), None) => {
                if t.len() != n {
                    return Err(invalid(format!("{} transforms for {n} members", t.len())));
                }
                t.iter().map(|rows| matrix_from_rows(rows).map(Some)).collect::<Result<_>>()?
            }
            (None, Some(s)) => {
                if s.len() != n {
                    return Err(invalid(format!("{} selectors for {n} members", s.len())));
                }
                s.iter()
                    .map(|cols| selector(self.delta_shape[1], cols).map(Some))
                    .collect::<Result<_>>()?
            }
            (None, None) => vec![None; n],
        };
        Ok(CouplingSpec {
            case,
            members: self
                .members
                .iter()
                .zip(transforms)
                .map(|(&[d, m], h)| {
                    let member = CouplingMember::new(d, m);
                    match h {
                        Some(h) => member.with_transform(h),
                        None => member,
                    }
                })
                .collect(),
            delta_shape: (self.delta_shape[0], self.delta_shape[1]),
        })
    }
}

fn matrix_from_rows<T: Scalar>(rows: &[Vec<f64>]) -> Result<DenseMatrix<T>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(invalid("transform rows must be non-empty and of equal length"));
    }
    Ok(DenseMatrix::from_fn(rows.len(), cols, |i, j| T::lit(rows[i][j])))
}
