//! Declarative coupled-model description, factor containers and validation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::prox::Regularizer;
use crate::scalar::Scalar;
use crate::tensor::{DenseMatrix, DenseTensor3, RaggedTensor};

/// Index of the varying mode of a PARAFAC2 decomposition.
pub const PARAFAC2_B: usize = 1;
/// Index of the slice-weight mode of a PARAFAC2 decomposition.
pub const PARAFAC2_C: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecompositionKind {
    /// `⟦F0, F1, F2⟧` for a third-order tensor.
    Cp,
    /// `X_k ≈ A diag(C[k,:]) B_kᵀ`; modes are `A`, `B_k`, `C`.
    Parafac2,
    /// `Y ≈ E Fᵀ`.
    Matrix,
}

impl DecompositionKind {
    pub fn num_modes(self) -> usize {
        match self {
            Self::Cp | Self::Parafac2 => 3,
            Self::Matrix => 2,
        }
    }

    /// Mode update order inside one outer iteration.
    pub fn mode_order(self) -> &'static [usize] {
        match self {
            Self::Cp => &[0, 1, 2],
            Self::Parafac2 => &[1, 0, 2],
            Self::Matrix => &[0, 1],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cp => "cp",
            Self::Parafac2 => "parafac2",
            Self::Matrix => "matrix",
        }
    }
}

impl std::str::FromStr for DecompositionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(Self::Cp),
            "parafac2" => Ok(Self::Parafac2),
            "matrix" => Ok(Self::Matrix),
            other => Err(Error::InvalidParameter(format!("unknown decomposition kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecompositionSpec<T: Scalar> {
    pub kind: DecompositionKind,
    pub rank: usize,
    /// Weight `w` of the data term `w‖data − model‖²_F`.
    pub weight: T,
    /// One regularizer per mode (`A`, `B`, `C` for PARAFAC2).
    pub regularizers: Vec<Regularizer<T>>,
}

impl<T: Scalar> DecompositionSpec<T> {
    /// Unregularized decomposition with weight 1.
    pub fn new(kind: DecompositionKind, rank: usize) -> Self {
        Self {
            kind,
            rank,
            weight: T::one(),
            regularizers: vec![Regularizer::None; kind.num_modes()],
        }
    }

    pub fn with_weight(mut self, weight: T) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_regularizer(mut self, mode: usize, reg: Regularizer<T>) -> Self {
        self.regularizers[mode] = reg;
        self
    }

    /// Applies `reg` to every mode.
    pub fn with_all_regularizers(mut self, reg: Regularizer<T>) -> Self {
        self.regularizers = vec![reg; self.kind.num_modes()];
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset<T> {
    Matrix(DenseMatrix<T>),
    Tensor(DenseTensor3<T>),
    Ragged(RaggedTensor<T>),
}

impl<T: Scalar> Dataset<T> {
    pub fn frobenius_norm_sq(&self) -> T {
        match self {
            Self::Matrix(m) => m.frobenius_norm_sq(),
            Self::Tensor(t) => t.frobenius_norm_sq(),
            Self::Ragged(r) => r.frobenius_norm_sq(),
        }
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Matrix(m) => m.is_finite(),
            Self::Tensor(t) => t.is_finite(),
            Self::Ragged(r) => r.is_finite(),
        }
    }

    pub fn scale_mut(&mut self, alpha: T) {
        match self {
            Self::Matrix(m) => m.scale_mut(alpha),
            Self::Tensor(t) => t.scale_mut(alpha),
            Self::Ragged(r) => r.scale_mut(alpha),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Matrix(_) => "matrix",
            Self::Tensor(_) => "tensor",
            Self::Ragged(_) => "ragged tensor",
        }
    }

    /// `‖self − other‖²_F` for datasets of the same layout.
    pub fn distance_sq(&self, other: &Self) -> Result<T> {
        fn sq<T: Scalar>(a: &[T], b: &[T]) -> T {
            a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
        }
        match (self, other) {
            (Self::Matrix(a), Self::Matrix(b)) if a.shape() == b.shape() => Ok(sq(a.values(), b.values())),
            (Self::Tensor(a), Self::Tensor(b)) if a.dims() == b.dims() => Ok(sq(a.values(), b.values())),
            (Self::Ragged(a), Self::Ragged(b)) if a.slice_widths() == b.slice_widths() && a.rows() == b.rows() => Ok(a
                .slices()
                .iter()
                .zip(b.slices())
                .map(|(x, y)| sq(x.values(), y.values()))
                .sum()),
            (Self::Tensor(a), Self::Ragged(b)) | (Self::Ragged(b), Self::Tensor(a))
                if b.slices().iter().all(|s| s.shape() == (a.dims().0, a.dims().1))
                    && b.num_slices() == a.dims().2 =>
            {
                Ok(b.slices()
                    .iter()
                    .enumerate()
                    .map(|(k, s)| sq(a.slice_values(k), s.values()))
                    .sum())
            }
            _ => Err(Error::DimensionMismatch {
                op: "Dataset::distance_sq",
                detail: format!("{} vs {}", self.kind_name(), other.kind_name()),
            }),
        }
    }

    /// Ragged view of a third-order dataset.
    pub fn to_ragged(&self) -> Option<RaggedTensor<T>> {
        match self {
            Self::Tensor(t) => Some(RaggedTensor::from(t)),
            Self::Ragged(r) => Some(r.clone()),
            Self::Matrix(_) => None,
        }
    }
}

/// The five linear coupling types between member factors `X_i` and the
/// shared generating variable `Δ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CouplingCase {
    /// `X_i = Δ`.
    Exact,
    /// `H_i X_i = Δ` (transform in the mode dimension).
    TransformFactorRows,
    /// `X_i = H_i Δ` (transform in the mode dimension).
    TransformDeltaRows,
    /// `X_i H_i = Δ` (transform in the component dimension).
    TransformFactorCols,
    /// `X_i = Δ H_i` (transform in the component dimension).
    TransformDeltaCols,
}

impl CouplingCase {
    pub fn label(self) -> &'static str {
        match self {
            Self::Exact => "1",
            Self::TransformFactorRows => "2a",
            Self::TransformDeltaRows => "2b",
            Self::TransformFactorCols => "3a",
            Self::TransformDeltaCols => "3b",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Some(match s {
            "1" => Self::Exact,
            "2a" => Self::TransformFactorRows,
            "2b" => Self::TransformDeltaRows,
            "3a" => Self::TransformFactorCols,
            "3b" => Self::TransformDeltaCols,
            _ => return None,
        })
    }
}

impl fmt::Display for CouplingCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug)]
pub struct CouplingMember<T> {
    pub decomposition: usize,
    pub mode: usize,
    /// Transformation matrix of the case; `None` means identity and is the
    /// only option for [`CouplingCase::Exact`].
    pub transform: Option<DenseMatrix<T>>,
}

impl<T> CouplingMember<T> {
    pub fn new(decomposition: usize, mode: usize) -> Self {
        Self {
            decomposition,
            mode,
            transform: None,
        }
    }

    pub fn with_transform(mut self, h: DenseMatrix<T>) -> Self {
        self.transform = Some(h);
        self
    }
}

#[derive(Clone, Debug)]
pub struct CouplingSpec<T> {
    pub case: CouplingCase,
    pub members: Vec<CouplingMember<T>>,
    /// Shape `(m1, m2)` of `Δ`.
    pub delta_shape: (usize, usize),
}

impl<T: Scalar> CouplingSpec<T> {
    /// Exact coupling (`X_i = Δ`) of the listed `(decomposition, mode)` pairs.
    pub fn exact(members: &[(usize, usize)], delta_shape: (usize, usize)) -> Self {
        Self {
            case: CouplingCase::Exact,
            members: members.iter().map(|&(d, m)| CouplingMember::new(d, m)).collect(),
            delta_shape,
        }
    }

    /// Transform of member `i`, materializing the identity default.
    pub fn transform(&self, i: usize, identity_size: usize) -> DenseMatrix<T> {
        self.members[i]
            .transform
            .clone()
            .unwrap_or_else(|| DenseMatrix::identity(identity_size))
    }
}

/// Selector `Ĥ` (`m2×R`) whose column `r` is the unit vector
/// `e_{columns[r]}`, so `Δ Ĥ` picks the listed columns of `Δ`.
pub fn selector<T: Scalar>(m2: usize, columns: &[usize]) -> Result<DenseMatrix<T>> {
    if let Some(&c) = columns.iter().find(|&&c| c >= m2) {
        return Err(Error::InvalidParameter(format!(
            "selector column {c} out of range for {m2} shared columns"
        )));
    }
    Ok(DenseMatrix::from_fn(m2, columns.len(), |i, r| {
        if columns[r] == i {
            T::one()
        } else {
            T::zero()
        }
    }))
}

#[derive(Clone, Debug)]
pub struct ModelSpec<T: Scalar> {
    pub datasets: Vec<Dataset<T>>,
    pub decompositions: Vec<DecompositionSpec<T>>,
    pub couplings: Vec<CouplingSpec<T>>,
}

/// One inconsistency found by [`ModelSpec::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Row counts of every mode of a decomposition (the `B` mode lists `J_k`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModeRows {
    Dense(usize),
    Slices(Vec<usize>),
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(
        datasets: Vec<Dataset<T>>,
        decompositions: Vec<DecompositionSpec<T>>,
        couplings: Vec<CouplingSpec<T>>,
    ) -> Self {
        Self {
            datasets,
            decompositions,
            couplings,
        }
    }

    /// Row counts per mode of decomposition `d`, if its dataset matches its kind.
    pub fn mode_rows(&self, d: usize) -> Option<Vec<ModeRows>> {
        let spec = self.decompositions.get(d)?;
        let data = self.datasets.get(d)?;
        use DecompositionKind::*;
        Some(match (spec.kind, data) {
            (Cp, Dataset::Tensor(t)) => {
                let (i, j, k) = t.dims();
                vec![ModeRows::Dense(i), ModeRows::Dense(j), ModeRows::Dense(k)]
            }
            (Parafac2, Dataset::Tensor(t)) => {
                let (i, j, k) = t.dims();
                vec![ModeRows::Dense(i), ModeRows::Slices(vec![j; k]), ModeRows::Dense(k)]
            }
            (Parafac2, Dataset::Ragged(r)) => vec![
                ModeRows::Dense(r.rows()),
                ModeRows::Slices(r.slice_widths()),
                ModeRows::Dense(r.num_slices()),
            ],
            (Matrix, Dataset::Matrix(m)) => {
                vec![ModeRows::Dense(m.rows()), ModeRows::Dense(m.cols())]
            }
            _ => return None,
        })
    }

    /// Coupling index and member index of `(d, mode)`, if coupled.
    pub fn coupling_of(&self, d: usize, mode: usize) -> Option<(usize, usize)> {
        self.couplings.iter().enumerate().find_map(|(c, cs)| {
            cs.members
                .iter()
                .position(|m| m.decomposition == d && m.mode == mode)
                .map(|i| (c, i))
        })
    }

    /// Every dimensional or coupling inconsistency; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |location: String, message: String| out.push(Violation { location, message });

        if self.datasets.len() != self.decompositions.len() {
            push(
                "model".into(),
                format!(
                    "{} datasets but {} decompositions",
                    self.datasets.len(),
                    self.decompositions.len()
                ),
            );
        }
        if self.decompositions.is_empty() {
            push("model".into(), "no decompositions".into());
        }

        for (d, spec) in self.decompositions.iter().enumerate() {
            let loc = format!("decomposition {d} ({})", spec.kind.name());
            if spec.rank == 0 {
                push(loc.clone(), "rank must be >= 1".into());
            }
            if !(spec.weight > T::zero()) || !spec.weight.is_finite() {
                push(loc.clone(), format!("weight {} must be > 0", spec.weight));
            }
            if spec.regularizers.len() != spec.kind.num_modes() {
                push(
                    loc.clone(),
                    format!(
                        "{} regularizers for {} modes",
                        spec.regularizers.len(),
                        spec.kind.num_modes()
                    ),
                );
            }
            let Some(data) = self.datasets.get(d) else { continue };
            if !data.is_finite() {
                push(loc.clone(), "dataset has non-finite entries".into());
            } else if data.frobenius_norm_sq() == T::zero() {
                push(loc.clone(), "dataset is all zeros".into());
            }
            let Some(rows) = self.mode_rows(d) else {
                push(
                    loc.clone(),
                    format!("{} decomposition cannot fit a {}", spec.kind.name(), data.kind_name()),
                );
                continue;
            };
            for (m, mr) in rows.iter().enumerate() {
                let mloc = format!("{loc} mode {m}");
                match mr {
                    ModeRows::Dense(n) => {
                        if *n == 0 {
                            push(mloc.clone(), "empty mode".into());
                        }
                        if let Some(reg) = spec.regularizers.get(m) {
                            if let Err(e) = reg.check(*n) {
                                push(mloc.clone(), e);
                            }
                        }
                    }
                    ModeRows::Slices(js) => {
                        if let Some(&j) = js.iter().min() {
                            if j < spec.rank {
                                push(
                                    mloc.clone(),
                                    format!("slice width {j} is smaller than rank {}", spec.rank),
                                );
                            }
                        }
                        if let Some(reg) = spec.regularizers.get(m) {
                            for (k, &j) in js.iter().enumerate() {
                                if let Err(e) = reg.check(j) {
                                    push(format!("{mloc} slice {k}"), e);
                                    break;
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut seen: Vec<(usize, usize)> = Vec::new();
        for (c, cs) in self.couplings.iter().enumerate() {
            let loc = format!("coupling {c} (case {})", cs.case);
            if cs.members.is_empty() {
                push(loc.clone(), "no members".into());
            }
            let (m1, m2) = cs.delta_shape;
            if m1 == 0 || m2 == 0 {
                push(loc.clone(), format!("delta shape {:?} is empty", cs.delta_shape));
            }
            let mut decomps = Vec::new();
            let mut row_weight = DenseMatrix::<T>::zeros(m1, m1);
            let mut col_weight = DenseMatrix::<T>::zeros(m2, m2);
            let mut weights_ok = true;
            for (i, member) in cs.members.iter().enumerate() {
                let mloc = format!("{loc} member {i}");
                let (d, mode) = (member.decomposition, member.mode);
                if decomps.contains(&d) {
                    push(mloc.clone(), format!("decomposition {d} appears twice"));
                }
                decomps.push(d);
                if seen.contains(&(d, mode)) {
                    push(mloc.clone(), format!("mode {mode} of decomposition {d} is in more than one coupling"));
                }
                seen.push((d, mode));
                let Some(spec) = self.decompositions.get(d) else {
                    push(mloc, format!("unknown decomposition {d}"));
                    weights_ok = false;
                    continue;
                };
                if mode >= spec.kind.num_modes() {
                    push(mloc, format!("unknown mode {mode}"));
                    weights_ok = false;
                    continue;
                }
                if spec.kind == DecompositionKind::Parafac2 && mode == PARAFAC2_B {
                    push(mloc, "the varying PARAFAC2 mode B cannot be coupled".into());
                    weights_ok = false;
                    continue;
                }
                let Some(ModeRows::Dense(n)) = self.mode_rows(d).map(|r| r[mode].clone()) else {
                    weights_ok = false;
                    continue;
                };
                let r = spec.rank;
                let h = member.transform.as_ref();
                let shape_of = |h: Option<&DenseMatrix<T>>, default: (usize, usize)| {
                    h.map(|h| h.shape()).unwrap_or(default)
                };
                match cs.case {
                    CouplingCase::Exact => {
                        if h.is_some() {
                            push(mloc.clone(), "case 1 takes no transform".into());
                        }
                        if n != m1 {
                            push(mloc.clone(), format!("row mismatch: factor has {n} rows, delta has {m1}"));
                        }
                        if r != m2 {
                            push(mloc.clone(), format!("column mismatch: rank {r}, delta has {m2} columns"));
                        }
                    }
                    CouplingCase::TransformFactorRows => {
                        let s = shape_of(h, (n, n));
                        if s != (m1, n) {
                            push(mloc.clone(), format!("transform is {s:?}, expected ({m1}, {n})"));
                        }
                        if r != m2 {
                            push(mloc.clone(), format!("column mismatch: rank {r}, delta has {m2} columns"));
                        }
                    }
                    CouplingCase::TransformDeltaRows => {
                        let s = shape_of(h, (n, n));
                        if s != (n, m1) {
                            push(mloc.clone(), format!("transform is {s:?}, expected ({n}, {m1})"));
                            weights_ok = false;
                        } else {
                            let hh = cs.transform(i, n);
                            row_weight = row_weight.add(&hh.gram()).unwrap_or(row_weight);
                        }
                        if r != m2 {
                            push(mloc.clone(), format!("column mismatch: rank {r}, delta has {m2} columns"));
                        }
                    }
                    CouplingCase::TransformFactorCols => {
                        let s = shape_of(h, (r, r));
                        if s != (r, m2) {
                            push(mloc.clone(), format!("transform is {s:?}, expected ({r}, {m2})"));
                        }
                        if n != m1 {
                            push(mloc.clone(), format!("row mismatch: factor has {n} rows, delta has {m1}"));
                        }
                    }
                    CouplingCase::TransformDeltaCols => {
                        let s = shape_of(h, (r, r));
                        if s != (m2, r) {
                            push(mloc.clone(), format!("transform is {s:?}, expected ({m2}, {r})"));
                            weights_ok = false;
                        } else {
                            let hh = cs.transform(i, r);
                            col_weight = col_weight.add(&hh.matmul_t(&hh).expect("shape")).unwrap_or(col_weight);
                        }
                        if n != m1 {
                            push(mloc.clone(), format!("row mismatch: factor has {n} rows, delta has {m1}"));
                        }
                    }
                }
            }
            if weights_ok && !cs.members.is_empty() {
                let singular = match cs.case {
                    CouplingCase::TransformDeltaRows => crate::tensor::cholesky_factor(&row_weight).is_err(),
                    CouplingCase::TransformDeltaCols => crate::tensor::cholesky_factor(&col_weight).is_err(),
                    _ => false,
                };
                if singular {
                    push(loc.clone(), "delta is not determined by the member transforms".into());
                }
            }
        }
        out
    }

    /// Returns an error listing all violations, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = v.iter().map(|v| format!("  {v}")).collect();
            Err(Error::InvalidModel(msg.join("\n")))
        }
    }

    /// Scales every dataset to unit Frobenius norm.
    pub fn normalize_datasets(&mut self) -> Result<()> {
        for (d, data) in self.datasets.iter_mut().enumerate() {
            let n = data.frobenius_norm();
            if n == T::zero() {
                return Err(Error::Degenerate(format!("dataset {d} is all zeros")));
            }
            data.scale_mut(T::one() / n);
        }
        Ok(())
    }
}

/// One factor matrix, or the list `B_k` for the varying PARAFAC2 mode.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorMatrix<T> {
    Dense(DenseMatrix<T>),
    Slices(Vec<DenseMatrix<T>>),
}

impl<T: Scalar> FactorMatrix<T> {
    pub fn as_dense(&self) -> &DenseMatrix<T> {
        match self {
            Self::Dense(m) => m,
            Self::Slices(_) => panic!("expected a dense factor, found slices"),
        }
    }

    pub fn as_dense_mut(&mut self) -> &mut DenseMatrix<T> {
        match self {
            Self::Dense(m) => m,
            Self::Slices(_) => panic!("expected a dense factor, found slices"),
        }
    }

    pub fn as_slices(&self) -> &[DenseMatrix<T>] {
        match self {
            Self::Slices(s) => s,
            Self::Dense(_) => panic!("expected slices, found a dense factor"),
        }
    }

    pub fn as_slices_mut(&mut self) -> &mut Vec<DenseMatrix<T>> {
        match self {
            Self::Slices(s) => s,
            Self::Dense(_) => panic!("expected slices, found a dense factor"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Dense(m) => m.is_finite(),
            Self::Slices(s) => s.iter().all(|m| m.is_finite()),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Self::Dense(m) => m.cols(),
            Self::Slices(s) => s.first().map_or(0, |m| m.cols()),
        }
    }

    /// Column-stacked dense view (the `B_k` are concatenated vertically).
    pub fn stacked(&self) -> DenseMatrix<T> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Slices(s) => {
                let r = self.cols();
                let total: usize = s.iter().map(|m| m.rows()).sum();
                let mut out = DenseMatrix::zeros(total, r);
                for c in 0..r {
                    let dst = out.col_mut(c);
                    let mut off = 0;
                    for m in s {
                        dst[off..off + m.rows()].copy_from_slice(m.col(c));
                        off += m.rows();
                    }
                }
                out
            }
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        match self {
            Self::Dense(m) => Self::Dense(m.select_columns(cols)),
            Self::Slices(s) => Self::Slices(s.iter().map(|m| m.select_columns(cols)).collect()),
        }
    }
}

/// Factor matrices of one decomposition, indexed by mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Factors<T> {
    pub kind: DecompositionKind,
    pub modes: Vec<FactorMatrix<T>>,
}

impl<T: Scalar> Factors<T> {
    pub fn cp(f0: DenseMatrix<T>, f1: DenseMatrix<T>, f2: DenseMatrix<T>) -> Self {
        Self {
            kind: DecompositionKind::Cp,
            modes: vec![FactorMatrix::Dense(f0), FactorMatrix::Dense(f1), FactorMatrix::Dense(f2)],
        }
    }

    pub fn parafac2(a: DenseMatrix<T>, b: Vec<DenseMatrix<T>>, c: DenseMatrix<T>) -> Self {
        Self {
            kind: DecompositionKind::Parafac2,
            modes: vec![FactorMatrix::Dense(a), FactorMatrix::Slices(b), FactorMatrix::Dense(c)],
        }
    }

    pub fn matrix(e: DenseMatrix<T>, f: DenseMatrix<T>) -> Self {
        Self {
            kind: DecompositionKind::Matrix,
            modes: vec![FactorMatrix::Dense(e), FactorMatrix::Dense(f)],
        }
    }

    pub fn dense(&self, mode: usize) -> &DenseMatrix<T> {
        self.modes[mode].as_dense()
    }

    pub fn rank(&self) -> usize {
        self.modes[0].cols()
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().all(|m| m.is_finite())
    }

    /// Data reconstructed from the factors.
    pub fn reconstruct(&self) -> Result<Dataset<T>> {
        match self.kind {
            DecompositionKind::Cp => Ok(Dataset::Tensor(DenseTensor3::from_cp(
                self.dense(0),
                self.dense(1),
                self.dense(2),
            )?)),
            DecompositionKind::Parafac2 => Ok(Dataset::Ragged(RaggedTensor::from_parafac2(
                self.dense(0),
                self.modes[PARAFAC2_B].as_slices(),
                self.dense(PARAFAC2_C),
            )?)),
            DecompositionKind::Matrix => Ok(Dataset::Matrix(self.dense(0).matmul_t(self.dense(1))?)),
        }
    }

    /// `‖data − reconstruction‖²_F`, computed one column at a time.
    pub fn residual_sq(&self, data: &Dataset<T>) -> Result<T> {
        // Σ over columns j of ‖x_j − left · w_j‖² where the slice model is
        // left · diag(scale) · rightᵀ
        fn slice<T: Scalar>(x: &[T], left: &DenseMatrix<T>, right: &DenseMatrix<T>, scale: &[T], buf: &mut [T]) -> T {
            let n = left.rows();
            let mut acc = T::zero();
            for j in 0..right.rows() {
                buf.copy_from_slice(&x[j * n..(j + 1) * n]);
                for r in 0..left.cols() {
                    let w = right[(j, r)] * scale[r];
                    if w != T::zero() {
                        crate::tensor::axpy(-w, left.col(r), buf);
                    }
                }
                acc += crate::tensor::dot(buf, buf);
            }
            acc
        }
        let mismatch = || Error::DimensionMismatch {
            op: "Factors::residual_sq",
            detail: format!("{} factors vs {}", self.kind.name(), data.kind_name()),
        };
        match (self.kind, data) {
            (DecompositionKind::Matrix, Dataset::Matrix(x)) => {
                let (e, f) = (self.dense(0), self.dense(1));
                if x.shape() != (e.rows(), f.rows()) {
                    return Err(mismatch());
                }
                let mut buf = vec![T::zero(); e.rows()];
                Ok(slice(x.values(), e, f, &vec![T::one(); e.cols()], &mut buf))
            }
            (DecompositionKind::Cp, Dataset::Tensor(x)) => {
                let (f0, f1, f2) = (self.dense(0), self.dense(1), self.dense(2));
                if x.dims() != (f0.rows(), f1.rows(), f2.rows()) {
                    return Err(mismatch());
                }
                let mut buf = vec![T::zero(); f0.rows()];
                Ok((0..f2.rows())
                    .map(|k| slice(x.slice_values(k), f0, f1, &f2.row(k), &mut buf))
                    .sum())
            }
            (DecompositionKind::Parafac2, Dataset::Ragged(_) | Dataset::Tensor(_)) => {
                let (a, b, c) = (self.dense(0), self.modes[PARAFAC2_B].as_slices(), self.dense(PARAFAC2_C));
                let mut buf = vec![T::zero(); a.rows()];
                let mut acc = T::zero();
                for (k, bk) in b.iter().enumerate() {
                    let xk = match data {
                        Dataset::Ragged(x) if x.num_slices() == b.len() => x.slice(k).values(),
                        Dataset::Tensor(x) if x.dims().2 == b.len() => x.slice_values(k),
                        _ => return Err(mismatch()),
                    };
                    if xk.len() != a.rows() * bk.rows() {
                        return Err(mismatch());
                    }
                    acc += slice(xk, a, bk, &c.row(k), &mut buf);
                }
                Ok(acc)
            }
            _ => Err(mismatch()),
        }
    }

    /// Same factors with the components reordered.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            kind: self.kind,
            modes: self.modes.iter().map(|m| m.select_columns(perm)).collect(),
        }
    }
}

/// Factors of every decomposition of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet<T> {
    pub decompositions: Vec<Factors<T>>,
}

impl<T: Scalar> FactorSet<T> {
    pub fn new(decompositions: Vec<Factors<T>>) -> Self {
        Self { decompositions }
    }

    pub fn is_finite(&self) -> bool {
        self.decompositions.iter().all(|f| f.is_finite())
    }

    /// Checks that every factor has the shape `model` requires.
    pub fn check_shapes(&self, model: &ModelSpec<T>) -> Result<()> {
        let bad = |d: usize, m: usize, detail: String| {
            Err(Error::DimensionMismatch {
                op: "FactorSet::check_shapes",
                detail: format!("decomposition {d} mode {m}: {detail}"),
            })
        };
        if self.decompositions.len() != model.decompositions.len() {
            return Err(Error::DimensionMismatch {
                op: "FactorSet::check_shapes",
                detail: format!(
                    "{} factor groups for {} decompositions",
                    self.decompositions.len(),
                    model.decompositions.len()
                ),
            });
        }
        for (d, (f, spec)) in self.decompositions.iter().zip(&model.decompositions).enumerate() {
            let rows = model
                .mode_rows(d)
                .ok_or_else(|| Error::InvalidModel(format!("decomposition {d} has a mismatched dataset")))?;
            if f.kind != spec.kind || f.modes.len() != rows.len() {
                return bad(d, 0, "decomposition kind differs".into());
            }
            for (m, (fm, mr)) in f.modes.iter().zip(&rows).enumerate() {
                match (fm, mr) {
                    (FactorMatrix::Dense(x), ModeRows::Dense(n)) => {
                        if x.shape() != (*n, spec.rank) {
                            return bad(d, m, format!("{:?} != {:?}", x.shape(), (*n, spec.rank)));
                        }
                    }
                    (FactorMatrix::Slices(s), ModeRows::Slices(js)) => {
                        if s.len() != js.len()
                            || s.iter().zip(js).any(|(x, &j)| x.shape() != (j, spec.rank))
                        {
                            return bad(d, m, "slice shapes differ".into());
                        }
                    }
                    _ => return bad(d, m, "dense/slice layout differs".into()),
                }
            }
        }
        Ok(())
    }
}

/// Draws a matrix with standard normal entries, or uniform `[0, 1)` entries
/// when `nonneg`, and normalizes its columns.
pub(crate) fn random_factor<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, nonneg: bool) -> DenseMatrix<T> {
    let mut m = DenseMatrix::from_fn(rows, cols, |_, _| {
        let v: f64 = if nonneg {
            rng.random::<f64>()
        } else {
            rng.sample(StandardNormal)
        };
        T::lit(v)
    });
    m.normalize_columns();
    m
}

pub(crate) fn random_uniform<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix<T> {
    DenseMatrix::from_fn(rows, cols, |_, _| T::lit(rng.random::<f64>()))
}

/// Random factors for `model` with the initialization distributions of the
/// solver (see [`crate::admm::SolverState::random_init`]).
pub fn random_factors<T: Scalar>(model: &ModelSpec<T>, rng: &mut ChaCha8Rng) -> Result<FactorSet<T>> {
    let mut out = Vec::with_capacity(model.decompositions.len());
    for (d, spec) in model.decompositions.iter().enumerate() {
        let rows = model
            .mode_rows(d)
            .ok_or_else(|| Error::InvalidModel(format!("decomposition {d} has a mismatched dataset")))?;
        let modes = rows
            .iter()
            .zip(&spec.regularizers)
            .map(|(mr, reg)| {
                let nonneg = reg.implies_nonneg();
                match mr {
                    ModeRows::Dense(n) => FactorMatrix::Dense(random_factor(rng, *n, spec.rank, nonneg)),
                    ModeRows::Slices(js) => FactorMatrix::Slices(
                        js.iter().map(|&j| random_factor(rng, j, spec.rank, nonneg)).collect(),
                    ),
                }
            })
            .collect();
        out.push(Factors {
            kind: spec.kind,
            modes,
        });
    }
    Ok(FactorSet::new(out))
}

/// Deterministic generator for a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
