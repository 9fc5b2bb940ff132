//! Proximal operators for the per-mode regularizers.
//!
//! Every regularizer `g` acts on a whole factor matrix and exposes
//! `prox_g(X, ρ) = argmin_U g(U) + (ρ/2)‖X − U‖²_F`. New regularizers can be
//! plugged in through [`ProxOperator`] and [`Regularizer::Custom`] without
//! touching the solvers.

use std::fmt;
use std::sync::Arc;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{banded_spd_solve, DenseMatrix};

/// Tolerance used to decide feasibility of hard constraints.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Value of a regularizer at a point.
///
/// Hard constraints contribute `0` to `value`; a violated constraint is
/// reported through `feasible` instead of an infinite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Penalty<T> {
    pub value: T,
    pub feasible: bool,
}

impl<T: Scalar> Penalty<T> {
    pub fn zero() -> Self {
        Self {
            value: T::zero(),
            feasible: true,
        }
    }

    pub fn combine(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            feasible: self.feasible && other.feasible,
        }
    }
}

/// User-supplied regularizer.
pub trait ProxOperator<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    /// `argmin_U g(U) + (ρ/2)‖X − U‖²_F`.
    fn prox(&self, x: &DenseMatrix<T>, rho: T) -> Result<DenseMatrix<T>>;

    fn penalty(&self, x: &DenseMatrix<T>) -> Penalty<T>;

    /// Whether feasible points are nonnegative; used to pick the
    /// initialization distribution.
    fn implies_nonneg(&self) -> bool {
        false
    }
}

/// Regularizer attached to one mode of a decomposition.
#[derive(Clone, Default)]
pub enum Regularizer<T: Scalar> {
    #[default]
    None,
    /// Elementwise `X ≥ 0`.
    Nonneg,
    /// `λ‖X‖²_F`.
    Ridge { lambda: T },
    /// Every column inside the unit ℓ2 ball.
    UnitBallColumns,
    /// `X ≥ 0` plus `λ‖X‖²_F`.
    NonnegRidge { lambda: T },
    /// `X ≥ 0` with every column inside the unit ℓ2 ball.
    NonnegUnitBallColumns,
    /// `λ Σ_r x_rᵀ L x_r`. `None` selects the path-graph Laplacian matching
    /// the row count of the factor.
    GraphLaplacian {
        lambda: T,
        laplacian: Option<DenseMatrix<T>>,
    },
    Custom(Arc<dyn ProxOperator<T>>),
}

impl<T: Scalar> fmt::Debug for Regularizer<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "None"),
            Self::Nonneg => write!(f, "Nonneg"),
            Self::Ridge { lambda } => write!(f, "Ridge({lambda})"),
            Self::UnitBallColumns => write!(f, "UnitBallColumns"),
            Self::NonnegRidge { lambda } => write!(f, "NonnegRidge({lambda})"),
            Self::NonnegUnitBallColumns => write!(f, "NonnegUnitBallColumns"),
            Self::GraphLaplacian { lambda, laplacian } => match laplacian {
                Some(l) => write!(f, "GraphLaplacian({lambda}, {}x{})", l.rows(), l.cols()),
                None => write!(f, "GraphLaplacian({lambda}, path)"),
            },
            Self::Custom(op) => write!(f, "Custom({})", op.name()),
        }
    }
}

impl<T: Scalar> Regularizer<T> {
    pub fn is_none(&self) -> bool {
        matches!(self, Self::None)
    }

    /// True for pure set constraints, whose prox is a projection.
    pub fn is_projection(&self) -> bool {
        matches!(
            self,
            Self::Nonneg | Self::UnitBallColumns | Self::NonnegUnitBallColumns
        )
    }

    pub fn implies_nonneg(&self) -> bool {
        match self {
            Self::Nonneg | Self::NonnegRidge { .. } | Self::NonnegUnitBallColumns => true,
            Self::Custom(op) => op.implies_nonneg(),
            _ => false,
        }
    }

    /// Checks parameters against a factor with `rows` rows.
    pub fn check(&self, rows: usize) -> std::result::Result<(), String> {
        match self {
            Self::Ridge { lambda } | Self::NonnegRidge { lambda } => {
                if !(*lambda >= T::zero()) {
                    return Err(format!("ridge lambda {lambda} must be >= 0"));
                }
            }
            Self::GraphLaplacian { lambda, laplacian } => {
                if !(*lambda >= T::zero()) {
                    return Err(format!("laplacian lambda {lambda} must be >= 0"));
                }
                if let Some(l) = laplacian {
                    if l.shape() != (rows, rows) {
                        return Err(format!(
                            "laplacian is {}x{}, factor has {rows} rows",
                            l.rows(),
                            l.cols()
                        ));
                    }
                    let tol = T::lit(1e-12) * (T::one() + l.frobenius_norm());
                    for j in 0..rows {
                        for i in 0..j {
                            if (l[(i, j)] - l[(j, i)]).abs() > tol {
                                return Err("laplacian is not symmetric".into());
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `argmin_U g(U) + (ρ/2)‖X − U‖²_F`.
    pub fn prox(&self, x: &DenseMatrix<T>, rho: T) -> Result<DenseMatrix<T>> {
        if !(rho > T::zero()) {
            return Err(Error::InvalidParameter(format!("prox step {rho} must be > 0")));
        }
        let out = match self {
            Self::None => x.clone(),
            Self::Nonneg => nonneg(x),
            Self::Ridge { lambda } => x.scaled(rho / (rho + *lambda + *lambda)),
            Self::UnitBallColumns => unit_ball(x.clone()),
            Self::NonnegRidge { lambda } => {
                let mut u = nonneg(x);
                u.scale_mut(rho / (rho + *lambda + *lambda));
                u
            }
            Self::NonnegUnitBallColumns => unit_ball(nonneg(x)),
            Self::GraphLaplacian { lambda, laplacian } => {
                laplacian_prox(x, rho, *lambda, laplacian.as_ref())?
            }
            Self::Custom(op) => op.prox(x, rho)?,
        };
        Ok(out)
    }

    /// Regularizer value, see [`Penalty`].
    pub fn penalty(&self, x: &DenseMatrix<T>) -> Penalty<T> {
        let tol = T::lit(FEASIBILITY_TOL);
        let nonneg_ok = || x.values().iter().all(|&v| v >= -tol);
        let ball_ok = || x.column_norms().iter().all(|&n| n <= T::one() + tol);
        let hard = |feasible: bool| Penalty {
            value: T::zero(),
            feasible,
        };
        match self {
            Self::None => Penalty::zero(),
            Self::Nonneg => hard(nonneg_ok()),
            Self::Ridge { lambda } => Penalty {
                value: *lambda * x.frobenius_norm_sq(),
                feasible: true,
            },
            Self::UnitBallColumns => hard(ball_ok()),
            Self::NonnegRidge { lambda } => Penalty {
                value: *lambda * x.frobenius_norm_sq(),
                feasible: nonneg_ok(),
            },
            Self::NonnegUnitBallColumns => hard(nonneg_ok() && ball_ok()),
            Self::GraphLaplacian { lambda, laplacian } => Penalty {
                value: *lambda * laplacian_quadratic(x, laplacian.as_ref()),
                feasible: true,
            },
            Self::Custom(op) => op.penalty(x),
        }
    }
}

/// Spec-style entry point: `prox(spec, X, ρ)`.
pub fn prox<T: Scalar>(spec: &Regularizer<T>, x: &DenseMatrix<T>, rho: T) -> Result<DenseMatrix<T>> {
    spec.prox(x, rho)
}

/// Spec-style entry point: `penalty_value(spec, X)`.
pub fn penalty_value<T: Scalar>(spec: &Regularizer<T>, x: &DenseMatrix<T>) -> Penalty<T> {
    spec.penalty(x)
}

fn nonneg<T: Scalar>(x: &DenseMatrix<T>) -> DenseMatrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

fn unit_ball<T: Scalar>(mut x: DenseMatrix<T>) -> DenseMatrix<T> {
    for j in 0..x.cols() {
        let n = crate::tensor::norm2(x.col(j));
        if n > T::one() {
            let s = T::one() / n;
            x.col_mut(j).iter_mut().for_each(|v| *v *= s);
        }
    }
    x
}

/// Dense path-graph Laplacian (`deg - adj`) on `n` nodes.
pub fn path_laplacian<T: Scalar>(n: usize) -> DenseMatrix<T> {
    DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let deg = usize::from(i > 0) + usize::from(i + 1 < n);
            T::lit(deg as f64)
        } else if i.abs_diff(j) == 1 {
            -T::one()
        } else {
            T::zero()
        }
    })
}

fn bandwidth<T: Scalar>(l: &DenseMatrix<T>) -> usize {
    let n = l.rows();
    let mut bw = 0;
    for j in 0..n {
        for i in j + 1..n {
            if l[(i, j)] != T::zero() {
                bw = bw.max(i - j);
            }
        }
    }
    bw
}

fn laplacian_prox<T: Scalar>(
    x: &DenseMatrix<T>,
    rho: T,
    lambda: T,
    l: Option<&DenseMatrix<T>>,
) -> Result<DenseMatrix<T>> {
    let n = x.rows();
    if let Some(l) = l {
        if l.shape() != (n, n) {
            return dim_err(
                "graph_laplacian_prox",
                format!("laplacian {:?} for factor {:?}", l.shape(), x.shape()),
            );
        }
    }
    if lambda == T::zero() || n == 0 {
        return Ok(x.clone());
    }
    // (ρI + 2λL) u = ρ x, solved on the band of L
    let two_lambda = lambda + lambda;
    let mut out = x.scaled(rho);
    match l {
        Some(l) => {
            let bw = bandwidth(l);
            banded_spd_solve(
                |i, j| {
                    let d = if i == j { rho } else { T::zero() };
                    d + two_lambda * l[(i, j)]
                },
                n,
                bw,
                &mut out,
            )?;
        }
        None => {
            let path = |i: usize, j: usize| {
                if i == j {
                    let deg = usize::from(i > 0) + usize::from(i + 1 < n);
                    rho + two_lambda * T::lit(deg as f64)
                } else {
                    -two_lambda
                }
            };
            banded_spd_solve(path, n, 1, &mut out)?;
        }
    }
    Ok(out)
}

fn laplacian_quadratic<T: Scalar>(x: &DenseMatrix<T>, l: Option<&DenseMatrix<T>>) -> T {
    let mut total = T::zero();
    for r in 0..x.cols() {
        let c = x.col(r);
        match l {
            Some(l) => {
                if l.rows() != c.len() {
                    return T::nan();
                }
                for j in 0..c.len() {
                    let lc = l.col(j);
                    total += c[j] * crate::tensor::dot(lc, c);
                }
            }
            None => {
                total += c.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<T>();
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = DenseMatrix<f64>;

    #[test]
    fn spec_examples() {
        let x = M::from_rows(&[[-1.0, 2.0]]);
        assert_eq!(Regularizer::Nonneg.prox(&x, 3.0).unwrap(), M::from_rows(&[[0.0, 2.0]]));

        let x = M::from_rows(&[[1.5, -2.0], [0.3, 4.0]]);
        assert_eq!(Regularizer::Ridge { lambda: 0.0 }.prox(&x, 0.7).unwrap(), x);

        let col = M::from_rows(&[[3.0], [4.0]]);
        let p = Regularizer::UnitBallColumns.prox(&col, 1.0).unwrap();
        assert!((p[(0, 0)] - 0.6).abs() < 1e-15 && (p[(1, 0)] - 0.8).abs() < 1e-15);

        let g = Regularizer::GraphLaplacian {
            lambda: 2.0,
            laplacian: Some(M::zeros(2, 2)),
        };
        assert_eq!(g.prox(&x, 1.0).unwrap(), x);

        assert_eq!(Regularizer::Ridge { lambda: 2.0 }.penalty(&M::identity(2)).value, 4.0);
        let p = Regularizer::Nonneg.penalty(&M::from_rows(&[[0.0, 1.0]]));
        assert!(p.feasible && p.value == 0.0);
        assert!(!Regularizer::Nonneg.penalty(&M::from_rows(&[[-0.5]])).feasible);
    }

    #[test]
    fn nonneg_matches_scalar_grid() {
        let rho = 1.7;
        for &x in &[-2.0, -0.3, 0.0, 0.4, 1.9] {
            let p = Regularizer::Nonneg.prox(&M::filled(1, 1, x), rho).unwrap()[(0, 0)];
            let best = (0..=40_000)
                .map(|i| -2.0 + i as f64 * 1e-4)
                .filter(|&u| u >= 0.0)
                .min_by(|a, b| {
                    let fa = 0.5 * rho * (x - a) * (x - a);
                    let fb = 0.5 * rho * (x - b) * (x - b);
                    fa.partial_cmp(&fb).unwrap()
                })
                .unwrap();
            assert!((p - best).abs() < 1e-3, "x={x}: {p} vs {best}");
        }
    }

    #[test]
    fn rejects_bad_step_and_shape() {
        let x = M::zeros(3, 2);
        assert!(Regularizer::Nonneg.prox(&x, 0.0).is_err());
        let g = Regularizer::GraphLaplacian {
            lambda: 1.0,
            laplacian: Some(M::identity(2)),
        };
        assert!(g.prox(&x, 1.0).is_err());
        assert!(g.check(3).is_err());
    }

    #[test]
    fn default_laplacian_equals_explicit_path() {
        let x = M::from_fn(6, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let implicit = Regularizer::GraphLaplacian {
            lambda: 0.8,
            laplacian: None,
        };
        let explicit = Regularizer::GraphLaplacian {
            lambda: 0.8,
            laplacian: Some(path_laplacian(6)),
        };
        let a = implicit.prox(&x, 1.3).unwrap();
        let b = explicit.prox(&x, 1.3).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        let pa = implicit.penalty(&x).value;
        let pb = explicit.penalty(&x).value;
        assert!((pa - pb).abs() < 1e-12);
    }
}
