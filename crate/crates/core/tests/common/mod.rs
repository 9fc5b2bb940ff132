#![allow(dead_code)]

use cmtf_core::tensor::{DenseMatrix, DenseTensor3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type M = DenseMatrix<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> M {
    M::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

pub fn signed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> M {
    M::from_fn(rows, cols, |_, _| 2.0 * rng.random::<f64>() - 1.0)
}

pub fn to_na(m: &M) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &nalgebra::DMatrix<f64>) -> M {
    M::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Random matrix with orthonormal columns (QR of a Gaussian-like draw).
pub fn orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> M {
    let q = to_na(&signed(rng, rows, cols)).qr().q();
    from_na(&q.columns(0, cols).into_owned())
}

pub fn rel_err(a: &M, b: &M) -> f64 {
    a.distance(b).unwrap() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

pub fn orthogonality_error(p: &M) -> f64 {
    p.gram().distance(&M::identity(p.cols())).unwrap()
}

/// Strategy for matrices with entries in [-1, 1].
pub fn matrix(rows: impl Strategy<Value = usize>, cols: impl Strategy<Value = usize>) -> impl Strategy<Value = M> {
    (rows, cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-1.0f64..1.0, r * c).prop_map(move |v| M::from_col_major(r, c, v).unwrap())
    })
}

pub fn tensor(dims: (usize, usize, usize), rng: &mut ChaCha8Rng) -> DenseTensor3<f64> {
    DenseTensor3::from_fn(dims, |_, _, _| 2.0 * rng.random::<f64>() - 1.0)
}

use cmtf_core::model::{
    CouplingCase, CouplingMember, CouplingSpec, Dataset, DecompositionKind, DecompositionSpec, FactorMatrix, FactorSet,
    Factors, ModelSpec, PARAFAC2_B,
};

pub fn pinv(m: &M) -> M {
    from_na(&to_na(m).pseudo_inverse(1e-12).unwrap())
}

/// Random layout of two decompositions, optionally coupled on one dense mode
/// each, with ground truth consistent with the coupling.
#[derive(Clone, Debug)]
pub struct Layout {
    pub kinds: [DecompositionKind; 2],
    /// Coupled mode of each decomposition and the case.
    pub coupling: Option<(CouplingCase, usize, usize)>,
    pub min_dim: usize,
    pub max_dim: usize,
    pub max_rank: usize,
}

pub struct Instance {
    pub model: ModelSpec<f64>,
    pub truth: FactorSet<f64>,
}

fn dims_for(kind: DecompositionKind, g: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<usize> {
    (0..kind.num_modes()).map(|_| g.random_range(lo..=hi)).collect()
}

fn factor(g: &mut ChaCha8Rng, kind: DecompositionKind, mode: usize, rows: usize, r: usize) -> M {
    if kind == DecompositionKind::Parafac2 && mode == 2 {
        // Positive, with less collinear columns than a shifted uniform.
        M::from_fn(rows, r, |_, _| 0.05 + g.random::<f64>().powi(2))
    } else {
        signed(g, rows, r)
    }
}

/// `B_k = P_k Δ_B` with slice widths `j..j+2`.
pub fn parafac2_b(g: &mut ChaCha8Rng, j: usize, k: usize, r: usize) -> Vec<M> {
    let delta = uniform(g, r, r);
    (0..k).map(|s| orthonormal(g, j + s % 3, r).matmul(&delta).unwrap()).collect()
}

impl Layout {
    pub fn build(&self, seed: u64) -> Instance {
        let mut g = rng(seed);
        let lo = self.min_dim;
        let hi = self.max_dim;
        let mut ranks = [0usize; 2];
        let mut dims = [
            dims_for(self.kinds[0], &mut g, lo, hi),
            dims_for(self.kinds[1], &mut g, lo, hi),
        ];
        let same_rank = matches!(
            self.coupling.map(|c| c.0),
            Some(CouplingCase::Exact | CouplingCase::TransformFactorRows | CouplingCase::TransformDeltaRows)
        );
        ranks[0] = g.random_range(1..=self.max_rank);
        ranks[1] = if same_rank { ranks[0] } else { g.random_range(1..=self.max_rank) };
        // Every mode must admit the rank (PARAFAC2 needs J_k >= R; a unique
        // model needs I, K >= R too).
        for d in 0..2 {
            for n in dims[d].iter_mut() {
                *n = (*n).max(ranks[d]);
            }
        }
        let mut h = [None, None];
        let mut delta_shape = (0, 0);
        if let Some((case, m0, m1)) = self.coupling {
            use CouplingCase::*;
            match case {
                Exact | TransformFactorCols | TransformDeltaCols => {
                    let n = dims[0][m0].max(dims[1][m1]);
                    dims[0][m0] = n;
                    dims[1][m1] = n;
                }
                _ => {}
            }
            let (n0, n1) = (dims[0][m0], dims[1][m1]);
            let (r0, r1) = (ranks[0], ranks[1]);
            match case {
                Exact => delta_shape = (n0, r0),
                TransformFactorRows | TransformDeltaRows => {
                    let m = g.random_range(1..=n0.min(n1));
                    delta_shape = (m, r0);
                    if case == TransformFactorRows {
                        h = [Some(signed(&mut g, m, n0)), Some(signed(&mut g, m, n1))];
                    } else {
                        h = [Some(uniform(&mut g, n0, m)), Some(uniform(&mut g, n1, m))];
                    }
                }
                TransformFactorCols => {
                    let m = g.random_range(1..=r0.min(r1));
                    delta_shape = (n0, m);
                    h = [Some(signed(&mut g, r0, m)), Some(signed(&mut g, r1, m))];
                }
                TransformDeltaCols => {
                    let m = g.random_range(r0.max(r1)..=r0 + r1);
                    delta_shape = (n0, m);
                    // Column selectors: the first r0 and the last r1 of m
                    // shared columns, overlapping in r0 + r1 - m.
                    let pick = |cols: std::ops::Range<usize>| {
                        let cols: Vec<usize> = cols.collect();
                        M::from_fn(m, cols.len(), |i, j| if cols[j] == i { 1.0 } else { 0.0 })
                    };
                    h = [Some(pick(0..r0)), Some(pick(m - r1..m))];
                }
            }
        }

        let mut truth = Vec::new();
        for d in 0..2 {
            let kind = self.kinds[d];
            let r = ranks[d];
            let modes: Vec<FactorMatrix<f64>> = (0..kind.num_modes())
                .map(|m| {
                    if kind == DecompositionKind::Parafac2 && m == PARAFAC2_B {
                        FactorMatrix::Slices(parafac2_b(&mut g, dims[d][1], dims[d][2], r))
                    } else {
                        FactorMatrix::Dense(factor(&mut g, kind, m, dims[d][m], r))
                    }
                })
                .collect();
            truth.push(Factors { kind, modes });
        }
        if let Some((case, m0, m1)) = self.coupling {
            use CouplingCase::*;
            let x0 = truth[0].dense(m0).clone();
            let (n1, r1) = truth[1].dense(m1).shape();
            let x1 = match case {
                Exact => x0,
                TransformDeltaRows | TransformDeltaCols => {
                    // Both factors are images of one random Δ.
                    let delta = uniform(&mut g, delta_shape.0, delta_shape.1);
                    let image = |hh: &M| {
                        if case == TransformDeltaRows {
                            hh.matmul(&delta).unwrap()
                        } else {
                            delta.matmul(hh).unwrap()
                        }
                    };
                    truth[0].modes[m0] = FactorMatrix::Dense(image(h[0].as_ref().unwrap()));
                    image(h[1].as_ref().unwrap())
                }
                TransformFactorRows => {
                    // Minimum-norm solution of H₁X₁ = H₀X₀ plus a null-space part.
                    let (h0, h1) = (h[0].as_ref().unwrap(), h[1].as_ref().unwrap());
                    let p = pinv(h1);
                    let mut null = M::identity(n1);
                    null.add_scaled(-1.0, &p.matmul(h1).unwrap()).unwrap();
                    let mut out = p.matmul(&h0.matmul(&x0).unwrap()).unwrap();
                    out.add_scaled(1.0, &null.matmul(&uniform(&mut g, n1, r1)).unwrap()).unwrap();
                    out
                }
                TransformFactorCols => {
                    let (h0, h1) = (h[0].as_ref().unwrap(), h[1].as_ref().unwrap());
                    let p = pinv(h1);
                    let mut null = M::identity(r1);
                    null.add_scaled(-1.0, &h1.matmul(&p).unwrap()).unwrap();
                    let mut out = x0.matmul(h0).unwrap().matmul(&p).unwrap();
                    out.add_scaled(1.0, &uniform(&mut g, n1, r1).matmul(&null).unwrap()).unwrap();
                    out
                }
            };
            truth[1].modes[m1] = FactorMatrix::Dense(x1);
        }

        let truth = FactorSet::new(truth);
        let datasets: Vec<Dataset<f64>> = truth
            .decompositions
            .iter()
            .map(|f| {
                let mut x = f.reconstruct().unwrap();
                let n = x.frobenius_norm();
                x.scale_mut(1.0 / n);
                x
            })
            .collect();
        let decompositions = (0..2)
            .map(|d| DecompositionSpec::new(self.kinds[d], ranks[d]).with_weight(0.5))
            .collect();
        let couplings = self
            .coupling
            .map(|(case, m0, m1)| {
                let members = [(0, m0), (1, m1)]
                    .iter()
                    .enumerate()
                    .map(|(i, &(d, m))| {
                        let mem = CouplingMember::new(d, m);
                        match &h[i] {
                            Some(t) => mem.with_transform(t.clone()),
                            None => mem,
                        }
                    })
                    .collect();
                vec![CouplingSpec {
                    case,
                    members,
                    delta_shape,
                }]
            })
            .unwrap_or_default();
        Instance {
            model: ModelSpec::new(datasets, decompositions, couplings),
            truth,
        }
    }
}
