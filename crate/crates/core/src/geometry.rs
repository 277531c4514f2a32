//! Pointwise geometric kernels of a single Jacobian.
//!
//! For an `m x n` Jacobian `J` with `m <= n` and singular values
//! `s_1 >= ... >= s_m`:
//!
//! * the rows of `J` span a parallelepiped of `m`-volume `prod s_k`;
//! * the pre-image of a unit output cube has cross-section volume
//!   `1 / prod s_k`, the *local scaling effect*;
//! * the *skewness vector* has components `|j_k| / |j_k^perp|`, where
//!   `j_k^perp` is the part of row `k` orthogonal to the other rows, and the
//!   *local skewness* is its max-norm.
//!
//! Rank deficiency is encoded with `f64::INFINITY`, never with a sentinel.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative spectral cutoff: `s_k <= DEFAULT_RANK_TOL * s_max` counts as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

const SVD_MAX_ITER: usize = 1000;

/// A finite `m x n` Jacobian with `1 <= m <= n` (rows are outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix(DMatrix<f64>);

impl JacobianMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (m, n) = entries.shape();
        if m == 0 || n == 0 {
            return Err(Error::input(format!("empty Jacobian ({m} x {n})")));
        }
        if m > n {
            return Err(Error::input(format!(
                "Jacobian has more outputs than parameters ({m} > {n}); reduce redundant outputs first"
            )));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite Jacobian entry {bad}")));
        }
        Ok(JacobianMatrix(entries))
    }

    /// Builds a matrix from row slices of equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::input("ragged Jacobian rows"));
        }
        Self::new(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
    }

    pub fn from_row_slice(m: usize, n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * n {
            return Err(Error::input(format!(
                "expected {} entries for a {m} x {n} Jacobian, got {}",
                m * n,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(m, n, data))
    }

    pub fn outputs(&self) -> usize {
        self.0.nrows()
    }

    pub fn params(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row_norm(&self, k: usize) -> f64 {
        self.0.row(k).norm()
    }

    /// The matrix with row `k` removed. Requires `m >= 2`.
    pub fn without_row(&self, k: usize) -> JacobianMatrix {
        JacobianMatrix(self.0.clone().remove_row(k))
    }
}

/// Local scaling and skewness at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCriterion {
    pub scaling: f64,
    pub skewness: f64,
    pub skewness_vector: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub rank_deficient: bool,
}

fn sorted_singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let svd = SVD::try_new_unordered(a.clone(), false, false, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD failed to converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// The `m` singular values of `J`, descending.
pub fn singular_values(j: &JacobianMatrix) -> Result<Vec<f64>> {
    sorted_singular_values(&j.0)
}

fn is_rank_deficient(sv: &[f64], rank_tol: f64) -> bool {
    let max = sv.first().copied().unwrap_or(0.0);
    sv.iter().any(|&s| s <= rank_tol * max) || max == 0.0
}

/// `m`-volume of the parallelepiped spanned by the rows of `J`.
pub fn parallelepiped_measure(j: &JacobianMatrix) -> Result<f64> {
    Ok(singular_values(j)?.iter().product())
}

/// `m`-volume of the cross-section of the pre-image of a unit output cube,
/// computed from the columns of the pseudo-inverse `J^T (J J^T)^{-1}`.
///
/// Returns `+inf` when `J` is rank deficient under [`DEFAULT_RANK_TOL`].
pub fn cross_section_measure(j: &JacobianMatrix) -> Result<f64> {
    let sv = singular_values(j)?;
    if is_rank_deficient(&sv, DEFAULT_RANK_TOL) {
        return Ok(f64::INFINITY);
    }
    let a = &j.0;
    let gram = a * a.transpose();
    let gram_inv = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("Gram matrix not positive definite".into()))?
        .inverse();
    let pinv = a.transpose() * gram_inv;
    let pinv_sv = sorted_singular_values(&pinv.transpose())?;
    Ok(pinv_sv.iter().product())
}

/// Local scaling effect `(prod s_k)^{-1}`, or `+inf` when any
/// `s_k <= rank_tol * s_max`.
pub fn local_scaling(j: &JacobianMatrix, rank_tol: f64) -> Result<f64> {
    let sv = singular_values(j)?;
    Ok(scaling_from_singular_values(&sv, rank_tol))
}

fn scaling_from_singular_values(sv: &[f64], rank_tol: f64) -> f64 {
    if is_rank_deficient(sv, rank_tol) {
        f64::INFINITY
    } else {
        1.0 / sv.iter().product::<f64>()
    }
}

/// Local scaling and skewness from singular values of `J` and of each
/// row-deleted submatrix.
///
/// A single-row Jacobian has skewness 1 unless the row vanishes. Rank
/// deficiency makes scaling, skewness, and every vector component infinite.
pub fn local_skewness_svd(j: &JacobianMatrix, rank_tol: f64) -> Result<LocalCriterion> {
    let sv = singular_values(j)?;
    let m = j.outputs();
    if is_rank_deficient(&sv, rank_tol) {
        return Ok(LocalCriterion {
            scaling: f64::INFINITY,
            skewness: f64::INFINITY,
            skewness_vector: vec![f64::INFINITY; m],
            singular_values: sv,
            rank_deficient: true,
        });
    }
    let volume: f64 = sv.iter().product();
    let skewness_vector = if m == 1 {
        vec![1.0]
    } else {
        (0..m)
            .map(|k| {
                let sub: f64 = singular_values(&j.without_row(k))?.iter().product();
                Ok(j.row_norm(k) * sub / volume)
            })
            .collect::<Result<Vec<_>>>()?
    };
    let skewness = skewness_vector.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LocalCriterion {
        scaling: 1.0 / volume,
        skewness,
        skewness_vector,
        singular_values: sv,
        rank_deficient: false,
    })
}

/// Skewness as the incremental change in scaling when one row is added:
/// `SK = SE(J) * max_k |j_k| / SE(J without row k)`.
pub fn skewness_as_scaling_ratio(j: &JacobianMatrix, rank_tol: f64) -> Result<f64> {
    let m = j.outputs();
    if m < 2 {
        return Err(Error::input("incremental-scaling skewness needs at least two rows"));
    }
    let full = local_scaling(j, rank_tol)?;
    if full.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut worst = f64::NEG_INFINITY;
    for k in 0..m {
        let reduced = local_scaling(&j.without_row(k), rank_tol)?;
        // a finite full-rank SE forces every row-deleted SE to be finite
        worst = worst.max(j.row_norm(k) / reduced);
    }
    Ok(full * worst)
}

/// Reference skewness by explicit orthogonal decomposition of each row
/// against the span of the others (modified Gram-Schmidt), with no SVD.
///
/// Singular values are reported from the eigenvalues of `J J^T` and the
/// scaling from the product of successive orthogonal row components.
pub fn local_skewness_oracle(j: &JacobianMatrix) -> Result<LocalCriterion> {
    let a = &j.0;
    let m = a.nrows();
    let rows: Vec<DVector<f64>> = (0..m).map(|k| a.row(k).transpose()).collect();
    let scale = rows.iter().map(|r| r.norm()).fold(0.0, f64::max);
    let tiny = 1e-10 * scale;

    let mut skewness_vector = Vec::with_capacity(m);
    for k in 0..m {
        let others: Vec<&DVector<f64>> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, r)| r)
            .collect();
        let perp = orthogonal_residual(&rows[k], &others, tiny);
        let norm = rows[k].norm();
        let pn = perp.norm();
        skewness_vector.push(if pn <= tiny || norm == 0.0 {
            f64::INFINITY
        } else {
            norm / pn
        });
    }

    let mut volume = 1.0;
    for k in 0..m {
        let prev: Vec<&DVector<f64>> = rows[..k].iter().collect();
        volume *= orthogonal_residual(&rows[k], &prev, tiny).norm();
    }

    let gram = a * a.transpose();
    let mut singular_values: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    singular_values.sort_by(|x, y| y.total_cmp(x));

    let rank_deficient = skewness_vector.iter().any(|v| v.is_infinite());
    let skewness = if m == 1 && !rank_deficient {
        1.0
    } else {
        skewness_vector.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(LocalCriterion {
        scaling: if rank_deficient { f64::INFINITY } else { 1.0 / volume },
        skewness,
        skewness_vector: if m == 1 && !rank_deficient { vec![1.0] } else { skewness_vector },
        singular_values,
        rank_deficient,
    })
}

/// Component of `v` orthogonal to `span(basis)`, via modified Gram-Schmidt
/// with one reorthogonalization pass.
fn orthogonal_residual(v: &DVector<f64>, basis: &[&DVector<f64>], tiny: f64) -> DVector<f64> {
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut w = (*b).clone();
        for _ in 0..2 {
            for e in &q {
                let c = e.dot(&w);
                w.axpy(-c, e, 1.0);
            }
        }
        let nw = w.norm();
        if nw > tiny {
            q.push(w / nw);
        }
    }
    let mut r = v.clone();
    for _ in 0..2 {
        for e in &q {
            let c = e.dot(&r);
            r.axpy(-c, e, 1.0);
        }
    }
    r
}
