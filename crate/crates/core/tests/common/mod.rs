//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the library's linear algebra.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            d = -d;
        }
        d *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    d
}

/// Gram matrix `J J^T` of the given rows.
pub fn gram(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|a| rows.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

/// `sqrt(det(J J^T))`.
pub fn gram_volume(rows: &[Vec<f64>]) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    det(gram(rows)).max(0.0).sqrt()
}

/// Skewness vector from Gram determinants:
/// `|j_k| * vol(J without k) / vol(J)`.
pub fn gram_skewness(rows: &[Vec<f64>]) -> Vec<f64> {
    let v = gram_volume(rows);
    (0..rows.len())
        .map(|k| {
            let norm = rows[k].iter().map(|x| x * x).sum::<f64>().sqrt();
            let rest: Vec<Vec<f64>> = rows.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, r)| r.clone()).collect();
            norm * gram_volume(&rest) / v
        })
        .collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
    (0..m).map(|_| (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random orthogonal matrix by Gram-Schmidt on a random square matrix.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        for _ in 0..2 {
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, bk)| x * bk[j]).sum()).collect())
        .collect()
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// `sqrt(det(J J^T))` as `prod |R_ii|` from a Householder QR of `J^T`.
/// Unlike the Gram determinant this does not square the condition number.
pub fn qr_volume(rows: &[Vec<f64>]) -> f64 {
    let m = rows.len();
    let n = rows[0].len();
    // columns of J^T are the rows of J; work on a row-major n x m copy
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
    let mut vol = 1.0;
    for k in 0..m {
        let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        for c in k..m {
            let dot: f64 = (k..n).map(|i| v[i - k] * a[i][c]).sum();
            let f = 2.0 * dot / vv;
            for i in k..n {
                a[i][c] -= f * v[i - k];
            }
        }
        vol *= a[k][k].abs();
    }
    vol
}
