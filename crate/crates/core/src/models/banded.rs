use crate::error::{Error, Result};

/// Symmetric banded matrix stored by its lower band, with an in-place
/// Cholesky factorization.
///
/// Row `i` holds `A[i][i - k]` for `k = 0..=bandwidth` at offset
/// `i * (bandwidth + 1) + k`.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandedSpd {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        BandedSpd {
            n,
            bw: bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Entry `(i, j)` of the symmetric matrix (zero outside the band).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to the symmetric pair `(i, j)` / `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// `y = A x` for the unfactored matrix.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert!(!self.factored);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            y[i] += row[0] * x[i];
            for k in 1..=self.bw.min(i) {
                let j = i - k;
                y[i] += row[k] * x[j];
                y[j] += row[k] * x[i];
            }
        }
    }

    /// Replaces the matrix by its Cholesky factor `L` (`A = L L^T`).
    pub fn factor(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            for i in j..(j + bw + 1).min(n) {
                let lo = i.saturating_sub(bw);
                let mut s = self.data[self.idx(i, j)];
                for k in lo..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at pivot {j}"
                        )));
                    }
                    let d = self.idx(j, j);
                    self.data[d] = s.sqrt();
                } else {
                    let d = self.data[self.idx(j, j)];
                    let t = self.idx(i, j);
                    self.data[t] = s / d;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place using the factor.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "solve before factor");
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.data[self.idx(k, i)] * b[k];
            }
            b[i] = s / self.data[self.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn tridiag(n: usize) -> BandedSpd {
        let mut a = BandedSpd::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 4.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn solve_matches_dense() {
        let n = 12;
        let bw = 3;
        let mut a = BandedSpd::zeros(n, bw);
        for i in 0..n {
            a.add(i, i, 10.0 + i as f64);
            for k in 1..=bw.min(i) {
                a.add(i, i - k, 1.0 / (k as f64 + 0.5 * i as f64));
            }
        }
        let dense = DMatrix::from_fn(n, n, |i, j| a.get(i, j));
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let expected = dense.clone().cholesky().unwrap().solve(&DVector::from_vec(b.clone()));

        let mut y = vec![0.0; n];
        a.mul_vec(expected.as_slice(), &mut y);
        for (u, v) in y.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }

        let mut x = b.clone();
        a.factor().unwrap();
        a.solve_in_place(&mut x);
        for (u, v) in x.iter().zip(expected.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = tridiag(4);
        a.add(2, 2, -10.0);
        assert!(a.factor().is_err());
    }
}
