//! Analytic maps with known Jacobians, used as fixtures.

use nalgebra::{DMatrix, DVector};

use super::ForwardModel;
use crate::error::{Error, Result};

/// `Q(lambda) = A lambda`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    matrix: DMatrix<f64>,
    coords: Vec<Vec<f64>>,
    name: String,
}

impl LinearMap {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.is_empty() || matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("linear map needs a non-empty finite matrix"));
        }
        let coords = (0..matrix.nrows()).map(|i| vec![i as f64]).collect();
        Ok(LinearMap {
            matrix,
            coords,
            name: "linear".into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::input("ragged matrix rows"));
        }
        Self::new(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        LinearMap {
            name: "identity".into(),
            ..Self::new(DMatrix::identity(n, n)).expect("identity is finite")
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl ForwardModel for LinearMap {
    fn id(&self) -> String {
        format!("{}-{}x{}", self.name, self.matrix.nrows(), self.matrix.ncols())
    }
    fn param_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn field_len(&self) -> usize {
        self.matrix.nrows()
    }
    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>> {
        if params.len() != self.param_dim() {
            return Err(Error::input("parameter dimension mismatch"));
        }
        let y = &self.matrix * DVector::from_column_slice(params);
        Ok(y.as_slice().to_vec())
    }
    fn coordinates(&self) -> &[Vec<f64>] {
        &self.coords
    }
    fn exact_jacobian(&self, _params: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }
}

/// `Q(l1, l2) = (l1^2, l1 l2)`.
#[derive(Debug, Clone)]
pub struct QuadraticMap {
    coords: Vec<Vec<f64>>,
}

impl Default for QuadraticMap {
    fn default() -> Self {
        QuadraticMap {
            coords: vec![vec![0.0], vec![1.0]],
        }
    }
}

impl ForwardModel for QuadraticMap {
    fn id(&self) -> String {
        "quadratic".into()
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn field_len(&self) -> usize {
        2
    }
    fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != 2 {
            return Err(Error::input("quadratic map takes two parameters"));
        }
        Ok(vec![p[0] * p[0], p[0] * p[1]])
    }
    fn coordinates(&self) -> &[Vec<f64>] {
        &self.coords
    }
    fn exact_jacobian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(2, 2, &[2.0 * p[0], 0.0, p[1], p[0]]))
    }
}

/// `Q(lambda) = A R(theta) lambda`, with `R(theta)` a rotation of the first
/// two parameter axes. Scaling and skewness do not depend on `theta`.
#[derive(Debug, Clone)]
pub struct RotatedLinearMap {
    inner: LinearMap,
    theta: f64,
}

impl RotatedLinearMap {
    pub fn new(matrix: DMatrix<f64>, theta: f64) -> Result<Self> {
        if matrix.ncols() < 2 {
            return Err(Error::input("rotation needs at least two parameters"));
        }
        let n = matrix.ncols();
        let mut rot = DMatrix::identity(n, n);
        let (s, c) = theta.sin_cos();
        rot[(0, 0)] = c;
        rot[(0, 1)] = -s;
        rot[(1, 0)] = s;
        rot[(1, 1)] = c;
        let inner = LinearMap {
            name: format!("rotated{theta:.6}"),
            ..LinearMap::new(matrix * rot)?
        };
        Ok(RotatedLinearMap { inner, theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

impl ForwardModel for RotatedLinearMap {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn field_len(&self) -> usize {
        self.inner.field_len()
    }
    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.inner.evaluate(params)
    }
    fn coordinates(&self) -> &[Vec<f64>] {
        self.inner.coordinates()
    }
    fn exact_jacobian(&self, params: &[f64]) -> Option<DMatrix<f64>> {
        self.inner.exact_jacobian(params)
    }
}

/// The 3x4 matrix used by the fixture catalog.
pub fn catalog_matrix() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        4,
        &[1.0, 0.5, 0.0, -0.2, 0.3, 2.0, 0.1, 0.0, 0.0, -0.4, 1.5, 0.7],
    )
}

/// The fixture catalog: a 3x4 linear map, the 2D identity, the quadratic
/// map, and a rotated copy of the linear map.
pub fn synthetic_maps() -> Vec<Box<dyn ForwardModel>> {
    let a = catalog_matrix();
    vec![
        Box::new(LinearMap::new(a.clone()).expect("finite")),
        Box::new(LinearMap::identity(2)),
        Box::new(QuadraticMap::default()),
        Box::new(RotatedLinearMap::new(a, 0.7).expect("finite")),
    ]
}
