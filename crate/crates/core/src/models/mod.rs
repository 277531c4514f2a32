//! Forward models mapping parameters to observable fields.

mod banded;
pub mod heat;
pub mod synthetic;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::sampling::ParameterBox;

pub use banded::BandedSpd;
pub use heat::{HeatModel, HeatModelConfig};
pub use synthetic::{catalog_matrix, synthetic_maps, LinearMap, QuadraticMap, RotatedLinearMap};

/// A deterministic map from `n` parameters to `P` observable field values.
///
/// Implementations must be immutable after construction so that distinct
/// parameter points can be evaluated from several threads at once.
pub trait ForwardModel: Send + Sync {
    fn id(&self) -> String;

    fn param_dim(&self) -> usize;

    fn field_len(&self) -> usize;

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>>;

    /// Spatial (or index) coordinates of each field value.
    fn coordinates(&self) -> &[Vec<f64>];

    /// Admissible parameter box, when the model has one.
    fn parameter_box(&self) -> Option<ParameterBox> {
        None
    }

    /// Analytic `P x n` Jacobian, when known.
    fn exact_jacobian(&self, _params: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

impl<T: ForwardModel + ?Sized> ForwardModel for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn field_len(&self) -> usize {
        (**self).field_len()
    }
    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>> {
        (**self).evaluate(params)
    }
    fn coordinates(&self) -> &[Vec<f64>] {
        (**self).coordinates()
    }
    fn parameter_box(&self) -> Option<ParameterBox> {
        (**self).parameter_box()
    }
    fn exact_jacobian(&self, params: &[f64]) -> Option<DMatrix<f64>> {
        (**self).exact_jacobian(params)
    }
}

/// Index of the field value whose coordinates are nearest to `point`.
pub fn nearest_index(model: &dyn ForwardModel, point: &[f64]) -> Option<usize> {
    model
        .coordinates()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d: f64 = c.iter().zip(point).map(|(a, b)| (a - b).powi(2)).sum();
            (i, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}
