mod common;

use geomoed::criteria::{expected_criteria, harmonic_mean};
use geomoed::geometry::{local_scaling, singular_values, JacobianMatrix, DEFAULT_RANK_TOL};
use geomoed::models::{ForwardModel, HeatModel, HeatModelConfig};
use geomoed::sampling::{assemble_design_jacobian, draw_samples, estimate_field_jacobians, JacobianBatch, ParameterBox};
use geomoed::Result;
use proptest::prelude::*;

/// `(sin l1 + l2^2, exp(l1 l2), l1 - cos l2)`.
struct Smooth {
    coords: Vec<Vec<f64>>,
}

impl Smooth {
    fn new() -> Self {
        Smooth {
            coords: (0..3).map(|i| vec![i as f64]).collect(),
        }
    }

    fn exact(p: &[f64]) -> [[f64; 2]; 3] {
        let (a, b) = (p[0], p[1]);
        [
            [a.cos(), 2.0 * b],
            [b * (a * b).exp(), a * (a * b).exp()],
            [1.0, b.sin()],
        ]
    }
}

impl ForwardModel for Smooth {
    fn id(&self) -> String {
        "smooth".into()
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn field_len(&self) -> usize {
        3
    }
    fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![p[0].sin() + p[1] * p[1], (p[0] * p[1]).exp(), p[0] - p[1].cos()])
    }
    fn coordinates(&self) -> &[Vec<f64>] {
        &self.coords
    }
}

/// Only the listed rows of an inner model.
struct Restricted<'a> {
    inner: &'a dyn ForwardModel,
    rows: Vec<usize>,
    coords: Vec<Vec<f64>>,
}

impl ForwardModel for Restricted<'_> {
    fn id(&self) -> String {
        format!("{}-restricted", self.inner.id())
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn field_len(&self) -> usize {
        self.rows.len()
    }
    fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>> {
        let u = self.inner.evaluate(p)?;
        Ok(self.rows.iter().map(|&r| u[r]).collect())
    }
    fn coordinates(&self) -> &[Vec<f64>] {
        &self.coords
    }
}

fn max_fd_error(model: &Smooth, h: f64) -> f64 {
    let bx = ParameterBox::cube(2, 0.2, 1.0).unwrap();
    let samples = draw_samples(&bx, 50, 8).unwrap();
    let batch = estimate_field_jacobians(model, &samples, h).unwrap();
    let mut worst = 0.0f64;
    for i in 0..batch.sample_count() {
        let e = Smooth::exact(batch.sample(i));
        let j = batch.field_jacobian(i);
        for p in 0..3 {
            for k in 0..2 {
                worst = worst.max((j[(p, k)] - e[p][k]).abs());
            }
        }
    }
    worst
}

#[test]
fn fd_error_is_first_order() {
    let model = Smooth::new();
    let hs: [f64; 5] = [1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4];
    let pts: Vec<(f64, f64)> = hs.iter().map(|&h| (h.ln(), max_fd_error(&model, h).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    // halving h divides the error by 2^slope; accept a factor 4 either way
    assert!(slope > 0.9 && slope < 1.1, "slope {slope}");
    for w in pts.windows(2) {
        let ratio = (w[0].1 - w[1].1).exp();
        assert!(ratio > 0.5 && ratio < 8.0, "halving ratio {ratio}");
    }
}

#[test]
fn batches_are_bitwise_deterministic() {
    let model = HeatModel::new(HeatModelConfig::rod()).unwrap();
    let bx = model.parameter_box().unwrap();
    let s = draw_samples(&bx, 40, 99).unwrap();
    let a = estimate_field_jacobians(&model, &s, 1e-5).unwrap();
    let b = estimate_field_jacobians(&model, &s, 1e-5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn row_assembly_commutes_with_restriction() {
    let model = HeatModel::new(HeatModelConfig::rod()).unwrap();
    let bx = model.parameter_box().unwrap();
    let samples = draw_samples(&bx, 20, 4).unwrap();
    let rows = vec![33, 5];
    let full = estimate_field_jacobians(&model, &samples, 1e-5).unwrap();
    let assembled = assemble_design_jacobian(&full, &rows).unwrap();
    let restricted = Restricted {
        inner: &model,
        coords: rows.iter().map(|&r| model.coordinates()[r].clone()).collect(),
        rows: rows.clone(),
    };
    let direct = estimate_field_jacobians(&restricted, &samples, 1e-5).unwrap();
    for i in 0..samples.len() {
        let a = singular_values(assembled.get(i)).unwrap();
        let b = singular_values(&JacobianMatrix::new(direct.field_jacobian(i)).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9 * a[0], "{x} vs {y}");
        }
    }
}

#[test]
fn doubling_samples_is_stable() {
    let model = HeatModel::new(HeatModelConfig::rod()).unwrap();
    let bx = model.parameter_box().unwrap();
    for (seed_a, seed_b) in [(1, 2), (3, 4), (5, 6)] {
        let small = estimate_field_jacobians(&model, &draw_samples(&bx, 1000, seed_a).unwrap(), 1e-5).unwrap();
        let large = estimate_field_jacobians(&model, &draw_samples(&bx, 2000, seed_b).unwrap(), 1e-5).unwrap();
        for design in [[40, 0], [23, 10], [12, 8]] {
            let a = expected_criteria(&assemble_design_jacobian(&small, &design).unwrap(), DEFAULT_RANK_TOL);
            let b = expected_criteria(&assemble_design_jacobian(&large, &design).unwrap(), DEFAULT_RANK_TOL);
            let se = (a.stderr_ese.powi(2) + b.stderr_ese.powi(2)).sqrt();
            let sk = (a.stderr_esk.powi(2) + b.stderr_esk.powi(2)).sqrt();
            assert!((a.ese_inverse - b.ese_inverse).abs() < 3.0 * se, "{design:?} ese");
            assert!((a.esk_inverse - b.esk_inverse).abs() < 3.0 * sk, "{design:?} esk");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(200) })]

    #[test]
    fn utilities_are_bounded_and_match_harmonic_mean(
        data in prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 6), 1..30)
    ) {
        let mats: Vec<JacobianMatrix> = data.iter().map(|d| JacobianMatrix::from_row_slice(2, 3, d).unwrap()).collect();
        let se: Vec<f64> = mats.iter().map(|j| local_scaling(j, DEFAULT_RANK_TOL).unwrap()).collect();
        let r = expected_criteria(&JacobianBatch::new(mats).unwrap(), DEFAULT_RANK_TOL);
        prop_assert!(r.ese_inverse.is_finite() && r.ese_inverse >= 0.0);
        prop_assert!((0.0..=1.0).contains(&r.esk_inverse));
        let hm = harmonic_mean(&se).unwrap();
        prop_assert!(common::rel(r.ese_inverse, 1.0 / hm) < 1e-12);
    }
}
