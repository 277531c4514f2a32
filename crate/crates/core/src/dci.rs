//! Data-consistent inversion.
//!
//! The updated density is `pi_up(l) = pi_init(l) * r(l)` with
//! `r(l) = pi_obs(Q(l)) / pi_pred(Q(l))`, where `pi_pred` is the
//! push-forward of the initial density, estimated here by a Gaussian KDE
//! of the predicted QoI samples. Under the predictability assumption the
//! sample mean of `r` over initial samples is one; a mean far from one
//! flags a violation.

use std::path::Path;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::mean_and_stderr;
use crate::design::GridField;
use crate::error::{Error, Result};
use crate::models::ForwardModel;
use crate::sampling::{draw_samples, evaluate_fields, tensor_grid, ParameterBox, SampleSet, SamplingScheme};

/// Predicted densities below this are treated as underflow.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Per-dimension bandwidth rule for Gaussian product kernels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `h_d = s_d (4 / ((d + 2) n))^(1 / (d + 4))`
    #[default]
    Silverman,
    /// `h_d = s_d n^(-1 / (d + 4))`
    Scott,
    Fixed(Vec<f64>),
}

/// Gaussian product-kernel density estimate with optional sample weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    data: Vec<f64>,
    dim: usize,
    weights: Option<Vec<f64>>,
    bandwidth: Vec<f64>,
    norm: f64,
}

impl Kde {
    pub fn new(points: &[Vec<f64>], weights: Option<&[f64]>, rule: &BandwidthRule) -> Result<Self> {
        let n = points.len();
        let dim = points.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(Error::input("density estimate needs at least two samples"));
        }
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::input("density samples must share a positive dimension"));
        }
        if let Some(w) = weights {
            if w.len() != n || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::input("KDE weights must be finite, nonnegative, one per point"));
            }
            if w.iter().all(|x| *x == 0.0) {
                return Err(Error::input("KDE weights are all zero"));
            }
        }
        let uniform = vec![1.0; n];
        let w = weights.unwrap_or(&uniform);
        let wsum: f64 = w.iter().sum();
        let n_eff = wsum * wsum / w.iter().map(|x| x * x).sum::<f64>();

        let mut bandwidth = Vec::with_capacity(dim);
        for d in 0..dim {
            let mean = points.iter().zip(w).map(|(p, w)| w * p[d]).sum::<f64>() / wsum;
            let var = points.iter().zip(w).map(|(p, w)| w * (p[d] - mean).powi(2)).sum::<f64>() / wsum
                * n_eff
                / (n_eff - 1.0).max(1.0);
            let sd = var.sqrt();
            let h = match rule {
                BandwidthRule::Silverman => {
                    sd * (4.0 / ((dim as f64 + 2.0) * n_eff)).powf(1.0 / (dim as f64 + 4.0))
                }
                BandwidthRule::Scott => sd * n_eff.powf(-1.0 / (dim as f64 + 4.0)),
                BandwidthRule::Fixed(h) => *h.get(d).ok_or_else(|| {
                    Error::input(format!("fixed bandwidth has no entry for dimension {d}"))
                })?,
            };
            let flat = sd <= 1e-12 * mean.abs().max(1.0) && !matches!(rule, BandwidthRule::Fixed(_));
            if flat || !(h.is_finite() && h > 0.0) {
                return Err(Error::DegenerateDensity {
                    dim: d,
                    reason: format!("sample spread {sd:e} gives bandwidth {h:e}"),
                });
            }
            bandwidth.push(h);
        }
        let norm = wsum * bandwidth.iter().map(|h| h * (2.0 * std::f64::consts::PI).sqrt()).product::<f64>();
        Ok(Kde {
            data: points.concat(),
            dim,
            weights: weights.map(<[f64]>::to_vec),
            bandwidth,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn pdf(&self, q: &[f64]) -> f64 {
        let inv: Vec<f64> = self.bandwidth.iter().map(|h| 1.0 / h).collect();
        let mut acc = 0.0;
        for (i, x) in self.data.chunks_exact(self.dim).enumerate() {
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let mut e = 0.0;
            for d in 0..self.dim {
                let z = (q[d] - x[d]) * inv[d];
                e += z * z;
            }
            acc += w * (-0.5 * e).exp();
        }
        acc / self.norm
    }
}

/// A density on parameters or outputs.
#[derive(Debug, Clone)]
pub enum DensitySpec {
    Gaussian {
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
    UniformBox(ParameterBox),
    Kde(Kde),
}

impl DensitySpec {
    pub fn gaussian(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if m == 0 || covariance.shape() != (m, m) {
            return Err(Error::input("Gaussian mean and covariance shapes disagree"));
        }
        if (&covariance - covariance.transpose()).abs().max() > 1e-12 * covariance.abs().max() {
            return Err(Error::input("covariance must be symmetric"));
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::input("covariance must be positive definite"))?;
        Ok(DensitySpec::Gaussian {
            mean,
            covariance,
            chol,
        })
    }

    /// Gaussian with covariance `variance * I`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let m = mean.len();
        Self::gaussian(mean, DMatrix::identity(m, m) * variance)
    }

    pub fn dim(&self) -> usize {
        match self {
            DensitySpec::Gaussian { mean, .. } => mean.len(),
            DensitySpec::UniformBox(b) => b.dim(),
            DensitySpec::Kde(k) => k.dim(),
        }
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            DensitySpec::Gaussian { mean, chol, .. } => {
                let m = mean.len();
                let diff = DVector::from_iterator(m, x.iter().zip(mean).map(|(a, b)| a - b));
                let z = chol.l().solve_lower_triangular(&diff).expect("nonsingular factor");
                let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
                (-0.5 * z.norm_squared() - log_det - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln()).exp()
            }
            DensitySpec::UniformBox(b) => {
                if b.contains(x) {
                    1.0 / b.volume()
                } else {
                    0.0
                }
            }
            DensitySpec::Kde(k) => k.pdf(x),
        }
    }

    /// Draws `count` points; KDE densities cannot be sampled here.
    pub fn sample(&self, count: usize, seed: u64) -> Result<SampleSet> {
        match self {
            DensitySpec::UniformBox(b) => draw_samples(b, count, seed),
            DensitySpec::Gaussian { mean, chol, .. } => {
                if count == 0 {
                    return Err(Error::input("sample count must be at least 1"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let l = chol.l();
                let m = mean.len();
                let pts = (0..count)
                    .map(|_| {
                        let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
                        let x = &l * z;
                        x.iter().zip(mean).map(|(a, b)| a + b).collect()
                    })
                    .collect();
                SampleSet::from_points(pts, seed, SamplingScheme::UniformRandom)
            }
            DensitySpec::Kde(_) => Err(Error::input("sampling from a KDE density is not supported")),
        }
    }
}

/// KDE of the predicted QoI samples (the push-forward of the initial
/// density).
pub fn push_forward_density(qoi_samples: &[Vec<f64>], rule: &BandwidthRule) -> Result<DensitySpec> {
    Ok(DensitySpec::Kde(Kde::new(qoi_samples, None, rule)?))
}

/// Initial samples with their update ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    pub points: Vec<Vec<f64>>,
    pub qoi: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub mean_ratio: f64,
    pub stderr: f64,
    /// Samples whose predicted density underflowed; their weight is zero.
    pub underflow: Vec<usize>,
    pub accepted: Option<Vec<bool>>,
}

impl WeightedEnsemble {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest ratio; the rejection-sampling constant.
    pub fn c_estimate(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// `|E[r] - 1| > 3` standard errors.
    pub fn predictability_violated(&self) -> bool {
        (self.mean_ratio - 1.0).abs() > 3.0 * self.stderr
    }

    pub fn accepted_points(&self) -> Vec<Vec<f64>> {
        self.select_accepted(&self.points)
    }

    pub fn accepted_qoi(&self) -> Vec<Vec<f64>> {
        self.select_accepted(&self.qoi)
    }

    fn select_accepted(&self, from: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match &self.accepted {
            Some(mask) => from.iter().zip(mask).filter(|(_, a)| **a).map(|(p, _)| p.clone()).collect(),
            None => Vec::new(),
        }
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        self.accepted
            .as_ref()
            .map(|m| m.iter().filter(|a| **a).count() as f64 / m.len() as f64)
    }

    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary {
            schema_version: 1,
            n_samples: self.len(),
            mean_ratio: self.mean_ratio,
            stderr: self.stderr,
            acceptance_rate: self.acceptance_rate(),
            n_accepted: self.accepted.as_ref().map(|m| m.iter().filter(|a| **a).count()),
            c_estimate: self.c_estimate(),
            underflow_count: self.underflow.len(),
            predictability_violated: self.predictability_violated(),
        }
    }

    /// Columns: `lambda_*`, `q_*`, `r`, `accepted`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.points.first().map_or(0, Vec::len);
        let m = self.qoi.first().map_or(0, Vec::len);
        let mut header: Vec<String> = (1..=n).map(|j| format!("lambda_{j}")).collect();
        header.extend((1..=m).map(|j| format!("q_{j}")));
        header.push("r".into());
        header.push("accepted".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.points[i].iter().map(|v| format!("{v:e}")).collect();
            row.extend(self.qoi[i].iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", self.weights[i]));
            row.push(match &self.accepted {
                Some(a) => (a[i] as u8).to_string(),
                None => String::new(),
            });
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub schema_version: u32,
    pub n_samples: usize,
    pub mean_ratio: f64,
    pub stderr: f64,
    pub acceptance_rate: Option<f64>,
    pub n_accepted: Option<usize>,
    pub c_estimate: f64,
    pub underflow_count: usize,
    pub predictability_violated: bool,
}

/// Ratios `r_i = pi_obs(q_i) / pi_pred(q_i)` at the initial samples.
pub fn update_weights(
    points: &SampleSet,
    qoi_samples: &[Vec<f64>],
    observed: &DensitySpec,
    predicted: &DensitySpec,
) -> Result<WeightedEnsemble> {
    if points.len() != qoi_samples.len() {
        return Err(Error::input("one QoI value per parameter sample is required"));
    }
    let ratios: Vec<(f64, bool)> = qoi_samples
        .par_iter()
        .map(|q| {
            let pred = predicted.pdf(q);
            if !(pred >= DENSITY_FLOOR) {
                (0.0, true)
            } else {
                (observed.pdf(q) / pred, false)
            }
        })
        .collect();
    let weights: Vec<f64> = ratios.iter().map(|r| r.0).collect();
    let underflow: Vec<usize> = ratios.iter().enumerate().filter(|(_, r)| r.1).map(|(i, _)| i).collect();
    if !underflow.is_empty() {
        warn!("{} samples had predicted density below {DENSITY_FLOOR:e}", underflow.len());
    }
    let (mean_ratio, stderr) = mean_and_stderr(&weights, None);
    let ens = WeightedEnsemble {
        points: points.iter().map(<[f64]>::to_vec).collect(),
        qoi: qoi_samples.to_vec(),
        weights,
        mean_ratio,
        stderr,
        underflow,
        accepted: None,
    };
    if ens.predictability_violated() {
        warn!(
            "mean update ratio {:.4} (stderr {:.4}) is far from one; the observed density is \
             not well predicted",
            ens.mean_ratio, ens.stderr
        );
    }
    Ok(ens)
}

/// Accepts sample `i` when `u_i <= w_i / max w`.
pub fn rejection_sample(mut ensemble: WeightedEnsemble, seed: u64) -> Result<WeightedEnsemble> {
    let c = ensemble.c_estimate();
    if !(c > 0.0) {
        return Err(Error::input("all update weights are zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = ensemble
        .weights
        .iter()
        .map(|w| rng.gen::<f64>() <= w / c)
        .collect();
    ensemble.accepted = Some(mask);
    Ok(ensemble)
}

/// DCI from precomputed fields: select the design rows, estimate the
/// push-forward, weight, and rejection-sample.
pub fn dci_from_fields(
    samples: &SampleSet,
    fields: &[Vec<f64>],
    design: &[usize],
    observed: &DensitySpec,
    rule: &BandwidthRule,
    seed: u64,
) -> Result<WeightedEnsemble> {
    if observed.dim() != design.len() {
        return Err(Error::input(format!(
            "observed density has dimension {} but the design has {} components",
            observed.dim(),
            design.len()
        )));
    }
    let qoi: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            design
                .iter()
                .map(|&p| f.get(p).copied().ok_or_else(|| Error::input(format!("design index {p} out of range"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let predicted = push_forward_density(&qoi, rule)?;
    let ens = update_weights(samples, &qoi, observed, &predicted)?;
    rejection_sample(ens, seed.wrapping_add(1))
}

/// End-to-end DCI for one design: draw `count` initial samples, evaluate
/// the model, and build the weighted ensemble.
pub fn dci_solve(
    model: &dyn ForwardModel,
    design: &[usize],
    init: &DensitySpec,
    observed: &DensitySpec,
    count: usize,
    seed: u64,
    rule: &BandwidthRule,
) -> Result<WeightedEnsemble> {
    if design.len() > model.param_dim() {
        return Err(Error::input("design has more components than parameters"));
    }
    let samples = init.sample(count, seed)?;
    let fields = evaluate_fields(model, &samples)?;
    dci_from_fields(&samples, &fields, design, observed, rule, seed)
}

/// Updated density on a tensor grid over `bx`, as a weighted KDE of the
/// initial samples with their update ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub points: SampleSet,
    pub per_axis: usize,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn field(&self) -> GridField {
        GridField::dense(vec![self.per_axis; self.points.dim()], self.values.clone())
            .expect("grid shape matches by construction")
    }

    /// Local maxima at or above `fraction` of the global maximum.
    pub fn modes(&self, fraction: f64) -> Vec<Vec<f64>> {
        let field = self.field();
        let top = field.max_value().unwrap_or(0.0);
        crate::design::local_maxima(&field)
            .into_iter()
            .filter(|&i| self.values[i] >= fraction * top)
            .map(|i| self.points.point(i).to_vec())
            .collect()
    }

    /// Columns: `lambda_*`, `density`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.points.dim()).map(|j| format!("lambda_{j}")).collect();
        header.push("density".into());
        w.write_record(&header)?;
        for (p, v) in self.points.iter().zip(&self.values) {
            let mut row: Vec<String> = p.iter().map(|x| format!("{x:e}")).collect();
            row.push(format!("{v:e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn updated_density_grid(
    ensemble: &WeightedEnsemble,
    bx: &ParameterBox,
    per_axis: usize,
    rule: &BandwidthRule,
) -> Result<DensityGrid> {
    let kde = Kde::new(&ensemble.points, Some(&ensemble.weights), &BandwidthRule::Fixed(
        initial_bandwidth(&ensemble.points, rule)?,
    ))?;
    let grid = tensor_grid(bx, per_axis)?;
    let values: Vec<f64> = (0..grid.len()).into_par_iter().map(|i| kde.pdf(grid.point(i))).collect();
    Ok(DensityGrid {
        points: grid,
        per_axis,
        values,
    })
}

/// Bandwidth from the unweighted initial samples; reweighting by `r` would
/// otherwise shrink the effective sample size and over-smooth.
fn initial_bandwidth(points: &[Vec<f64>], rule: &BandwidthRule) -> Result<Vec<f64>> {
    Ok(Kde::new(points, None, rule)?.bandwidth().to_vec())
}

/// Sample mean and covariance of a point set.
pub fn moments(points: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for p in points {
        for j in 0..d {
            mean[j] += p[j] / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]) / (n as f64 - 1.0);
            }
        }
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal_samples(n: usize, seed: u64) -> Vec<Vec<f64>> {
        DensitySpec::isotropic(vec![0.0], 1.0)
            .unwrap()
            .sample(n, seed)
            .unwrap()
            .iter()
            .map(<[f64]>::to_vec)
            .collect()
    }

    #[test]
    fn kde_recovers_normal_peak() {
        let kde = push_forward_density(&std_normal_samples(10_000, 3), &BandwidthRule::Silverman).unwrap();
        let want = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((kde.pdf(&[0.0]) - want).abs() < 0.05);
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        let pts = vec![vec![1.0, 2.0]; 10];
        match push_forward_density(&pts, &BandwidthRule::Silverman) {
            Err(Error::DegenerateDensity { dim, .. }) => assert_eq!(dim, 0),
            other => panic!("unexpected {other:?}"),
        }
        let mut pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0]).collect();
        pts[0][1] = 2.0;
        match push_forward_density(&pts, &BandwidthRule::Silverman) {
            Err(Error::DegenerateDensity { dim, .. }) => assert_eq!(dim, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(push_forward_density(&[vec![1.0]], &BandwidthRule::Silverman).is_err());
    }

    #[test]
    fn gaussian_pdf_matches_closed_form() {
        let g = DensitySpec::gaussian(vec![1.0, -1.0], DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        // det = 1.75, inverse = [[1, -0.5], [-0.5, 2]] / 1.75
        let x = [0.5, 0.0];
        let d = [-0.5f64, 1.0];
        let quad = (d[0] * d[0] - d[0] * d[1] + 2.0 * d[1] * d[1]) / 1.75;
        let want = (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * 1.75f64.sqrt());
        assert!((g.pdf(&x) - want).abs() < 1e-14);
        assert!(DensitySpec::gaussian(vec![0.0; 2], DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn identity_update_has_unit_weights() {
        let pts = SampleSet::from_points(std_normal_samples(50, 1), 1, SamplingScheme::UniformRandom).unwrap();
        let qoi: Vec<Vec<f64>> = pts.iter().map(<[f64]>::to_vec).collect();
        let pred = push_forward_density(&qoi, &BandwidthRule::Silverman).unwrap();
        let ens = update_weights(&pts, &qoi, &pred, &pred).unwrap();
        assert!(ens.weights.iter().all(|w| (*w - 1.0).abs() < 1e-15));
        assert!((ens.mean_ratio - 1.0).abs() < 1e-15);
        let acc = rejection_sample(ens, 4).unwrap();
        assert_eq!(acc.acceptance_rate(), Some(1.0));
    }

    #[test]
    fn observed_outside_prediction_is_flagged() {
        let pts = SampleSet::from_points(std_normal_samples(2000, 5), 5, SamplingScheme::UniformRandom).unwrap();
        let qoi: Vec<Vec<f64>> = pts.iter().map(<[f64]>::to_vec).collect();
        let pred = push_forward_density(&qoi, &BandwidthRule::Silverman).unwrap();
        let obs = DensitySpec::isotropic(vec![8.0], 0.25).unwrap();
        let ens = update_weights(&pts, &qoi, &obs, &pred).unwrap();
        assert!(ens.mean_ratio < 0.05);
        assert!(ens.predictability_violated());
    }

    #[test]
    fn rejection_respects_zero_weights() {
        let ens = WeightedEnsemble {
            points: vec![vec![0.0], vec![1.0]],
            qoi: vec![vec![0.0], vec![1.0]],
            weights: vec![1.0, 0.0],
            mean_ratio: 0.5,
            stderr: 0.5,
            underflow: vec![],
            accepted: None,
        };
        for seed in 0..20 {
            let a = rejection_sample(ens.clone(), seed).unwrap();
            assert_eq!(a.accepted.unwrap(), vec![true, false]);
        }
        let zero = WeightedEnsemble {
            weights: vec![0.0, 0.0],
            ..ens
        };
        assert!(rejection_sample(zero, 0).is_err());
    }

    #[test]
    fn underflow_is_counted() {
        let pts = SampleSet::from_points(vec![vec![0.0], vec![1e6]], 0, SamplingScheme::UniformRandom).unwrap();
        let qoi = vec![vec![0.0], vec![1e6]];
        let pred = DensitySpec::isotropic(vec![0.0], 1.0).unwrap();
        let ens = update_weights(&pts, &qoi, &pred, &pred).unwrap();
        assert_eq!(ens.underflow, vec![1]);
        assert_eq!(ens.weights[1], 0.0);
        assert!(ens.weights.iter().all(|w| w.is_finite() && *w >= 0.0));
    }
}
