//! Expected scaling and skewness of a design, estimated by Monte Carlo.
//!
//! Both expectations are harmonic means over the parameter samples. We
//! report the utilities `ESE^{-1}` and `ESK^{-1}`, which are plain means of
//! the pointwise reciprocals; a rank-deficient sample contributes zero.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::local_skewness_svd;
use crate::sampling::JacobianBatch;

/// Measure used to average the reciprocals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HmMeasure {
    /// Uniform (volume) measure on the parameter box.
    #[default]
    Volume,
    /// Initial probability measure, applied as sample weights.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub design_id: String,
    /// Field indices defining the design.
    pub design: Vec<usize>,
    /// Sensor coordinates of each design component, flattened.
    pub coordinates: Vec<f64>,
    pub ese_inverse: f64,
    pub esk_inverse: f64,
    pub stderr_ese: f64,
    pub stderr_esk: f64,
    pub sample_count: usize,
    /// Samples whose Jacobian was rank deficient (zero contribution).
    pub infinite_count: usize,
    /// Samples dropped because the SVD failed.
    pub excluded_count: usize,
    pub hm_measure: HmMeasure,
}

/// Harmonic mean of positive extended reals (`+inf` allowed, `1/inf = 0`).
pub fn harmonic_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("harmonic mean of an empty list"));
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::input(format!("harmonic mean needs positive values, got {bad}")));
    }
    let recip: Vec<f64> = values.iter().map(|v| 1.0 / v).collect();
    let mean = pairwise_sum(&recip) / values.len() as f64;
    Ok(1.0 / mean)
}

/// Pairwise summation; the result does not depend on thread scheduling.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Mean and standard error of `xs`, optionally self-normalized by weights.
pub(crate) fn mean_and_stderr(xs: &[f64], weights: Option<&[f64]>) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    match weights {
        None => {
            let mean = pairwise_sum(xs) / n as f64;
            if n < 2 {
                return (mean, f64::NAN);
            }
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
            let var = pairwise_sum(&dev) / (n - 1) as f64;
            (mean, (var / n as f64).sqrt())
        }
        Some(w) => {
            let wsum = pairwise_sum(w);
            let wx: Vec<f64> = xs.iter().zip(w).map(|(x, w)| x * w).collect();
            let mean = pairwise_sum(&wx) / wsum;
            let dev: Vec<f64> = xs.iter().zip(w).map(|(x, w)| (w * (x - mean)).powi(2)).collect();
            (mean, pairwise_sum(&dev).sqrt() / wsum)
        }
    }
}

/// Monte Carlo utilities of one design under the volume measure.
pub fn expected_criteria(batch: &JacobianBatch, rank_tol: f64) -> CriterionReport {
    expected_criteria_weighted(batch, rank_tol, None)
}

/// As [`expected_criteria`], but with per-sample weights (initial density
/// values at the samples) when averaging under the initial measure.
pub fn expected_criteria_weighted(
    batch: &JacobianBatch,
    rank_tol: f64,
    weights: Option<&[f64]>,
) -> CriterionReport {
    let per_sample: Vec<Option<(f64, f64)>> = batch
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|j| {
            local_skewness_svd(j, rank_tol)
                .ok()
                .map(|c| (1.0 / c.scaling, 1.0 / c.skewness))
        })
        .collect();

    let mut ese = Vec::with_capacity(per_sample.len());
    let mut esk = Vec::with_capacity(per_sample.len());
    let mut w_kept = weights.map(|_| Vec::with_capacity(per_sample.len()));
    let mut infinite = 0;
    let mut excluded = 0;
    for (i, s) in per_sample.iter().enumerate() {
        match s {
            Some((a, b)) => {
                if *a == 0.0 {
                    infinite += 1;
                }
                ese.push(*a);
                esk.push(*b);
                if let (Some(kept), Some(w)) = (w_kept.as_mut(), weights) {
                    kept.push(w[i]);
                }
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} samples excluded after SVD failure");
    }
    let (ese_inverse, stderr_ese) = mean_and_stderr(&ese, w_kept.as_deref());
    let (esk_inverse, stderr_esk) = mean_and_stderr(&esk, w_kept.as_deref());
    CriterionReport {
        design_id: String::new(),
        design: Vec::new(),
        coordinates: Vec::new(),
        ese_inverse,
        esk_inverse,
        stderr_ese,
        stderr_esk,
        sample_count: ese.len(),
        infinite_count: infinite,
        excluded_count: excluded,
        hm_measure: if weights.is_some() {
            HmMeasure::Initial
        } else {
            HmMeasure::Volume
        },
    }
}

/// One CSV row per report. Columns: `design_id`, `x_1..x_k` (flattened
/// sensor coordinates), `ese_inverse`, `esk_inverse`, `stderr_ese`,
/// `stderr_esk`, `sample_count`, `infinite_count`.
pub fn write_reports_csv(path: &Path, reports: &[CriterionReport]) -> Result<()> {
    let ncoord = reports.first().map_or(0, |r| r.coordinates.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["design_id".to_string()];
    header.extend((0..ncoord).map(|k| format!("x_{k}")));
    header.extend(
        [
            "ese_inverse",
            "esk_inverse",
            "stderr_ese",
            "stderr_esk",
            "sample_count",
            "infinite_count",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.design_id.clone()];
        row.extend(r.coordinates.iter().map(|c| format!("{c}")));
        row.extend([
            format!("{:.10e}", r.ese_inverse),
            format!("{:.10e}", r.esk_inverse),
            format!("{:.6e}", r.stderr_ese),
            format!("{:.6e}", r.stderr_esk),
            r.sample_count.to_string(),
            r.infinite_count.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{JacobianMatrix, DEFAULT_RANK_TOL};
    use approx::assert_relative_eq;

    fn constant_batch(rows: &[&[f64]], n: usize) -> JacobianBatch {
        JacobianBatch::new(vec![JacobianMatrix::from_rows(rows).unwrap(); n]).unwrap()
    }

    #[test]
    fn harmonic_mean_cases() {
        assert_relative_eq!(harmonic_mean(&[3.5, 3.5, 3.5]).unwrap(), 3.5, max_relative = 1e-15);
        assert_eq!(harmonic_mean(&[1.0, f64::INFINITY]).unwrap(), 2.0);
        assert_relative_eq!(harmonic_mean(&[1.0, 2.0, 4.0]).unwrap(), 12.0 / 7.0, max_relative = 1e-15);
        assert_eq!(harmonic_mean(&[f64::INFINITY; 3]).unwrap(), f64::INFINITY);
        assert!(harmonic_mean(&[1.0, 0.0]).is_err());
        assert!(harmonic_mean(&[-1.0]).is_err());
        assert!(harmonic_mean(&[]).is_err());
    }

    #[test]
    fn identity_batch() {
        let r = expected_criteria(&constant_batch(&[&[1.0, 0.0], &[0.0, 1.0]], 5), DEFAULT_RANK_TOL);
        assert_eq!(r.ese_inverse, 1.0);
        assert_eq!(r.esk_inverse, 1.0);
        assert_eq!(r.sample_count, 5);
        assert_eq!(r.infinite_count, 0);
    }

    #[test]
    fn sheared_batch() {
        let r = expected_criteria(&constant_batch(&[&[1.0, 0.0], &[1.0, 1.0]], 4), DEFAULT_RANK_TOL);
        assert_relative_eq!(r.ese_inverse, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.esk_inverse, 1.0 / 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn duplicate_rows_score_zero() {
        let r = expected_criteria(&constant_batch(&[&[1.0, 2.0], &[1.0, 2.0]], 3), DEFAULT_RANK_TOL);
        assert_eq!(r.ese_inverse, 0.0);
        assert_eq!(r.esk_inverse, 0.0);
        assert_eq!(r.infinite_count, 3);
    }

    #[test]
    fn utility_is_reciprocal_of_harmonic_mean() {
        let mats: Vec<JacobianMatrix> = (1..=7)
            .map(|k| {
                let k = k as f64;
                JacobianMatrix::from_rows(&[&[k, 0.3, -0.1], &[0.2, 1.0 / k, 0.5]]).unwrap()
            })
            .collect();
        let se: Vec<f64> = mats
            .iter()
            .map(|j| crate::geometry::local_scaling(j, DEFAULT_RANK_TOL).unwrap())
            .collect();
        let r = expected_criteria(&JacobianBatch::new(mats).unwrap(), DEFAULT_RANK_TOL);
        assert_relative_eq!(r.ese_inverse, 1.0 / harmonic_mean(&se).unwrap(), max_relative = 1e-12);
        assert!(r.esk_inverse <= 1.0 && r.esk_inverse >= 0.0);
    }

    #[test]
    fn uniform_weights_match_unweighted() {
        let mats: Vec<JacobianMatrix> = (1..=5)
            .map(|k| JacobianMatrix::from_rows(&[&[k as f64, 1.0], &[0.0, 1.0]]).unwrap())
            .collect();
        let b = JacobianBatch::new(mats).unwrap();
        let a = expected_criteria(&b, DEFAULT_RANK_TOL);
        let w = expected_criteria_weighted(&b, DEFAULT_RANK_TOL, Some(&[2.0; 5]));
        assert_relative_eq!(a.ese_inverse, w.ese_inverse, max_relative = 1e-14);
        assert_eq!(w.hm_measure, HmMeasure::Initial);
    }
}
