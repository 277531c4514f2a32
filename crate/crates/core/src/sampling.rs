//! Parameter sampling, forward finite-difference field Jacobians, and
//! per-design Jacobian assembly by row selection.
//!
//! A [`FieldJacobianBatch`] stores the Jacobian of *every* observable field
//! value at every sample, so any candidate design (a tuple of field indices)
//! can be scored without re-running the model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::JacobianMatrix;
use crate::models::ForwardModel;

/// Axis-aligned parameter domain `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::input("parameter box bounds must be non-empty and equal length"));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::input(format!(
                "parameter box axis {i}: lower {} is not below upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(ParameterBox { lower, upper })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    UniformRandom,
    TensorGrid,
}

/// `N` parameter points stored row-major (`N x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<f64>,
    dim: usize,
    pub seed: u64,
    pub scheme: SamplingScheme,
}

impl SampleSet {
    pub fn from_points(points: Vec<Vec<f64>>, seed: u64, scheme: SamplingScheme) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.is_empty() || dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::input("sample set needs at least one point of uniform dimension"));
        }
        Ok(SampleSet {
            points: points.concat(),
            dim,
            seed,
            scheme,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (1..=self.dim).map(|j| format!("lambda_{j}")).collect();
        w.write_record(&header)?;
        for p in self.iter() {
            w.write_record(p.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reproducible uniform draws in `bx`; the same seed gives the same points.
pub fn draw_samples(bx: &ParameterBox, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = bx.dim();
    let mut points = Vec::with_capacity(count * n);
    for _ in 0..count {
        for j in 0..n {
            points.push(rng.gen_range(bx.lower[j]..=bx.upper[j]));
        }
    }
    Ok(SampleSet {
        points,
        dim: n,
        seed,
        scheme: SamplingScheme::UniformRandom,
    })
}

/// Tensor grid with `per_axis` points per axis, endpoints included
/// (a single point per axis sits at the midpoint).
pub fn tensor_grid(bx: &ParameterBox, per_axis: usize) -> Result<SampleSet> {
    if per_axis == 0 {
        return Err(Error::input("grid needs at least one point per axis"));
    }
    let n = bx.dim();
    let axis = |j: usize, k: usize| {
        if per_axis == 1 {
            0.5 * (bx.lower[j] + bx.upper[j])
        } else {
            bx.lower[j] + (bx.upper[j] - bx.lower[j]) * k as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis
        .checked_pow(n as u32)
        .ok_or_else(|| Error::input("tensor grid too large"))?;
    let mut points = Vec::with_capacity(total * n);
    for flat in 0..total {
        let mut rem = flat;
        let mut p = vec![0.0; n];
        // last axis varies fastest
        for j in (0..n).rev() {
            p[j] = axis(j, rem % per_axis);
            rem /= per_axis;
        }
        points.extend(p);
    }
    Ok(SampleSet {
        points,
        dim: n,
        seed: 0,
        scheme: SamplingScheme::TensorGrid,
    })
}

/// Evaluates the model at every sample, in sample order.
pub fn evaluate_fields(model: &dyn ForwardModel, samples: &SampleSet) -> Result<Vec<Vec<f64>>> {
    (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let p = samples.point(i);
            model.evaluate(p).map_err(|e| Error::Model {
                sample: i,
                params: p.to_vec(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Field values and forward-difference Jacobians of every field entry at
/// every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJacobianBatch {
    pub model_id: String,
    pub seed: u64,
    pub fd_step: f64,
    samples: Vec<f64>,
    outputs: Vec<f64>,
    jacobians: Vec<f64>,
    count: usize,
    field_len: usize,
    params: usize,
}

impl FieldJacobianBatch {
    /// Builds a batch from explicit per-sample field values and `P x n`
    /// Jacobians.
    pub fn from_parts(
        model_id: impl Into<String>,
        samples: &SampleSet,
        outputs: Vec<Vec<f64>>,
        jacobians: Vec<DMatrix<f64>>,
        fd_step: f64,
    ) -> Result<Self> {
        let count = samples.len();
        if outputs.len() != count || jacobians.len() != count {
            return Err(Error::input("outputs and jacobians must have one entry per sample"));
        }
        let params = samples.dim();
        let field_len = outputs[0].len();
        if outputs.iter().any(|o| o.len() != field_len)
            || jacobians.iter().any(|j| j.shape() != (field_len, params))
        {
            return Err(Error::input("inconsistent field or Jacobian shapes"));
        }
        let mut jac = Vec::with_capacity(count * field_len * params);
        for j in &jacobians {
            for p in 0..field_len {
                for k in 0..params {
                    jac.push(j[(p, k)]);
                }
            }
        }
        let batch = FieldJacobianBatch {
            model_id: model_id.into(),
            seed: samples.seed,
            fd_step,
            samples: samples.as_flat().to_vec(),
            outputs: outputs.concat(),
            jacobians: jac,
            count,
            field_len,
            params,
        };
        batch.check()?;
        Ok(batch)
    }

    fn check(&self) -> Result<()> {
        if !(self.fd_step > 0.0) {
            return Err(Error::input("fd_step must be positive"));
        }
        if self.outputs.iter().chain(&self.jacobians).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in field Jacobian batch".into()));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.count
    }

    pub fn field_len(&self) -> usize {
        self.field_len
    }

    pub fn param_dim(&self) -> usize {
        self.params
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.params..(i + 1) * self.params]
    }

    pub fn samples(&self) -> SampleSet {
        SampleSet {
            points: self.samples.clone(),
            dim: self.params,
            seed: self.seed,
            scheme: SamplingScheme::UniformRandom,
        }
    }

    pub fn output(&self, i: usize, p: usize) -> f64 {
        self.outputs[i * self.field_len + p]
    }

    /// Gradient of field entry `p` at sample `i` (length `n`).
    pub fn gradient(&self, i: usize, p: usize) -> &[f64] {
        let start = (i * self.field_len + p) * self.params;
        &self.jacobians[start..start + self.params]
    }

    /// Full `P x n` Jacobian at sample `i`.
    pub fn field_jacobian(&self, i: usize) -> DMatrix<f64> {
        let start = i * self.field_len * self.params;
        DMatrix::from_row_slice(
            self.field_len,
            self.params,
            &self.jacobians[start..start + self.field_len * self.params],
        )
    }

    /// Writes the self-describing binary cache.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = BatchHeader {
            schema_version: 1,
            model_id: self.model_id.clone(),
            seed: self.seed,
            fd_step: self.fd_step,
            n_samples: self.count,
            field_len: self.field_len,
            n_params: self.params,
        };
        let header = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(BATCH_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in self.samples.iter().chain(&self.outputs).chain(&self.jacobians) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BATCH_MAGIC {
            return Err(Error::input(format!("{} is not a field Jacobian batch", path.display())));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let h: BatchHeader = serde_json::from_slice(&header)?;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let samples = read_vec(h.n_samples * h.n_params)?;
        let outputs = read_vec(h.n_samples * h.field_len)?;
        let jacobians = read_vec(h.n_samples * h.field_len * h.n_params)?;
        let batch = FieldJacobianBatch {
            model_id: h.model_id,
            seed: h.seed,
            fd_step: h.fd_step,
            samples,
            outputs,
            jacobians,
            count: h.n_samples,
            field_len: h.field_len,
            params: h.n_params,
        };
        batch.check()?;
        Ok(batch)
    }
}

const BATCH_MAGIC: &[u8; 8] = b"GOEDFJB\x01";

#[derive(Debug, Serialize, Deserialize)]
struct BatchHeader {
    schema_version: u32,
    model_id: String,
    seed: u64,
    fd_step: f64,
    n_samples: usize,
    field_len: usize,
    n_params: usize,
}

/// Forward differences `(u(l + h e_j) - u(l)) / h`; `n + 1` model
/// evaluations per sample, run in parallel across samples.
pub fn estimate_field_jacobians(
    model: &dyn ForwardModel,
    samples: &SampleSet,
    fd_step: f64,
) -> Result<FieldJacobianBatch> {
    if !(fd_step > 0.0) {
        return Err(Error::input("fd_step must be positive"));
    }
    let n = model.param_dim();
    if samples.dim() != n {
        return Err(Error::input(format!(
            "samples have dimension {} but the model takes {n} parameters",
            samples.dim()
        )));
    }
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let p = samples.point(i);
            let fail = |e: Error, params: &[f64]| Error::Model {
                sample: i,
                params: params.to_vec(),
                reason: e.to_string(),
            };
            let base = model.evaluate(p).map_err(|e| fail(e, p))?;
            let field = base.len();
            let mut jac = vec![0.0; field * n];
            let mut shifted = p.to_vec();
            for j in 0..n {
                shifted[j] = p[j] + fd_step;
                let u = model.evaluate(&shifted).map_err(|e| fail(e, &shifted))?;
                if u.len() != field {
                    return Err(fail(Error::input("field length changed"), &shifted));
                }
                for (q, (a, b)) in u.iter().zip(&base).enumerate() {
                    jac[q * n + j] = (a - b) / fd_step;
                }
                shifted[j] = p[j];
            }
            Ok((base, jac))
        })
        .collect::<Result<_>>()?;

    let field_len = per_sample[0].0.len();
    let mut outputs = Vec::with_capacity(samples.len() * field_len);
    let mut jacobians = Vec::with_capacity(samples.len() * field_len * n);
    for (o, j) in per_sample {
        outputs.extend(o);
        jacobians.extend(j);
    }
    let batch = FieldJacobianBatch {
        model_id: model.id(),
        seed: samples.seed,
        fd_step,
        samples: samples.as_flat().to_vec(),
        outputs,
        jacobians,
        count: samples.len(),
        field_len,
        params: n,
    };
    batch.check()?;
    Ok(batch)
}

/// Per-sample `m x n` Jacobians of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBatch {
    matrices: Vec<JacobianMatrix>,
}

impl JacobianBatch {
    pub fn new(matrices: Vec<JacobianMatrix>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return Err(Error::input("empty Jacobian batch"));
        };
        let shape = (first.outputs(), first.params());
        if matrices.iter().any(|j| (j.outputs(), j.params()) != shape) {
            return Err(Error::input("Jacobians in a batch must share one shape"));
        }
        Ok(JacobianBatch { matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.matrices[0].outputs()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, JacobianMatrix> {
        self.matrices.iter()
    }

    pub fn get(&self, i: usize) -> &JacobianMatrix {
        &self.matrices[i]
    }
}

/// Selects rows `row_indices` of every sample's field Jacobian. Repeated
/// indices are legal and give rank-deficient designs.
pub fn assemble_design_jacobian(batch: &FieldJacobianBatch, row_indices: &[usize]) -> Result<JacobianBatch> {
    if row_indices.is_empty() {
        return Err(Error::input("design needs at least one output index"));
    }
    if let Some(bad) = row_indices.iter().find(|&&p| p >= batch.field_len) {
        return Err(Error::input(format!(
            "output index {bad} out of range for field of length {}",
            batch.field_len
        )));
    }
    let m = row_indices.len();
    let n = batch.params;
    let matrices = (0..batch.count)
        .map(|i| {
            let mut data = Vec::with_capacity(m * n);
            for &p in row_indices {
                data.extend_from_slice(batch.gradient(i, p));
            }
            JacobianMatrix::from_row_slice(m, n, &data)
        })
        .collect::<Result<Vec<_>>>()?;
    JacobianBatch::new(matrices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearMap, QuadraticMap};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<M> {
        inner: M,
        calls: AtomicUsize,
    }

    impl<M: ForwardModel> ForwardModel for Counting<M> {
        fn id(&self) -> String {
            self.inner.id()
        }
        fn param_dim(&self) -> usize {
            self.inner.param_dim()
        }
        fn field_len(&self) -> usize {
            self.inner.field_len()
        }
        fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.evaluate(p)
        }
        fn coordinates(&self) -> &[Vec<f64>] {
            self.inner.coordinates()
        }
    }

    struct Failing;
    impl ForwardModel for Failing {
        fn id(&self) -> String {
            "failing".into()
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn field_len(&self) -> usize {
            1
        }
        fn evaluate(&self, p: &[f64]) -> Result<Vec<f64>> {
            if p[0] > 0.5 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(vec![p[0]])
            }
        }
        fn coordinates(&self) -> &[Vec<f64>] {
            &[]
        }
    }

    #[test]
    fn box_validation() {
        assert!(ParameterBox::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(ParameterBox::new(vec![], vec![]).is_err());
        let b = ParameterBox::cube(2, 0.01, 0.2).unwrap();
        assert!(b.midpoint().iter().all(|m| (m - 0.105).abs() < 1e-15));
    }

    #[test]
    fn draws_are_contained_and_reproducible() {
        let b = ParameterBox::cube(2, 0.0, 1.0).unwrap();
        let s = draw_samples(&b, 4, 7).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|p| b.contains(p)));
        let t = draw_samples(&b, 4, 7).unwrap();
        assert_eq!(s.as_flat(), t.as_flat());
        assert!(draw_samples(&b, 0, 7).is_err());
        assert_ne!(draw_samples(&b, 4, 8).unwrap().as_flat(), s.as_flat());
    }

    #[test]
    fn uniform_mean_is_within_monte_carlo_error() {
        let b = ParameterBox::cube(2, 0.01, 0.2).unwrap();
        let s = draw_samples(&b, 10_000, 11).unwrap();
        // sd of a uniform on [a, b] is (b - a) / sqrt(12)
        let se = 0.19 / 12f64.sqrt() / 100.0;
        for j in 0..2 {
            let mean = s.iter().map(|p| p[j]).sum::<f64>() / s.len() as f64;
            assert!((mean - 0.105).abs() < 3.0 * se, "axis {j}: {mean}");
        }
    }

    #[test]
    fn grid_covers_corners() {
        let b = ParameterBox::cube(2, 0.0, 1.0).unwrap();
        let g = tensor_grid(&b, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g.point(0), &[0.0, 0.0]);
        assert_eq!(g.point(8), &[1.0, 1.0]);
        assert_eq!(g.point(4), &[0.5, 0.5]);
    }

    #[test]
    fn linear_map_jacobian_is_exact() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.25, 3.0, 0.0]);
        let model = LinearMap::new(a.clone()).unwrap();
        let b = ParameterBox::cube(2, -1.0, 1.0).unwrap();
        let s = draw_samples(&b, 5, 1).unwrap();
        let batch = estimate_field_jacobians(&model, &s, 1e-5).unwrap();
        for i in 0..5 {
            let j = batch.field_jacobian(i);
            assert!((j - &a).abs().max() < 1e-9);
        }
    }

    #[test]
    fn quadratic_map_matches_analytic_jacobian() {
        let s = SampleSet::from_points(vec![vec![1.0, 1.0]], 0, SamplingScheme::TensorGrid).unwrap();
        let batch = estimate_field_jacobians(&QuadraticMap::default(), &s, 1e-5).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert!((batch.field_jacobian(0) - want).abs().max() < 1e-4);
    }

    #[test]
    fn counts_n_plus_one_evaluations_per_sample() {
        let model = Counting {
            inner: LinearMap::new(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])).unwrap(),
            calls: AtomicUsize::new(0),
        };
        let b = ParameterBox::cube(3, 0.0, 1.0).unwrap();
        let s = draw_samples(&b, 6, 3).unwrap();
        estimate_field_jacobians(&model, &s, 1e-5).unwrap();
        assert_eq!(model.calls.load(Ordering::SeqCst), 6 * 4);
    }

    #[test]
    fn model_failure_reports_sample() {
        let s = SampleSet::from_points(vec![vec![0.1], vec![0.9]], 0, SamplingScheme::TensorGrid).unwrap();
        match estimate_field_jacobians(&Failing, &s, 1e-5) {
            Err(Error::Model { sample, params, .. }) => {
                assert_eq!(sample, 1);
                assert_eq!(params, vec![0.9]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_selection_and_duplicates() {
        let a = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let model = LinearMap::new(a).unwrap();
        let s = draw_samples(&ParameterBox::cube(2, 0.0, 1.0).unwrap(), 3, 5).unwrap();
        let batch = estimate_field_jacobians(&model, &s, 1e-5).unwrap();
        let one = assemble_design_jacobian(&batch, &[2]).unwrap();
        for (i, j) in one.iter().enumerate() {
            assert_eq!(j.as_matrix().row(0).iter().copied().collect::<Vec<_>>(), batch.gradient(i, 2));
        }
        let dup = assemble_design_jacobian(&batch, &[1, 1]).unwrap();
        for j in dup.iter() {
            let c = crate::geometry::local_skewness_svd(j, crate::geometry::DEFAULT_RANK_TOL).unwrap();
            assert!(c.skewness.is_infinite());
        }
        assert!(assemble_design_jacobian(&batch, &[3]).is_err());
    }

    #[test]
    fn batch_cache_round_trip() {
        let s = draw_samples(&ParameterBox::cube(2, 0.5, 1.5).unwrap(), 4, 9).unwrap();
        let batch = estimate_field_jacobians(&QuadraticMap::default(), &s, 1e-5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        batch.save(&path).unwrap();
        assert_eq!(FieldJacobianBatch::load(&path).unwrap(), batch);
    }
}
