//! Transient heat equation on welded rods and plates.
//!
//! Solves `rho c u_t = div(kappa grad u) + S` on the unit interval or unit
//! square with insulated boundaries and zero initial temperature, using
//! linear (1D) or bilinear (2D) finite elements on a uniform mesh and the
//! implicit midpoint rule
//!
//! ```text
//! (M + dt/2 K) u^{n+1} = (M - dt/2 K) u^n + dt b
//! ```
//!
//! The conductivity is constant per element and takes the value of the
//! region (rod half or plate) that contains the element centroid. The
//! observable field is the nodal temperature at the final time.

use log::warn;
use serde::{Deserialize, Serialize};

use super::banded::BandedSpd;
use super::ForwardModel;
use crate::error::{Error, Result};
use crate::sampling::ParameterBox;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HeatModelConfig {
    /// Spatial dimension, 1 (rod) or 2 (plate).
    pub dimension: usize,
    pub elements_per_axis: usize,
    pub time_steps: usize,
    pub t_final: f64,
    pub rho: f64,
    pub heat_capacity: f64,
    pub source_amplitude: f64,
    /// `w` in `S = A exp(-|x - 0.5|^2 / w)`.
    pub source_width: f64,
    /// Conductivity regions per axis (2 halves for the rod, 3x3 plates).
    pub regions_per_axis: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
}

impl HeatModelConfig {
    /// 40-element welded rod, 20 steps to `t = 1`.
    pub fn rod() -> Self {
        HeatModelConfig {
            dimension: 1,
            elements_per_axis: 40,
            time_steps: 20,
            t_final: 1.0,
            rho: 1.5,
            heat_capacity: 1.5,
            source_amplitude: 50.0,
            source_width: 0.05,
            regions_per_axis: 2,
            kappa_min: 0.01,
            kappa_max: 0.2,
        }
    }

    /// Nine-plate square on a 30x30 mesh, 40 steps to `t = 2`.
    pub fn plate() -> Self {
        HeatModelConfig {
            dimension: 2,
            elements_per_axis: 30,
            time_steps: 40,
            t_final: 2.0,
            regions_per_axis: 3,
            ..Self::rod()
        }
    }

    /// The plate on the finer 100x100 mesh.
    pub fn plate_paper_scale() -> Self {
        HeatModelConfig {
            elements_per_axis: 100,
            ..Self::plate()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("model.{field}"), msg));
        if self.dimension != 1 && self.dimension != 2 {
            return bad("dimension", "must be 1 or 2");
        }
        if self.elements_per_axis < 2 {
            return bad("elements_per_axis", "must be at least 2");
        }
        if self.time_steps < 1 {
            return bad("time_steps", "must be at least 1");
        }
        if !(self.t_final > 0.0) {
            return bad("t_final", "must be positive");
        }
        if !(self.rho > 0.0) {
            return bad("rho", "must be positive");
        }
        if !(self.heat_capacity > 0.0) {
            return bad("heat_capacity", "must be positive");
        }
        if !(self.source_width > 0.0) {
            return bad("source_width", "must be positive");
        }
        if self.regions_per_axis < 1 || self.regions_per_axis > self.elements_per_axis {
            return bad("regions_per_axis", "must be between 1 and elements_per_axis");
        }
        if !(self.kappa_min > 0.0 && self.kappa_max > self.kappa_min) {
            return bad("kappa_min", "need 0 < kappa_min < kappa_max");
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        self.regions_per_axis.pow(self.dimension as u32)
    }
}

/// Assembled mesh data for one [`HeatModelConfig`]; immutable and shareable.
#[derive(Debug, Clone)]
pub struct HeatModel {
    config: HeatModelConfig,
    coords: Vec<Vec<f64>>,
    elements: Vec<Vec<usize>>,
    element_region: Vec<usize>,
    /// Element mass matrix for unit `rho c`.
    mass_ref: Vec<f64>,
    /// Element stiffness matrix for unit conductivity.
    stiff_ref: Vec<f64>,
    load: Vec<f64>,
    bandwidth: usize,
}

fn gauss3() -> [(f64, f64); 3] {
    let a = (0.6f64).sqrt();
    [(-a, 5.0 / 9.0), (0.0, 8.0 / 9.0), (a, 5.0 / 9.0)]
}

impl HeatModel {
    pub fn new(config: HeatModelConfig) -> Result<Self> {
        config.validate()?;
        if !config.elements_per_axis.is_multiple_of(config.regions_per_axis) {
            warn!(
                "{} elements per axis do not align with {} conductivity regions; \
                 elements are assigned by centroid",
                config.elements_per_axis, config.regions_per_axis
            );
        }
        Ok(match config.dimension {
            1 => Self::build_1d(config),
            _ => Self::build_2d(config),
        })
    }

    fn source(&self, p: &[f64]) -> f64 {
        source_at(&self.config, p)
    }

    fn region_of(config: &HeatModelConfig, centroid: f64) -> usize {
        ((centroid * config.regions_per_axis as f64).floor() as usize).min(config.regions_per_axis - 1)
    }

    fn build_1d(config: HeatModelConfig) -> Self {
        let ne = config.elements_per_axis;
        let h = 1.0 / ne as f64;
        let coords: Vec<Vec<f64>> = (0..=ne).map(|i| vec![i as f64 * h]).collect();
        let elements: Vec<Vec<usize>> = (0..ne).map(|e| vec![e, e + 1]).collect();
        let element_region = (0..ne)
            .map(|e| Self::region_of(&config, (e as f64 + 0.5) * h))
            .collect();
        let mass_ref = vec![h / 3.0, h / 6.0, h / 6.0, h / 3.0];
        let stiff_ref = vec![1.0 / h, -1.0 / h, -1.0 / h, 1.0 / h];
        let mut load = vec![0.0; ne + 1];
        for e in 0..ne {
            for (xi, w) in gauss3() {
                let t = 0.5 * (xi + 1.0);
                let x = (e as f64 + t) * h;
                let s = source_at(&config, &[x]) * w * 0.5 * h;
                load[e] += s * (1.0 - t);
                load[e + 1] += s * t;
            }
        }
        HeatModel {
            config,
            coords,
            elements,
            element_region,
            mass_ref,
            stiff_ref,
            load,
            bandwidth: 1,
        }
    }

    fn build_2d(config: HeatModelConfig) -> Self {
        let ne = config.elements_per_axis;
        let nn = ne + 1;
        let h = 1.0 / ne as f64;
        let coords: Vec<Vec<f64>> = (0..nn * nn)
            .map(|k| vec![(k % nn) as f64 * h, (k / nn) as f64 * h])
            .collect();
        let mut elements = Vec::with_capacity(ne * ne);
        let mut element_region = Vec::with_capacity(ne * ne);
        for ey in 0..ne {
            for ex in 0..ne {
                let n0 = ey * nn + ex;
                elements.push(vec![n0, n0 + 1, n0 + nn + 1, n0 + nn]);
                let rx = Self::region_of(&config, (ex as f64 + 0.5) * h);
                let ry = Self::region_of(&config, (ey as f64 + 0.5) * h);
                element_region.push(ry * config.regions_per_axis + rx);
            }
        }

        // bilinear shape functions on [-1,1]^2, counter-clockwise from (-1,-1)
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let shape = |a: f64, b: f64| corners.map(|(ca, cb)| 0.25 * (1.0 + ca * a) * (1.0 + cb * b));
        let grad = |a: f64, b: f64| {
            corners.map(|(ca, cb)| {
                [
                    0.25 * ca * (1.0 + cb * b) * 2.0 / h,
                    0.25 * cb * (1.0 + ca * a) * 2.0 / h,
                ]
            })
        };
        let jac = 0.25 * h * h;
        let mut mass_ref = vec![0.0; 16];
        let mut stiff_ref = vec![0.0; 16];
        let g = 1.0 / 3f64.sqrt();
        for a in [-g, g] {
            for b in [-g, g] {
                let n = shape(a, b);
                let d = grad(a, b);
                for i in 0..4 {
                    for j in 0..4 {
                        mass_ref[i * 4 + j] += jac * n[i] * n[j];
                        stiff_ref[i * 4 + j] += jac * (d[i][0] * d[j][0] + d[i][1] * d[j][1]);
                    }
                }
            }
        }

        let mut load = vec![0.0; nn * nn];
        for (e, nodes) in elements.iter().enumerate() {
            let (ex, ey) = (e % ne, e / ne);
            for (a, wa) in gauss3() {
                for (b, wb) in gauss3() {
                    let x = (ex as f64 + 0.5 * (a + 1.0)) * h;
                    let y = (ey as f64 + 0.5 * (b + 1.0)) * h;
                    let s = source_at(&config, &[x, y]) * wa * wb * jac;
                    let n = shape(a, b);
                    for i in 0..4 {
                        load[nodes[i]] += s * n[i];
                    }
                }
            }
        }

        HeatModel {
            config,
            coords,
            elements,
            element_region,
            mass_ref,
            stiff_ref,
            load,
            bandwidth: nn + 1,
        }
    }

    pub fn config(&self) -> &HeatModelConfig {
        &self.config
    }

    /// Nodes per element side plus one.
    pub fn nodes_per_axis(&self) -> usize {
        self.config.elements_per_axis + 1
    }

    /// Conductivity region containing node `index` (ties at region
    /// boundaries go to the upper region).
    pub fn node_region(&self, index: usize) -> usize {
        let ne = self.config.elements_per_axis;
        let r = self.config.regions_per_axis;
        let axis = |i: usize| (i * r / ne).min(r - 1);
        match self.config.dimension {
            1 => axis(index),
            _ => {
                let nn = ne + 1;
                axis(index / nn) * r + axis(index % nn)
            }
        }
    }

    /// Consistent load vector `b_i = int S phi_i`.
    pub fn load(&self) -> &[f64] {
        &self.load
    }

    /// `M u` with `rho c` included.
    pub fn apply_mass(&self, u: &[f64]) -> Vec<f64> {
        let mut m = BandedSpd::zeros(self.coords.len(), self.bandwidth);
        self.assemble(&mut m, self.config.rho * self.config.heat_capacity, None, 0.0);
        let mut out = vec![0.0; u.len()];
        m.mul_vec(u, &mut out);
        out
    }

    fn assemble(&self, target: &mut BandedSpd, mass_scale: f64, kappa: Option<&[f64]>, stiff_scale: f64) {
        let k = self.elements[0].len();
        for (e, nodes) in self.elements.iter().enumerate() {
            let ke = kappa.map_or(0.0, |kap| kap[self.element_region[e]] * stiff_scale);
            for i in 0..k {
                for j in 0..=i {
                    // storage is symmetric, so each off-diagonal pair is added once
                    let v = mass_scale * self.mass_ref[i * k + j] + ke * self.stiff_ref[i * k + j];
                    target.add(nodes[i], nodes[j], v);
                }
            }
        }
    }

    /// Temperature field at the final time for the given region
    /// conductivities.
    pub fn solve(&self, kappa: &[f64]) -> Result<Vec<f64>> {
        if kappa.len() != self.config.param_dim() {
            return Err(Error::input(format!(
                "expected {} conductivities, got {}",
                self.config.param_dim(),
                kappa.len()
            )));
        }
        if let Some(bad) = kappa.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::input(format!("conductivity must be positive, got {bad}")));
        }
        let n = self.coords.len();
        let dt = self.config.t_final / self.config.time_steps as f64;
        let rc = self.config.rho * self.config.heat_capacity;

        let mut lhs = BandedSpd::zeros(n, self.bandwidth);
        self.assemble(&mut lhs, rc, Some(kappa), 0.5 * dt);
        let mut rhs_op = BandedSpd::zeros(n, self.bandwidth);
        self.assemble(&mut rhs_op, rc, Some(kappa), -0.5 * dt);
        lhs.factor()?;

        let mut u = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for _ in 0..self.config.time_steps {
            rhs_op.mul_vec(&u, &mut rhs);
            for (r, b) in rhs.iter_mut().zip(&self.load) {
                *r += dt * b;
            }
            lhs.solve_in_place(&mut rhs);
            std::mem::swap(&mut u, &mut rhs);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite temperature".into()));
        }
        Ok(u)
    }

    /// Source term sampled at the nodes (for snapshots).
    pub fn nodal_source(&self) -> Vec<f64> {
        self.coords.iter().map(|c| self.source(c)).collect()
    }
}

fn source_at(config: &HeatModelConfig, p: &[f64]) -> f64 {
    let r2: f64 = p.iter().map(|x| (0.5 - x).powi(2)).sum();
    config.source_amplitude * (-r2 / config.source_width).exp()
}

impl ForwardModel for HeatModel {
    fn id(&self) -> String {
        let c = &self.config;
        let kind = if c.dimension == 1 { "rod" } else { "plate" };
        format!(
            "heat-{kind}-e{}-s{}-t{}",
            c.elements_per_axis, c.time_steps, c.t_final
        )
    }

    fn param_dim(&self) -> usize {
        self.config.param_dim()
    }

    fn field_len(&self) -> usize {
        self.coords.len()
    }

    fn evaluate(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.solve(params)
    }

    fn coordinates(&self) -> &[Vec<f64>] {
        &self.coords
    }

    fn parameter_box(&self) -> Option<ParameterBox> {
        let n = self.param_dim();
        ParameterBox::new(vec![self.config.kappa_min; n], vec![self.config.kappa_max; n]).ok()
    }
}
