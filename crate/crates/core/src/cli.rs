//! Batch front end: JSON run configs, the `sweep`/`oed`/`greedy`/`dci`/`diag`
//! subcommands, and per-run manifests.
//!
//! Every path inside a config is resolved against the directory holding the
//! config file. Each run writes `manifest.json` next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criteria::{write_reports_csv, HmMeasure};
use crate::dci::{dci_from_fields, moments, updated_density_grid, BandwidthRule, DensitySpec, EnsembleSummary};
use crate::design::{
    design_id, evaluate_space_weighted, exhaustive_oed_weighted, greedy_oed_weighted, local_maxima, DesignSpace,
    GridField, Utility,
};
use crate::error::{Error, Result};
use crate::geometry::{local_skewness_svd, DEFAULT_RANK_TOL};
use crate::models::{
    catalog_matrix, nearest_index, ForwardModel, HeatModel, HeatModelConfig, LinearMap, QuadraticMap,
    RotatedLinearMap,
};
use crate::sampling::{
    assemble_design_jacobian, draw_samples, estimate_field_jacobians, evaluate_fields, FieldJacobianBatch,
    ParameterBox, SampleSet,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest design space an exhaustive search will enumerate.
const MAX_CANDIDATES: usize = 5_000_000;

#[derive(Debug, Parser)]
#[command(name = "geomoed", version, about = "Geometric optimal experimental design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expected criteria of every candidate design.
    Sweep(RunArgs),
    /// Exhaustive search: ranked designs and local maxima.
    Oed(RunArgs),
    /// Greedy sequential sensor placement.
    Greedy(RunArgs),
    /// Data-consistent inversion for the configured designs.
    Dci(RunArgs),
    /// Local-criterion statistics and field snapshots.
    Diag(RunArgs),
}

impl Command {
    pub fn task(&self) -> Task {
        match self {
            Command::Sweep(_) => Task::CriteriaSweep,
            Command::Oed(_) => Task::ExhaustiveOed,
            Command::Greedy(_) => Task::GreedyOed,
            Command::Dci(_) => Task::DciSolve,
            Command::Diag(_) => Task::Diagnostics,
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Sweep(a) | Command::Oed(a) | Command::Greedy(a) | Command::Dci(a) | Command::Diag(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sampling seed; overrides `sampling.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Full-size runs: 100x100 plate mesh and larger sample counts.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    CriteriaSweep,
    ExhaustiveOed,
    GreedyOed,
    DciSolve,
    Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub task: Option<Task>,
    pub model: ModelBlock,
    #[serde(default)]
    pub sampling: SamplingBlock,
    #[serde(default)]
    pub design: DesignBlock,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub greedy: GreedyBlock,
    #[serde(default)]
    pub dci: DciBlock,
    #[serde(default)]
    pub diagnostics: DiagBlock,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Exactly one of `preset`, `heat`, `synthetic`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat: Option<HeatModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Rod,
    Plate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticName {
    Linear,
    Identity,
    Quadratic,
    Rotated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticBlock {
    pub name: SyntheticName,
    /// Dimension of `identity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Rotation angle of `rotated`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Rows of the matrix for `linear` and `rotated`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDensity {
    Uniform,
    Gaussian { mean: Vec<f64>, variance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub measure: HmMeasure,
    #[serde(default = "default_initial")]
    pub initial: InitialDensity,
    /// Parameter box; defaults to the model's admissible box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    /// Binary Jacobian cache, reused when its header matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

fn default_count() -> usize {
    1000
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_initial() -> InitialDensity {
    InitialDensity::Uniform
}

impl Default for SamplingBlock {
    fn default() -> Self {
        SamplingBlock {
            count: default_count(),
            seed: 0,
            fd_step: default_fd_step(),
            measure: HmMeasure::Volume,
            initial: default_initial(),
            lower: None,
            upper: None,
            cache: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    All,
    Indices(Vec<usize>),
    Points(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBlock {
    #[serde(default = "one")]
    pub arity: usize,
    #[serde(default = "default_candidates")]
    pub candidates: CandidateSource,
    /// Treat designs as unordered sets of sensors.
    #[serde(default = "yes")]
    pub symmetric: bool,
    #[serde(default = "default_utility")]
    pub utility: Utility,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_candidates() -> CandidateSource {
    CandidateSource::All
}

fn default_utility() -> Utility {
    Utility::EskInverse
}

impl Default for DesignBlock {
    fn default() -> Self {
        DesignBlock {
            arity: 1,
            candidates: CandidateSource::All,
            symmetric: true,
            utility: default_utility(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_greedy_tol")]
    pub greedy_tol: f64,
}

fn default_rank_tol() -> f64 {
    DEFAULT_RANK_TOL
}

fn default_greedy_tol() -> f64 {
    1e-3
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_tol: DEFAULT_RANK_TOL,
            greedy_tol: default_greedy_tol(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyBlock {
    /// Defaults to the parameter dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_target: Option<usize>,
}

/// A design given by field indices or by sensor coordinates (snapped to the
/// nearest field value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignRef {
    Indices(Vec<usize>),
    Points(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservedBlock {
    /// Defaults to the design's QoI at the midpoint of the parameter box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default = "default_obs_variance")]
    pub variance: f64,
}

fn default_obs_variance() -> f64 {
    0.15
}

impl Default for ObservedBlock {
    fn default() -> Self {
        ObservedBlock {
            mean: None,
            variance: default_obs_variance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DciBlock {
    #[serde(default)]
    pub designs: Vec<DesignRef>,
    #[serde(default)]
    pub observed: ObservedBlock,
    /// Defaults to `sampling.count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Defaults to `sampling.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub bandwidth: BandwidthRule,
    /// Points per axis of the updated-density grid; 0 disables it.
    #[serde(default = "default_grid")]
    pub grid_per_axis: usize,
    /// Modes below this fraction of the global maximum are not reported.
    #[serde(default = "default_mode_fraction")]
    pub mode_fraction: f64,
}

fn default_grid() -> usize {
    60
}

fn default_mode_fraction() -> f64 {
    0.5
}

impl Default for DciBlock {
    fn default() -> Self {
        DciBlock {
            designs: Vec::new(),
            observed: ObservedBlock::default(),
            samples: None,
            seed: None,
            bandwidth: BandwidthRule::Silverman,
            grid_per_axis: default_grid(),
            mode_fraction: default_mode_fraction(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagBlock {
    #[serde(default)]
    pub designs: Vec<DesignRef>,
    /// Parameter points whose fields are written out; defaults to the
    /// midpoint of the parameter box.
    #[serde(default)]
    pub snapshots: Vec<Vec<f64>>,
}

/// Parses a config, reporting the JSON path of any offending field.
pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { origin.to_string() } else { path };
        Error::config(path, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<(RunConfig, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    Ok((parse_config(text, &path.display().to_string())?, bytes))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::config(path, msg));
        let m = &self.model;
        let set = m.preset.is_some() as u8 + m.heat.is_some() as u8 + m.synthetic.is_some() as u8;
        if set != 1 {
            return bad("model", "set exactly one of `preset`, `heat`, `synthetic`");
        }
        if let Some(h) = &m.heat {
            h.validate().map_err(|e| match e {
                Error::Config { path, message } => {
                    Error::config(path.replacen("model.", "model.heat.", 1), message)
                }
                other => other,
            })?;
        }
        if let Some(s) = &m.synthetic {
            if s.dim == Some(0) {
                return bad("model.synthetic.dim", "must be at least 1");
            }
            if s.theta.is_some_and(|t| !t.is_finite()) {
                return bad("model.synthetic.theta", "must be finite");
            }
        }
        let s = &self.sampling;
        if s.count == 0 {
            return bad("sampling.count", "must be at least 1");
        }
        if !(s.fd_step > 0.0 && s.fd_step < 1.0) {
            return bad("sampling.fd_step", "must lie in (0, 1)");
        }
        if s.lower.is_some() != s.upper.is_some() {
            return bad("sampling.lower", "`lower` and `upper` must be given together");
        }
        if let InitialDensity::Gaussian { variance, .. } = &s.initial {
            if !(*variance > 0.0) {
                return bad("sampling.initial.gaussian.variance", "must be positive");
            }
        }
        if self.design.arity == 0 {
            return bad("design.arity", "must be at least 1");
        }
        let t = &self.tolerances;
        if !(t.rank_tol > 0.0 && t.rank_tol < 1.0) {
            return bad("tolerances.rank_tol", "must lie in (0, 1)");
        }
        if !(t.greedy_tol > 0.0) {
            return bad("tolerances.greedy_tol", "must be positive");
        }
        if self.greedy.m_target == Some(0) {
            return bad("greedy.m_target", "must be at least 1");
        }
        let d = &self.dci;
        if d.samples.is_some_and(|n| n < 2) {
            return bad("dci.samples", "must be at least 2");
        }
        if !(d.observed.variance > 0.0) {
            return bad("dci.observed.variance", "must be positive");
        }
        if d.grid_per_axis == 1 {
            return bad("dci.grid_per_axis", "must be 0 (off) or at least 2");
        }
        if !(d.mode_fraction > 0.0 && d.mode_fraction <= 1.0) {
            return bad("dci.mode_fraction", "must lie in (0, 1]");
        }
        for (i, design) in d.designs.iter().chain(&self.diagnostics.designs).enumerate() {
            let empty = match design {
                DesignRef::Indices(v) => v.is_empty(),
                DesignRef::Points(v) => v.is_empty(),
            };
            if empty {
                return bad(&format!("designs[{i}]"), "design must not be empty");
            }
        }
        Ok(())
    }

    /// Applies `--paper-scale`: the plate goes to a 100x100 mesh with 1000
    /// samples, the rod to 10^4 samples.
    pub fn apply_paper_scale(&mut self) {
        let heat = match (&self.model.preset, &mut self.model.heat) {
            (Some(Preset::Rod), _) => Some(1),
            (Some(Preset::Plate), _) => Some(2),
            (None, Some(h)) => {
                if h.dimension == 2 {
                    h.elements_per_axis = 100;
                }
                Some(h.dimension)
            }
            _ => None,
        };
        match heat {
            Some(1) => self.sampling.count = 10_000,
            Some(2) => self.sampling.count = 1000,
            _ => warn!("--paper-scale has no effect on synthetic models"),
        }
    }
}

/// Builds the forward model described by a model block.
pub fn build_model(block: &ModelBlock, paper_scale: bool) -> Result<Box<dyn ForwardModel>> {
    if let Some(p) = block.preset {
        let cfg = match (p, paper_scale) {
            (Preset::Rod, _) => HeatModelConfig::rod(),
            (Preset::Plate, false) => HeatModelConfig::plate(),
            (Preset::Plate, true) => HeatModelConfig::plate_paper_scale(),
        };
        return Ok(Box::new(HeatModel::new(cfg)?));
    }
    if let Some(h) = &block.heat {
        return Ok(Box::new(HeatModel::new(h.clone())?));
    }
    let s = block
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::config("model", "no model given"))?;
    let matrix = || -> Result<DMatrix<f64>> {
        match &s.matrix {
            None => Ok(catalog_matrix()),
            Some(rows) => Ok(LinearMap::from_rows(rows)
                .map_err(|e| Error::config("model.synthetic.matrix", e.to_string()))?
                .matrix()
                .clone()),
        }
    };
    let model: Box<dyn ForwardModel> = match s.name {
        SyntheticName::Linear => Box::new(LinearMap::new(matrix()?)?),
        SyntheticName::Identity => Box::new(LinearMap::identity(s.dim.unwrap_or(2))),
        SyntheticName::Quadratic => Box::new(QuadraticMap::default()),
        SyntheticName::Rotated => Box::new(
            RotatedLinearMap::new(matrix()?, s.theta.unwrap_or(0.7))
                .map_err(|e| Error::config("model.synthetic", e.to_string()))?,
        ),
    };
    Ok(model)
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// numerical failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Input(_) | Error::Json(_) => 2,
        Error::Numerical(_) | Error::Model { .. } | Error::DegenerateDensity { .. } => 3,
        Error::Io(_) | Error::Csv(_) => 1,
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub task: Task,
    pub config_path: PathBuf,
    /// `sha256("blob <len>\0" + bytes)` of the config file.
    pub config_hash: String,
    pub config: RunConfig,
    pub model_id: String,
    pub sampling_seed: u64,
    pub dci_seed: u64,
    pub workers: usize,
    pub paper_scale: bool,
    pub outputs: Vec<String>,
}

/// Git-style content hash of a blob.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A prepared run: validated config, model, and resolved paths.
pub struct Run {
    pub task: Task,
    pub config: RunConfig,
    pub config_path: PathBuf,
    pub config_bytes: Vec<u8>,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub model: Box<dyn ForwardModel>,
    pub bx: ParameterBox,
    pub paper_scale: bool,
    outputs: Vec<String>,
}

impl Run {
    pub fn prepare(task: Task, args: &RunArgs) -> Result<Run> {
        let (mut config, config_bytes) = load_config(&args.config)?;
        if let Some(t) = config.task {
            if t != task {
                return Err(Error::config(
                    "task",
                    format!("config is for {t:?} but the {task:?} subcommand was run"),
                ));
            }
        }
        config.task = Some(task);
        if let Some(seed) = args.seed {
            config.sampling.seed = seed;
        }
        if args.paper_scale {
            config.apply_paper_scale();
        }
        let base_dir = args
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let out_dir = match &args.out {
            Some(o) => o.clone(),
            None => base_dir.join(&config.output_dir),
        };
        if let Some(cache) = &config.sampling.cache {
            let parent = base_dir.join(cache).parent().map(Path::to_path_buf).unwrap_or_default();
            if !parent.as_os_str().is_empty() && !parent.is_dir() {
                return Err(Error::config("sampling.cache", format!("directory {} does not exist", parent.display())));
            }
        }
        let model = build_model(&config.model, args.paper_scale)?;
        let bx = match (&config.sampling.lower, &config.sampling.upper) {
            (Some(l), Some(u)) => {
                if l.len() != model.param_dim() {
                    return Err(Error::config(
                        "sampling.lower",
                        format!("model has {} parameters", model.param_dim()),
                    ));
                }
                ParameterBox::new(l.clone(), u.clone()).map_err(|e| Error::config("sampling.lower", e.to_string()))?
            }
            _ => model.parameter_box().ok_or_else(|| {
                Error::config("sampling.lower", "this model has no default parameter box; give lower and upper")
            })?,
        };
        if let InitialDensity::Gaussian { mean, .. } = &config.sampling.initial {
            if mean.len() != model.param_dim() {
                return Err(Error::config(
                    "sampling.initial.gaussian.mean",
                    format!("model has {} parameters", model.param_dim()),
                ));
            }
        }
        fs::create_dir_all(&out_dir)?;
        Ok(Run {
            task,
            config,
            config_path: args.config.clone(),
            config_bytes,
            base_dir,
            out_dir,
            model,
            bx,
            paper_scale: args.paper_scale,
            outputs: Vec::new(),
        })
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    pub fn initial_density(&self) -> Result<DensitySpec> {
        match &self.config.sampling.initial {
            InitialDensity::Uniform => Ok(DensitySpec::UniformBox(self.bx.clone())),
            InitialDensity::Gaussian { mean, variance } => DensitySpec::isotropic(mean.clone(), *variance),
        }
    }

    /// Jacobians of the full field at uniform samples over the box, read
    /// from the cache when it matches.
    pub fn field_batch(&self) -> Result<FieldJacobianBatch> {
        let s = &self.config.sampling;
        let cache = s.cache.as_ref().map(|c| self.base_dir.join(c));
        if let Some(path) = &cache {
            if path.exists() {
                let b = FieldJacobianBatch::load(path)?;
                if b.model_id == self.model.id()
                    && b.seed == s.seed
                    && b.fd_step == s.fd_step
                    && b.sample_count() == s.count
                {
                    info!("reusing Jacobian cache {}", path.display());
                    return Ok(b);
                }
                warn!("cache {} does not match this run; recomputing", path.display());
            }
        }
        let samples = draw_samples(&self.bx, s.count, s.seed)?;
        info!(
            "estimating Jacobians of {} at {} samples ({} model evaluations)",
            self.model.id(),
            s.count,
            s.count * (self.model.param_dim() + 1)
        );
        let batch = estimate_field_jacobians(self.model.as_ref(), &samples, s.fd_step)?;
        if let Some(path) = &cache {
            batch.save(path)?;
        }
        Ok(batch)
    }

    /// Per-sample weights for the initial measure, or `None` for volume.
    pub fn measure_weights(&self, batch: &FieldJacobianBatch) -> Result<Option<Vec<f64>>> {
        if self.config.sampling.measure == HmMeasure::Volume {
            return Ok(None);
        }
        let init = self.initial_density()?;
        let w: Vec<f64> = (0..batch.sample_count()).map(|i| init.pdf(batch.sample(i))).collect();
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::config("sampling.initial", "initial density vanishes at every sample"));
        }
        Ok(Some(w))
    }

    /// Single-sensor pool from `design.candidates`.
    pub fn pool(&self) -> Result<Vec<usize>> {
        let len = self.model.field_len();
        let mut pool: Vec<usize> = match &self.config.design.candidates {
            CandidateSource::All => (0..len).collect(),
            CandidateSource::Indices(v) => {
                if let Some(bad) = v.iter().find(|&&p| p >= len) {
                    return Err(Error::config(
                        "design.candidates.indices",
                        format!("index {bad} outside field of length {len}"),
                    ));
                }
                v.clone()
            }
            CandidateSource::Points(pts) => pts
                .iter()
                .map(|p| self.snap(p, "design.candidates.points"))
                .collect::<Result<_>>()?,
        };
        let mut seen = std::collections::HashSet::new();
        pool.retain(|p| seen.insert(*p));
        if pool.is_empty() {
            return Err(Error::config("design.candidates", "no candidates"));
        }
        Ok(pool)
    }

    fn snap(&self, point: &[f64], path: &str) -> Result<usize> {
        let dim = self.model.coordinates().first().map_or(0, Vec::len);
        if point.len() != dim {
            return Err(Error::config(path, format!("points must have {dim} coordinates")));
        }
        nearest_index(self.model.as_ref(), point).ok_or_else(|| Error::config(path, "model has no field values"))
    }

    pub fn resolve(&self, design: &DesignRef, path: &str) -> Result<Vec<usize>> {
        match design {
            DesignRef::Indices(v) => {
                let len = self.model.field_len();
                if let Some(bad) = v.iter().find(|&&p| p >= len) {
                    return Err(Error::config(path, format!("index {bad} outside field of length {len}")));
                }
                Ok(v.clone())
            }
            DesignRef::Points(pts) => pts.iter().map(|p| self.snap(p, path)).collect(),
        }
    }

    /// All candidate designs of `design.arity` drawn from the pool.
    pub fn design_space(&self) -> Result<DesignSpace> {
        let pool = self.pool()?;
        let k = self.config.design.arity;
        let symmetric = self.config.design.symmetric;
        let size = count_designs(pool.len(), k, symmetric);
        if size > MAX_CANDIDATES as f64 {
            return Err(Error::config(
                "design.arity",
                format!("{size:.3e} candidate designs exceed the limit of {MAX_CANDIDATES}"),
            ));
        }
        let mut out = Vec::with_capacity(size as usize);
        enumerate_designs(&pool, k, symmetric, &mut Vec::new(), &mut out);
        if out.is_empty() {
            return Err(Error::config("design.arity", "pool has fewer sensors than the design arity"));
        }
        Ok(DesignSpace::new(out)?.with_coordinates(self.model.as_ref()))
    }

    /// Field layout as a grid, when the pool is the full field of a 1D or
    /// square 2D mesh.
    fn field_grid_dims(&self) -> Option<Vec<usize>> {
        if self.config.design.candidates != CandidateSource::All {
            return None;
        }
        let p = self.model.field_len();
        match self.model.coordinates().first().map(Vec::len) {
            Some(1) => Some(vec![p]),
            Some(2) => {
                let r = (p as f64).sqrt().round() as usize;
                (r * r == p).then(|| vec![r, r])
            }
            _ => None,
        }
    }

    fn write_manifest(&mut self) -> Result<Manifest> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            task: self.task,
            config_path: self.config_path.clone(),
            config_hash: content_hash(&self.config_bytes),
            config: self.config.clone(),
            model_id: self.model.id(),
            sampling_seed: self.config.sampling.seed,
            dci_seed: self.config.dci.seed.unwrap_or(self.config.sampling.seed),
            workers: rayon::current_num_threads(),
            paper_scale: self.paper_scale,
            outputs: self.outputs.clone(),
        };
        write_json(&self.out_dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

fn count_designs(pool: usize, k: usize, symmetric: bool) -> f64 {
    if k > pool {
        return 0.0;
    }
    let mut c = 1.0;
    for i in 0..k {
        c *= (pool - i) as f64;
        if symmetric {
            c /= (i + 1) as f64;
        }
    }
    c
}

/// Symmetric designs list sensors in decreasing pool position, so for the
/// full field and `k = 2` the pairs are `(p, q)` with `p > q`.
fn enumerate_designs(pool: &[usize], k: usize, symmetric: bool, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == k {
        out.push(prefix.iter().map(|&i| pool[i]).collect());
        return;
    }
    let limit = if symmetric {
        prefix.last().copied().unwrap_or(pool.len())
    } else {
        pool.len()
    };
    for i in 0..limit {
        if !symmetric && prefix.contains(&i) {
            continue;
        }
        prefix.push(i);
        enumerate_designs(pool, k, symmetric, prefix, out);
        prefix.pop();
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs one subcommand on a rayon pool of `--workers` threads.
pub fn execute(command: &Command) -> Result<Manifest> {
    let args = command.args();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Error::config("--workers", "must be at least 1"));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut run = Run::prepare(command.task(), args)?;
        match run.task {
            Task::CriteriaSweep => cmd_criteria_sweep(&mut run)?,
            Task::ExhaustiveOed => cmd_exhaustive_oed(&mut run)?,
            Task::GreedyOed => cmd_greedy(&mut run)?,
            Task::DciSolve => cmd_dci(&mut run)?,
            Task::Diagnostics => cmd_diagnostics(&mut run)?,
        }
        run.write_manifest()
    })
}

/// Entry point for the binary; returns the process exit code.
pub fn main_from_args() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(m) => {
            info!("wrote {} outputs and manifest.json", m.outputs.len());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// `criteria.csv`: one row per candidate design, in enumeration order.
pub fn cmd_criteria_sweep(run: &mut Run) -> Result<()> {
    let space = run.design_space()?;
    let batch = run.field_batch()?;
    let weights = run.measure_weights(&batch)?;
    let reports = evaluate_space_weighted(&space, &batch, run.config.tolerances.rank_tol, weights.as_deref())?;
    write_reports_csv(&run.output("criteria.csv"), &reports)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OedSummary {
    schema_version: u32,
    utility: Utility,
    candidate_count: usize,
    best: crate::criteria::CriterionReport,
    /// Local maxima of the utility over the sensor grid, best first.
    local_maxima: Vec<crate::criteria::CriterionReport>,
}

/// `ranked.csv` (best first) and `oed_summary.json`.
pub fn cmd_exhaustive_oed(run: &mut Run) -> Result<()> {
    let space = run.design_space()?;
    let batch = run.field_batch()?;
    let weights = run.measure_weights(&batch)?;
    let utility = run.config.design.utility;
    let result = exhaustive_oed_weighted(&space, &batch, utility, run.config.tolerances.rank_tol, weights.as_deref())?;
    result.write_ranked_csv(&run.output("ranked.csv"))?;

    let scores = result.scores();
    let maxima: Vec<usize> = match (run.field_grid_dims(), space.arity()) {
        (Some(dims), 1) => {
            let field = GridField::dense(dims, scores.clone())?;
            local_maxima(&field)
        }
        (Some(dims), 2) if dims.len() == 1 && run.config.design.symmetric => {
            let grid = space.pair_grid(&scores, dims[0])?;
            let mut found: Vec<usize> = local_maxima(&grid)
                .into_iter()
                .filter_map(|flat| {
                    let (p, q) = (flat / dims[0], flat % dims[0]);
                    (p > q).then(|| space.find(&[p, q])).flatten()
                })
                .collect();
            found.sort_unstable();
            found.dedup();
            found
        }
        _ => Vec::new(),
    };
    let mut maxima: Vec<_> = maxima.into_iter().map(|i| result.reports[i].clone()).collect();
    maxima.sort_by(|a, b| utility.of(b).total_cmp(&utility.of(a)));
    let summary = OedSummary {
        schema_version: SCHEMA_VERSION,
        utility,
        candidate_count: space.len(),
        best: result.best().clone(),
        local_maxima: maxima,
    };
    write_json(&run.output("oed_summary.json"), &summary)
}

/// `greedy_trace.json` and `round_<d>.csv` score fields.
pub fn cmd_greedy(run: &mut Run) -> Result<()> {
    if run.config.design.arity != 1 {
        return Err(Error::config("design.arity", "greedy search builds designs from single sensors; use 1"));
    }
    let space = run.design_space()?;
    let batch = run.field_batch()?;
    let weights = run.measure_weights(&batch)?;
    let m_target = run.config.greedy.m_target.unwrap_or(run.model.param_dim());
    let trace = greedy_oed_weighted(
        &space,
        &batch,
        m_target,
        run.config.tolerances.greedy_tol,
        run.config.tolerances.rank_tol,
        weights.as_deref(),
    )?;
    trace.write_json(&run.output("greedy_trace.json"))?;
    let rounds = trace.rounds.len() + trace.rejected_scores.is_some() as usize;
    for d in 1..=rounds {
        run.output(&format!("round_{d}.csv"));
    }
    trace.write_round_csvs(&run.out_dir, &space)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DciDesignSummary {
    pub design_id: String,
    pub design: Vec<usize>,
    pub coordinates: Vec<Vec<f64>>,
    pub observed_mean: Vec<f64>,
    pub observed_variance: f64,
    #[serde(flatten)]
    pub ensemble: EnsembleSummary,
    pub accepted_mean: Vec<f64>,
    pub accepted_covariance: Vec<Vec<f64>>,
    /// Ratio of extreme eigenvalues of the accepted covariance.
    pub accepted_condition: f64,
    /// Modes of the updated-density grid, strongest first.
    pub modes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DciSummary {
    schema_version: u32,
    seed: u64,
    samples: usize,
    designs: Vec<DciDesignSummary>,
}

/// Condition number of a symmetric positive semi-definite matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = m.clone().symmetric_eigenvalues();
    let max = ev.max();
    let min = ev.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Per design: `ensemble_<id>.csv`, `density_<id>.csv` (parameter
/// dimension at most 3), and one entry of `dci_summary.json`.
pub fn cmd_dci(run: &mut Run) -> Result<()> {
    if run.config.dci.designs.is_empty() {
        return Err(Error::config("dci.designs", "list at least one design"));
    }
    let designs: Vec<Vec<usize>> = run
        .config
        .dci
        .designs
        .iter()
        .enumerate()
        .map(|(i, d)| run.resolve(d, &format!("dci.designs[{i}]")))
        .collect::<Result<_>>()?;
    let n = run.model.param_dim();
    if let Some((i, _)) = designs.iter().enumerate().find(|(_, d)| d.len() > n) {
        return Err(Error::config(format!("dci.designs[{i}]"), format!("more components than the {n} parameters")));
    }
    let cfg = run.config.dci.clone();
    let seed = cfg.seed.unwrap_or(run.config.sampling.seed);
    let count = cfg.samples.unwrap_or(run.config.sampling.count);
    let init = run.initial_density()?;
    let samples: SampleSet = init.sample(count, seed)?;
    let fields = evaluate_fields(run.model.as_ref(), &samples)?;
    let midpoint_field = run.model.evaluate(&run.bx.midpoint())?;

    let mut out = Vec::new();
    for design in designs {
        let id = design_id(&design);
        let mean = match &cfg.observed.mean {
            Some(m) if m.len() == design.len() => m.clone(),
            Some(m) => {
                return Err(Error::config(
                    "dci.observed.mean",
                    format!("has {} entries but design {id} has {}", m.len(), design.len()),
                ))
            }
            None => design.iter().map(|&p| midpoint_field[p]).collect(),
        };
        let observed = DensitySpec::isotropic(mean.clone(), cfg.observed.variance)?;
        let ens = dci_from_fields(&samples, &fields, &design, &observed, &cfg.bandwidth, seed)?;
        ens.write_csv(&run.output(&format!("ensemble_{id}.csv")))?;

        let accepted = ens.accepted_points();
        let (accepted_mean, cov) = if accepted.len() >= 2 {
            moments(&accepted)
        } else {
            (vec![f64::NAN; n], DMatrix::from_element(n, n, f64::NAN))
        };
        let mut modes = Vec::new();
        if cfg.grid_per_axis >= 2 && n <= 3 {
            let grid = updated_density_grid(&ens, &run.bx, cfg.grid_per_axis, &cfg.bandwidth)?;
            grid.write_csv(&run.output(&format!("density_{id}.csv")))?;
            let field = grid.field();
            let mut idx: Vec<usize> = local_maxima(&field)
                .into_iter()
                .filter(|&i| grid.values[i] >= cfg.mode_fraction * field.max_value().unwrap_or(0.0))
                .collect();
            idx.sort_by(|&a, &b| grid.values[b].total_cmp(&grid.values[a]));
            modes = idx.into_iter().map(|i| grid.points.point(i).to_vec()).collect();
        }
        out.push(DciDesignSummary {
            design_id: id,
            coordinates: design.iter().map(|&p| run.model.coordinates()[p].clone()).collect(),
            design,
            observed_mean: mean,
            observed_variance: cfg.observed.variance,
            ensemble: ens.summary(),
            accepted_mean,
            accepted_condition: condition_number(&cov),
            accepted_covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
            modes,
        });
    }
    write_json(
        &run.output("dci_summary.json"),
        &DciSummary {
            schema_version: SCHEMA_VERSION,
            seed,
            samples: count,
            designs: out,
        },
    )
}

/// Distribution of local scaling and skewness for one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStats {
    pub design_id: String,
    pub samples: usize,
    pub infinite_count: usize,
    pub scaling: [f64; 4],
    pub skewness: [f64; 4],
}

/// `[min, median, mean, max]` of the finite values.
fn stats(mut xs: Vec<f64>) -> [f64; 4] {
    xs.retain(|x| x.is_finite());
    if xs.is_empty() {
        return [f64::NAN; 4];
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let median = if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    };
    [xs[0], median, crate::criteria::pairwise_sum(&xs) / n as f64, xs[n - 1]]
}

pub fn local_stats(batch: &FieldJacobianBatch, design: &[usize], rank_tol: f64) -> Result<LocalStats> {
    let jb = assemble_design_jacobian(batch, design)?;
    let per: Vec<(f64, f64)> = jb
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|j| {
            local_skewness_svd(j, rank_tol)
                .map(|c| (c.scaling, c.skewness))
                .unwrap_or((f64::NAN, f64::NAN))
        })
        .collect();
    Ok(LocalStats {
        design_id: design_id(design),
        samples: per.len(),
        infinite_count: per.iter().filter(|p| p.0.is_infinite()).count(),
        scaling: stats(per.iter().map(|p| p.0).collect()),
        skewness: stats(per.iter().map(|p| p.1).collect()),
    })
}

/// `diagnostics.csv` with local-criterion statistics per design, and
/// `snapshot_<k>.csv` field values at the requested parameters.
pub fn cmd_diagnostics(run: &mut Run) -> Result<()> {
    let designs: Vec<Vec<usize>> = run
        .config
        .diagnostics
        .designs
        .iter()
        .enumerate()
        .map(|(i, d)| run.resolve(d, &format!("diagnostics.designs[{i}]")))
        .collect::<Result<_>>()?;
    if !designs.is_empty() {
        let batch = run.field_batch()?;
        let path = run.output("diagnostics.csv");
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "design_id",
            "samples",
            "infinite_count",
            "scaling_min",
            "scaling_median",
            "scaling_mean",
            "scaling_max",
            "skewness_min",
            "skewness_median",
            "skewness_mean",
            "skewness_max",
        ])?;
        for d in &designs {
            let s = local_stats(&batch, d, run.config.tolerances.rank_tol)?;
            let mut row = vec![s.design_id, s.samples.to_string(), s.infinite_count.to_string()];
            row.extend(s.scaling.iter().chain(&s.skewness).map(|v| format!("{v:.10e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let snapshots = if run.config.diagnostics.snapshots.is_empty() {
        vec![run.bx.midpoint()]
    } else {
        run.config.diagnostics.snapshots.clone()
    };
    for (k, params) in snapshots.iter().enumerate() {
        if params.len() != run.model.param_dim() {
            return Err(Error::config(
                format!("diagnostics.snapshots[{k}]"),
                format!("model has {} parameters", run.model.param_dim()),
            ));
        }
        let field = run.model.evaluate(params)?;
        let mut w = csv::Writer::from_path(run.output(&format!("snapshot_{k}.csv")))?;
        let dim = run.model.coordinates().first().map_or(0, Vec::len);
        let mut header: Vec<String> = ["x", "y", "z"].iter().take(dim).map(|s| s.to_string()).collect();
        header.push("u".into());
        w.write_record(&header)?;
        for (c, u) in run.model.coordinates().iter().zip(&field) {
            let mut row: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
            row.push(format!("{u:.10e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_field_reports_its_path() {
        let err = parse_config(r#"{"model": {"preset": "rod"}, "sampling": {"cnt": 3}}"#, "cfg").unwrap_err();
        match err {
            Error::Config { path, .. } => assert!(path.starts_with("sampling"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_reports_field_paths() {
        let cases = [
            (r#"{"model": {}}"#, "model"),
            (r#"{"model": {"preset": "rod"}, "sampling": {"count": 0}}"#, "sampling.count"),
            (r#"{"model": {"preset": "rod"}, "tolerances": {"greedy_tol": -1}}"#, "tolerances.greedy_tol"),
            (
                r#"{"model": {"heat": {"dimension": 3, "elements_per_axis": 4, "time_steps": 1, "t_final": 1,
                    "rho": 1, "heat_capacity": 1, "source_amplitude": 1, "source_width": 1,
                    "regions_per_axis": 1, "kappa_min": 0.1, "kappa_max": 1}}}"#,
                "model.heat.dimension",
            ),
        ];
        for (text, want) in cases {
            match parse_config(text, "cfg") {
                Err(Error::Config { path, .. }) => assert_eq!(path, want),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse_config(r#"{"model": {"preset": "rod"}}"#, "cfg").unwrap();
        assert_eq!(c.sampling.fd_step, 1e-5);
        assert_eq!(c.tolerances.greedy_tol, 1e-3);
        assert_eq!(c.dci.observed.variance, 0.15);
        assert_eq!(c.design.utility, Utility::EskInverse);
    }

    #[test]
    fn design_enumeration_counts() {
        let mut out = Vec::new();
        enumerate_designs(&(0..41).collect::<Vec<_>>(), 2, true, &mut Vec::new(), &mut out);
        assert_eq!(out.len(), 820);
        assert_eq!(out, DesignSpace::unordered_pairs(41).unwrap().candidates());
        assert_eq!(count_designs(41, 2, true), 820.0);
        let mut out = Vec::new();
        enumerate_designs(&[5, 6, 7], 2, false, &mut Vec::new(), &mut out);
        assert_eq!(out.len(), 6);
        assert_eq!(count_designs(3, 2, false), 6.0);
        assert_eq!(count_designs(2, 3, true), 0.0);
    }

    #[test]
    fn content_hash_matches_git_blob_sha256() {
        // git hash-object --object-format=sha256 of an empty file
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn exit_codes_are_distinct() {
        assert_eq!(exit_code(&Error::config("a", "b")), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_ne!(exit_code(&Error::Io(std::io::Error::other("x"))), 0);
    }
}
