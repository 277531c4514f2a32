//! Design spaces, exhaustive OED, and greedy sequential OED.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{expected_criteria_weighted, CriterionReport, HmMeasure};
use crate::error::{Error, Result};
use crate::models::ForwardModel;
use crate::sampling::{assemble_design_jacobian, FieldJacobianBatch};

/// Which expected-criterion utility to maximize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utility {
    EseInverse,
    EskInverse,
}

impl Utility {
    pub fn of(self, r: &CriterionReport) -> f64 {
        match self {
            Utility::EseInverse => r.ese_inverse,
            Utility::EskInverse => r.esk_inverse,
        }
    }
}

/// Candidate designs, each a tuple of field indices of equal arity.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpace {
    candidates: Vec<Vec<usize>>,
    coordinates: Vec<Vec<f64>>,
}

impl DesignSpace {
    pub fn new(candidates: Vec<Vec<usize>>) -> Result<Self> {
        let arity = candidates.first().map_or(0, Vec::len);
        if candidates.is_empty() || arity == 0 {
            return Err(Error::input("design space needs at least one non-empty candidate"));
        }
        if candidates.iter().any(|c| c.len() != arity) {
            return Err(Error::input("all candidates must have the same arity"));
        }
        let coordinates = vec![Vec::new(); candidates.len()];
        Ok(DesignSpace {
            candidates,
            coordinates,
        })
    }

    /// Every field index as a one-sensor design.
    pub fn scalar(field_len: usize) -> Result<Self> {
        Self::new((0..field_len).map(|p| vec![p]).collect())
    }

    /// Unordered pairs `(p, q)` with `p > q`, so each sensor pair appears
    /// once regardless of ordering.
    pub fn unordered_pairs(field_len: usize) -> Result<Self> {
        let mut c = Vec::with_capacity(field_len * field_len.saturating_sub(1) / 2);
        for p in 0..field_len {
            for q in 0..p {
                c.push(vec![p, q]);
            }
        }
        Self::new(c)
    }

    /// Attaches the model's sensor coordinates to every candidate.
    pub fn with_coordinates(mut self, model: &dyn ForwardModel) -> Self {
        let coords = model.coordinates();
        self.coordinates = self
            .candidates
            .iter()
            .map(|c| c.iter().flat_map(|&p| coords.get(p).cloned().unwrap_or_default()).collect())
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.candidates[0].len()
    }

    pub fn candidate(&self, i: usize) -> &[usize] {
        &self.candidates[i]
    }

    pub fn candidates(&self) -> &[Vec<usize>] {
        &self.candidates
    }

    pub fn coordinates(&self, i: usize) -> &[f64] {
        &self.coordinates[i]
    }

    /// Index of the candidate equal to `design` (as an unordered tuple).
    pub fn find(&self, design: &[usize]) -> Option<usize> {
        let mut want = design.to_vec();
        want.sort_unstable();
        self.candidates.iter().position(|c| {
            let mut have = c.clone();
            have.sort_unstable();
            have == want
        })
    }

    fn validate_for(&self, batch: &FieldJacobianBatch) -> Result<()> {
        if let Some(bad) = self.candidates.iter().flatten().find(|&&p| p >= batch.field_len()) {
            return Err(Error::input(format!(
                "candidate index {bad} outside field of length {}",
                batch.field_len()
            )));
        }
        Ok(())
    }

    /// Scores of a pair space over a 1-D index grid, laid out as a
    /// symmetric `P x P` field (the diagonal is not part of the space).
    pub fn pair_grid(&self, scores: &[f64], field_len: usize) -> Result<GridField> {
        if self.arity() != 2 || scores.len() != self.len() {
            return Err(Error::input("pair grid needs a pair space and one score per candidate"));
        }
        let mut values = vec![None; field_len * field_len];
        for (c, s) in self.candidates.iter().zip(scores) {
            values[c[0] * field_len + c[1]] = Some(*s);
            values[c[1] * field_len + c[0]] = Some(*s);
        }
        GridField::new(vec![field_len, field_len], values)
    }
}

/// Scores on a structured grid; `None` marks cells outside the space.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    dims: Vec<usize>,
    values: Vec<Option<f64>>,
}

impl GridField {
    /// `dims` lists axis lengths, slowest axis first.
    pub fn new(dims: Vec<usize>, values: Vec<Option<f64>>) -> Result<Self> {
        if dims.is_empty() || dims.iter().product::<usize>() != values.len() {
            return Err(Error::input("grid dimensions do not match value count"));
        }
        Ok(GridField { dims, values })
    }

    pub fn dense(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(dims, values.into_iter().map(Some).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn get(&self, flat: usize) -> Option<f64> {
        self.values[flat]
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            idx[a] = flat % self.dims[a];
            flat /= self.dims[a];
        }
        idx
    }

    fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (i, d)| acc * d + i)
    }

    pub fn max_value(&self) -> Option<f64> {
        self.values.iter().flatten().copied().reduce(f64::max)
    }
}

/// Cells whose score is at least every defined neighbor's score (all
/// `3^d - 1` neighbors). A constant field therefore reports every cell.
pub fn local_maxima(field: &GridField) -> Vec<usize> {
    let d = field.dims.len();
    let offsets: Vec<Vec<isize>> = (0..3usize.pow(d as u32))
        .map(|mut k| {
            (0..d)
                .map(|_| {
                    let o = (k % 3) as isize - 1;
                    k /= 3;
                    o
                })
                .collect::<Vec<_>>()
        })
        .filter(|o| o.iter().any(|&x| x != 0))
        .collect();
    (0..field.values.len())
        .filter(|&flat| {
            let Some(v) = field.values[flat] else {
                return false;
            };
            let idx = field.unravel(flat);
            offsets.iter().all(|off| {
                let mut nb = Vec::with_capacity(d);
                for a in 0..d {
                    let j = idx[a] as isize + off[a];
                    if j < 0 || j >= field.dims[a] as isize {
                        return true;
                    }
                    nb.push(j as usize);
                }
                field.values[field.ravel(&nb)].is_none_or(|w| v >= w)
            })
        })
        .collect()
}

/// Ranked results of an exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OedResult {
    pub utility: Utility,
    /// Reports in candidate order.
    pub reports: Vec<CriterionReport>,
    /// Candidate indices sorted by utility, best first (ties: lowest index).
    pub ranking: Vec<usize>,
}

impl OedResult {
    pub fn argmax(&self) -> usize {
        self.ranking[0]
    }

    pub fn best(&self) -> &CriterionReport {
        &self.reports[self.argmax()]
    }

    pub fn scores(&self) -> Vec<f64> {
        self.reports.iter().map(|r| self.utility.of(r)).collect()
    }

    pub fn ranked(&self) -> Vec<&CriterionReport> {
        self.ranking.iter().map(|&i| &self.reports[i]).collect()
    }

    pub fn write_ranked_csv(&self, path: &Path) -> Result<()> {
        let ranked: Vec<CriterionReport> = self.ranked().into_iter().cloned().collect();
        crate::criteria::write_reports_csv(path, &ranked)
    }
}

/// Criteria of every candidate, by row assembly from one shared batch.
pub fn evaluate_space(space: &DesignSpace, batch: &FieldJacobianBatch, rank_tol: f64) -> Result<Vec<CriterionReport>> {
    evaluate_space_weighted(space, batch, rank_tol, None)
}

/// As [`evaluate_space`], averaging under the initial measure when
/// per-sample `weights` are given.
pub fn evaluate_space_weighted(
    space: &DesignSpace,
    batch: &FieldJacobianBatch,
    rank_tol: f64,
    weights: Option<&[f64]>,
) -> Result<Vec<CriterionReport>> {
    space.validate_for(batch)?;
    if weights.is_some_and(|w| w.len() != batch.sample_count()) {
        return Err(Error::input("one weight per sample is required"));
    }
    let n = batch.param_dim();
    (0..space.len())
        .into_par_iter()
        .map(|i| {
            let design = space.candidate(i);
            let mut report = if design.len() > n {
                // more rows than parameters: always rank deficient
                CriterionReport {
                    design_id: String::new(),
                    design: Vec::new(),
                    coordinates: Vec::new(),
                    ese_inverse: 0.0,
                    esk_inverse: 0.0,
                    stderr_ese: 0.0,
                    stderr_esk: 0.0,
                    sample_count: batch.sample_count(),
                    infinite_count: batch.sample_count(),
                    excluded_count: 0,
                    hm_measure: if weights.is_some() {
                        HmMeasure::Initial
                    } else {
                        HmMeasure::Volume
                    },
                }
            } else {
                expected_criteria_weighted(&assemble_design_jacobian(batch, design)?, rank_tol, weights)
            };
            report.design_id = design_id(design);
            report.design = design.to_vec();
            report.coordinates = space.coordinates(i).to_vec();
            Ok(report)
        })
        .collect()
}

pub fn design_id(design: &[usize]) -> String {
    design.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("-")
}

/// Sorts by score descending; ties keep the lower index first.
fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn argmax(scores: &[f64]) -> usize {
    rank(scores)[0]
}

/// Scores every candidate and ranks them by `utility`.
pub fn exhaustive_oed(
    space: &DesignSpace,
    batch: &FieldJacobianBatch,
    utility: Utility,
    rank_tol: f64,
) -> Result<OedResult> {
    exhaustive_oed_weighted(space, batch, utility, rank_tol, None)
}

pub fn exhaustive_oed_weighted(
    space: &DesignSpace,
    batch: &FieldJacobianBatch,
    utility: Utility,
    rank_tol: f64,
    weights: Option<&[f64]>,
) -> Result<OedResult> {
    let reports = evaluate_space_weighted(space, batch, rank_tol, weights)?;
    let scores: Vec<f64> = reports.iter().map(|r| utility.of(r)).collect();
    Ok(OedResult {
        utility,
        ranking: rank(&scores),
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ReachedM,
    BelowTol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyRound {
    pub round: usize,
    pub utility: Utility,
    /// Utility of appending each scalar candidate to the previous design.
    pub scores: Vec<f64>,
    /// Index into the scalar space.
    pub chosen: usize,
    pub chosen_field_index: usize,
    pub chosen_utility: f64,
    /// The design after this round.
    pub design: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub schema_version: u32,
    pub m_target: usize,
    pub tol: f64,
    pub rounds: Vec<GreedyRound>,
    pub stop_reason: StopReason,
    /// Scores of the round that fell below `tol`, if any.
    pub rejected_scores: Option<Vec<f64>>,
}

impl GreedyTrace {
    /// Field indices of the final design.
    pub fn design(&self) -> &[usize] {
        self.rounds.last().map_or(&[], |r| &r.design)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Writes `round_<d>.csv` with columns `candidate,field_index,x_*,utility`.
    pub fn write_round_csvs(&self, dir: &Path, space: &DesignSpace) -> Result<()> {
        let rounds = self.rounds.iter().map(|r| (r.round, &r.scores));
        let rejected = self.rejected_scores.iter().map(|s| (self.rounds.len() + 1, s));
        for (round, scores) in rounds.chain(rejected) {
            let mut w = csv::Writer::from_path(dir.join(format!("round_{round}.csv")))?;
            let ncoord = space.coordinates(0).len();
            let mut header = vec!["candidate".to_string(), "field_index".to_string()];
            header.extend((0..ncoord).map(|k| format!("x_{k}")));
            header.push("utility".into());
            w.write_record(&header)?;
            for (i, s) in scores.iter().enumerate() {
                let mut row = vec![i.to_string(), space.candidate(i)[0].to_string()];
                row.extend(space.coordinates(i).iter().map(|c| c.to_string()));
                row.push(format!("{s:.10e}"));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Greedy sequential design: round 1 maximizes `ESE^{-1}` over single
/// sensors; each later round appends the sensor maximizing `ESK^{-1}` of
/// the extended design. Already-chosen sensors stay in the pool and score
/// zero. Stops after `m_target` components, or when no candidate of a round
/// reaches `tol` (that round then adds nothing).
pub fn greedy_oed(
    scalar_space: &DesignSpace,
    batch: &FieldJacobianBatch,
    m_target: usize,
    tol: f64,
    rank_tol: f64,
) -> Result<GreedyTrace> {
    greedy_oed_weighted(scalar_space, batch, m_target, tol, rank_tol, None)
}

pub fn greedy_oed_weighted(
    scalar_space: &DesignSpace,
    batch: &FieldJacobianBatch,
    m_target: usize,
    tol: f64,
    rank_tol: f64,
    weights: Option<&[f64]>,
) -> Result<GreedyTrace> {
    if m_target == 0 {
        return Err(Error::input("m_target must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::input("greedy tolerance must be positive"));
    }
    if scalar_space.arity() != 1 {
        return Err(Error::input("greedy search needs a space of single sensors"));
    }
    if m_target > batch.param_dim() {
        warn!(
            "m_target {m_target} exceeds the parameter dimension {}; later rounds cannot be full rank",
            batch.param_dim()
        );
    }

    let first = evaluate_space_weighted(scalar_space, batch, rank_tol, weights)?;
    let scores: Vec<f64> = first.iter().map(|r| r.ese_inverse).collect();
    let chosen = argmax(&scores);
    let mut design = scalar_space.candidate(chosen).to_vec();
    let mut rounds = vec![GreedyRound {
        round: 1,
        utility: Utility::EseInverse,
        chosen_utility: scores[chosen],
        scores,
        chosen,
        chosen_field_index: design[0],
        design: design.clone(),
    }];

    let mut rejected_scores = None;
    let mut stop_reason = StopReason::ReachedM;
    for d in 2..=m_target {
        let extended: Vec<Vec<usize>> = scalar_space
            .candidates()
            .iter()
            .map(|c| design.iter().chain(c).copied().collect())
            .collect();
        let space = DesignSpace::new(extended)?;
        let scores: Vec<f64> = evaluate_space_weighted(&space, batch, rank_tol, weights)?
            .iter()
            .map(|r| r.esk_inverse)
            .collect();
        if !scores.iter().any(|&s| s >= tol) {
            stop_reason = StopReason::BelowTol;
            rejected_scores = Some(scores);
            break;
        }
        let chosen = argmax(&scores);
        let field_index = scalar_space.candidate(chosen)[0];
        design.push(field_index);
        rounds.push(GreedyRound {
            round: d,
            utility: Utility::EskInverse,
            chosen_utility: scores[chosen],
            scores,
            chosen,
            chosen_field_index: field_index,
            design: design.clone(),
        });
    }

    Ok(GreedyTrace {
        schema_version: 1,
        m_target,
        tol,
        rounds,
        stop_reason,
        rejected_scores,
    })
}
