//! Planning-oriented scoring of unlabeled clips.
//!
//! Three raw criteria are computed per clip from a model's output alone:
//!
//! * displacement error, the mean distance between the planned and the
//!   recorded ego trajectory;
//! * soft collision, `sum_t exp(-d_t)` where `d_t` is the distance from the
//!   planned ego position to the closest confident agent at step `t`;
//! * agent uncertainty, the entropy of each nearby agent's modality
//!   probabilities weighted by `exp(delta - d_a)`.
//!
//! Each criterion is min-max normalized over the clips scored in a round and
//! mixed into one overall loss; the clips with the largest loss are labeled
//! next.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::pool::{Point, Pool};

/// Tolerance on the sum of an agent's modality probabilities.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentForecast {
    pub agent_id: String,
    pub confidence: f64,
    pub modality_probs: Vec<f64>,
    pub modality_trajs: Vec<Vec<Point>>,
}

impl AgentForecast {
    /// Index of the most probable modality, lowest index on ties.
    pub fn best_modality(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.modality_probs.iter().enumerate() {
            if *p > self.modality_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn best_trajectory(&self) -> &[Point] {
        &self.modality_trajs[self.best_modality()]
    }

    fn check_probs(&self) -> std::result::Result<(), String> {
        if self.modality_probs.is_empty() {
            return Err(format!("agent `{}` has no modalities", self.agent_id));
        }
        if self
            .modality_probs
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0)
        {
            return Err(format!(
                "agent `{}` has an invalid probability",
                self.agent_id
            ));
        }
        let sum: f64 = self.modality_probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(format!(
                "agent `{}` modality probabilities sum to {sum}",
                self.agent_id
            ));
        }
        Ok(())
    }

    fn check(&self, horizon: usize) -> std::result::Result<(), String> {
        self.check_probs()?;
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!(
                "agent `{}` confidence {} outside [0, 1]",
                self.agent_id, self.confidence
            ));
        }
        if self.modality_trajs.len() != self.modality_probs.len() {
            return Err(format!(
                "agent `{}` has {} trajectories for {} probabilities",
                self.agent_id,
                self.modality_trajs.len(),
                self.modality_probs.len()
            ));
        }
        for traj in &self.modality_trajs {
            if traj.len() != horizon {
                return Err(format!(
                    "agent `{}` trajectory has {} waypoints, expected {horizon}",
                    self.agent_id,
                    traj.len()
                ));
            }
            if traj.iter().flatten().any(|c| !c.is_finite()) {
                return Err(format!(
                    "agent `{}` has a non-finite waypoint",
                    self.agent_id
                ));
            }
        }
        Ok(())
    }
}

/// Model output for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub ego_plan: Vec<Point>,
    pub agents: Vec<AgentForecast>,
}

impl ClipPrediction {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let invalid = |reason: String| Error::InvalidPrediction {
            id: self.clip_id.clone(),
            reason,
        };
        if self.ego_plan.len() != horizon {
            return Err(invalid(format!(
                "ego_plan has {} waypoints, expected {horizon}",
                self.ego_plan.len()
            )));
        }
        if self.ego_plan.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite ego_plan waypoint".into()));
        }
        for agent in &self.agents {
            agent.check(horizon).map_err(invalid)?;
        }
        Ok(())
    }
}

/// Reads a predictions file and checks every record against the pool.
pub fn load_predictions(path: &Path, pool: &Pool) -> Result<Vec<ClipPrediction>> {
    let records: Vec<(usize, ClipPrediction)> = fsutil::read_jsonl(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (line, pred) in records {
        if !pool.contains(&pred.clip_id) {
            return Err(Error::UnknownId(pred.clip_id));
        }
        pred.validate(pool.horizon()).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        out.push(pred);
    }
    Ok(out)
}

pub fn save_predictions(preds: &[ClipPrediction], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &fsutil::to_jsonl(preds)?)
}

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Per-waypoint Euclidean errors.
pub fn step_errors(plan: &[Point], truth: &[Point]) -> Result<Vec<f64>> {
    if plan.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: plan.len(),
            right: truth.len(),
        });
    }
    Ok(plan
        .iter()
        .zip(truth)
        .map(|(p, t)| distance(*p, *t))
        .collect())
}

/// Mean Euclidean distance between planned and recorded waypoints.
pub fn displacement_error(plan: &[Point], truth: &[Point]) -> Result<f64> {
    let errors = step_errors(plan, truth)?;
    if errors.is_empty() {
        return Ok(0.0);
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Sum over steps of `exp(-d)`, `d` the distance from the planned ego
/// position to the closest agent with confidence at least `eps_a`, each agent
/// represented by its most probable modality. Steps without a qualifying
/// agent add nothing.
pub fn soft_collision(pred: &ClipPrediction, eps_a: f64) -> f64 {
    let agents: Vec<&[Point]> = pred
        .agents
        .iter()
        .filter(|a| a.confidence >= eps_a)
        .map(AgentForecast::best_trajectory)
        .collect();
    if agents.is_empty() {
        return 0.0;
    }
    pred.ego_plan
        .iter()
        .enumerate()
        .map(|(t, &ego)| {
            agents
                .iter()
                .filter_map(|traj| traj.get(t))
                .map(|&p| distance(ego, p))
                .min_by(f64::total_cmp)
                .map_or(0.0, |d| (-d).exp())
        })
        .sum()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Closest approach between the planned ego trajectory and an agent's most
/// probable modality.
pub fn closest_approach(ego_plan: &[Point], agent: &AgentForecast) -> f64 {
    ego_plan
        .iter()
        .zip(agent.best_trajectory())
        .map(|(e, a)| distance(*e, *a))
        .min_by(f64::total_cmp)
        .unwrap_or(f64::INFINITY)
}

/// Entropy of the modality probabilities of every agent within `delta_d`
/// of the ego plan, weighted by `exp(delta_d - d_a)`.
pub fn agent_uncertainty(pred: &ClipPrediction, delta_d: f64) -> Result<f64> {
    let mut total = 0.0;
    for agent in &pred.agents {
        agent
            .check_probs()
            .map_err(|reason| Error::InvalidPrediction {
                id: pred.clip_id.clone(),
                reason,
            })?;
        let d = closest_approach(&pred.ego_plan, agent);
        if d <= delta_d {
            total += (delta_d - d).exp() * entropy(&agent.modality_probs);
        }
    }
    Ok(total)
}

/// `(v - min) / (max - min)`; all zeros when every value is equal.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let Some(min) = values.iter().copied().min_by(f64::total_cmp) else {
        return Vec::new();
    };
    let max = values.iter().copied().max_by(f64::total_cmp).unwrap_or(min);
    let span = max - min;
    if span <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / span).collect()
}

pub fn overall_loss(de_norm: f64, sc_norm: f64, au_norm: f64, alpha: f64, beta: f64) -> f64 {
    de_norm + alpha * sc_norm + beta * au_norm
}

/// Which criteria drive selection. `Mixture` is the full loss; the
/// single-criterion variants exist for overlap analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionCriterion {
    #[default]
    Mixture,
    DeOnly,
    ScOnly,
    AuOnly,
}

impl SelectionCriterion {
    pub const ALL: [SelectionCriterion; 4] = [
        SelectionCriterion::DeOnly,
        SelectionCriterion::ScOnly,
        SelectionCriterion::AuOnly,
        SelectionCriterion::Mixture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionCriterion::Mixture => "mixture",
            SelectionCriterion::DeOnly => "de-only",
            SelectionCriterion::ScOnly => "sc-only",
            SelectionCriterion::AuOnly => "au-only",
        }
    }
}

/// Thresholds and weights used when scoring a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub alpha: f64,
    pub beta: f64,
    pub eps_a: f64,
    pub delta_d: f64,
    #[serde(default)]
    pub criterion: SelectionCriterion,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            alpha: 1.0,
            beta: 1.0,
            eps_a: 0.5,
            delta_d: 3.0,
            criterion: SelectionCriterion::Mixture,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite()
            && self.alpha >= 0.0
            && self.beta.is_finite()
            && self.beta >= 0.0)
        {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.eps_a) {
            return Err(Error::Config(format!(
                "eps_a {} outside [0, 1]",
                self.eps_a
            )));
        }
        if !(self.delta_d.is_finite() && self.delta_d > 0.0) {
            return Err(Error::Config(format!(
                "delta_d {} must be positive",
                self.delta_d
            )));
        }
        Ok(())
    }

    fn mix(&self, de: f64, sc: f64, au: f64) -> f64 {
        match self.criterion {
            SelectionCriterion::Mixture => overall_loss(de, sc, au, self.alpha, self.beta),
            SelectionCriterion::DeOnly => de,
            SelectionCriterion::ScOnly => sc,
            SelectionCriterion::AuOnly => au,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScores {
    pub clip_id: String,
    pub de_raw: f64,
    pub sc_raw: f64,
    pub au_raw: f64,
    pub de_norm: f64,
    pub sc_norm: f64,
    pub au_norm: f64,
    pub overall: f64,
}

/// Raw criteria for one clip.
pub fn raw_scores(
    pred: &ClipPrediction,
    gt_future: &[Point],
    params: &ScoringParams,
) -> Result<[f64; 3]> {
    Ok([
        displacement_error(&pred.ego_plan, gt_future)?,
        soft_collision(pred, params.eps_a),
        agent_uncertainty(pred, params.delta_d)?,
    ])
}

/// Scores `ids` from their predictions, normalizing each criterion over this
/// set. Output follows the order of `ids`. Every id must have exactly one
/// prediction.
pub fn score_clips(
    pool: &Pool,
    ids: &[String],
    predictions: &[ClipPrediction],
    params: &ScoringParams,
) -> Result<Vec<CriterionScores>> {
    params.validate()?;
    let mut by_id = std::collections::HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.clip_id.as_str(), p).is_some() {
            return Err(Error::InvalidPrediction {
                id: p.clip_id.clone(),
                reason: "more than one prediction".into(),
            });
        }
    }

    let raw: Vec<[f64; 3]> = ids
        .par_iter()
        .map(|id| {
            let clip = pool.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
            let pred = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::MissingPrediction(id.clone()))?;
            pred.validate(pool.horizon())?;
            raw_scores(pred, &clip.gt_future, params)
        })
        .collect::<Result<_>>()?;

    let column = |k: usize| min_max_normalize(&raw.iter().map(|r| r[k]).collect::<Vec<_>>());
    let (de, sc, au) = (column(0), column(1), column(2));

    Ok(ids
        .iter()
        .enumerate()
        .map(|(i, id)| CriterionScores {
            clip_id: id.clone(),
            de_raw: raw[i][0],
            sc_raw: raw[i][1],
            au_raw: raw[i][2],
            de_norm: de[i],
            sc_norm: sc[i],
            au_norm: au[i],
            overall: params.mix(de[i], sc[i], au[i]),
        })
        .collect())
}

fn rank_order(a: &(&str, f64), b: &(&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Ids of the `n` largest scores, descending, ties by ascending id.
pub fn rank_and_take(scores: &[(&str, f64)], n: usize) -> Result<Vec<String>> {
    if n > scores.len() {
        return Err(Error::BudgetExceedsPool {
            requested: n,
            available: scores.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut items = scores.to_vec();
    if n < items.len() {
        items.select_nth_unstable_by(n - 1, rank_order);
        items.truncate(n);
    }
    items.sort_unstable_by(rank_order);
    Ok(items.into_iter().map(|(id, _)| id.to_owned()).collect())
}

/// Writes scores as a comma-separated table with a header row.
pub fn write_scores_csv<W: std::io::Write>(scores: &[CriterionScores], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in scores {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

pub fn save_scores(scores: &[CriterionScores], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_scores_csv(scores, &mut buf)?;
    fsutil::write_atomic(path, &buf)
}

pub fn load_scores(path: &Path) -> Result<Vec<CriterionScores>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
