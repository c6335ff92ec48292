//! Evaluation metrics, overlap analysis, run manifests and report emitters.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::active::{ActiveConfig, InitOutcome, RunOutcome, ScoreSummary};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::pool::{classify_command, CommandClass, Lighting, Pool, Weather};
use crate::synthworld::{ClipEval, EvalSummary};

/// Per-step planar errors over a 3 s horizon sampled at 2 Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepErrors([f64; 6]);

impl StepErrors {
    pub fn new(errors: &[f64]) -> Result<Self> {
        let arr: [f64; 6] = errors
            .try_into()
            .map_err(|_| Error::StepErrorsLength(errors.len()))?;
        if arr.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::Config(
                "step errors must be finite and non-negative".into(),
            ));
        }
        Ok(StepErrors(arr))
    }

    pub fn as_slice(&self) -> &[f64; 6] {
        &self.0
    }

    /// Element-wise mean over clips.
    pub fn mean<'a>(all: impl IntoIterator<Item = &'a StepErrors>) -> Option<StepErrors> {
        let mut sum = [0.0; 6];
        let mut n = 0usize;
        for e in all {
            for (s, v) in sum.iter_mut().zip(e.0) {
                *s += v;
            }
            n += 1;
        }
        (n > 0).then(|| StepErrors(sum.map(|s| s / n as f64)))
    }
}

fn check_second(k: u32) -> Result<usize> {
    match k {
        1..=3 => Ok(k as usize),
        _ => Err(Error::InvalidSecond(k)),
    }
}

/// Error at exactly `k` seconds (waypoint `2k`, 1-based).
pub fn l2_at_k_uniad(errors: &StepErrors, k: u32) -> Result<f64> {
    let k = check_second(k)?;
    Ok(errors.0[2 * k - 1])
}

/// Mean error over the first `k` seconds (waypoints `1..=2k`).
pub fn l2_at_k_vad(errors: &StepErrors, k: u32) -> Result<f64> {
    let k = check_second(k)?;
    Ok(errors.0[..2 * k].iter().sum::<f64>() / (2 * k) as f64)
}

/// `|A ∩ B| / |A|`.
pub fn overlap_rate(a: &[String], b: &[String]) -> Result<f64> {
    let a: HashSet<&str> = a.iter().map(String::as_str).collect();
    if a.is_empty() {
        return Err(Error::EmptyOverlapSet);
    }
    let b: HashSet<&str> = b.iter().map(String::as_str).collect();
    Ok(a.intersection(&b).count() as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub names: Vec<String>,
    /// `rates[i][j] = overlap_rate(set_i, set_j)`.
    pub rates: Vec<Vec<f64>>,
}

pub fn overlap_matrix(sets: &[(String, Vec<String>)]) -> Result<OverlapMatrix> {
    let rates = sets
        .iter()
        .map(|(_, a)| sets.iter().map(|(_, b)| overlap_rate(a, b)).collect())
        .collect::<Result<_>>()?;
    Ok(OverlapMatrix {
        names: sets.iter().map(|(n, _)| n.clone()).collect(),
        rates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub key: String,
    pub clips: usize,
    pub avg_de: f64,
    pub proxy_collision_rate: f64,
}

/// Rows in the order Day, Night, Sunny, Rainy, S, L, R, O, All. Strata
/// without clips are left out.
pub type StratifiedTable = Vec<StratumRow>;

pub const STRATUM_KEYS: [&str; 9] = ["Day", "Night", "Sunny", "Rainy", "S", "L", "R", "O", "All"];

pub fn stratified_metrics(
    results: &[ClipEval],
    pool: &Pool,
    tau_c: usize,
) -> Result<StratifiedTable> {
    let mut groups: BTreeMap<usize, Vec<&ClipEval>> = BTreeMap::new();
    for r in results {
        let clip = pool
            .get(&r.clip_id)
            .ok_or_else(|| Error::UnknownId(r.clip_id.clone()))?;
        let lighting = match clip.lighting {
            Lighting::Day => 0,
            Lighting::Night => 1,
        };
        let weather = match clip.weather {
            Weather::Sunny => 2,
            Weather::Rainy => 3,
        };
        let command = match classify_command(clip, tau_c) {
            CommandClass::S => 4,
            CommandClass::L => 5,
            CommandClass::R => 6,
            CommandClass::O => 7,
        };
        for key in [lighting, weather, command, 8] {
            groups.entry(key).or_default().push(r);
        }
    }
    Ok(groups
        .into_iter()
        .map(|(key, members)| {
            let n = members.len() as f64;
            StratumRow {
                key: STRATUM_KEYS[key].to_owned(),
                clips: members.len(),
                avg_de: members.iter().map(|m| m.de).sum::<f64>() / n,
                proxy_collision_rate: 100.0 * members.iter().filter(|m| m.collided).count() as f64
                    / n,
            }
        })
        .collect())
}

/// Average L2 at 1, 2 and 3 s under both reporting conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Table {
    pub uniad: [f64; 3],
    pub vad: [f64; 3],
}

impl L2Table {
    pub fn from_mean(errors: &StepErrors) -> Self {
        let at = |f: fn(&StepErrors, u32) -> Result<f64>| {
            [1, 2, 3].map(|k| f(errors, k).expect("k in 1..=3"))
        };
        L2Table {
            uniad: at(l2_at_k_uniad),
            vad: at(l2_at_k_vad),
        }
    }

    /// `None` unless every clip has exactly six step errors.
    pub fn from_evals(evals: &[ClipEval]) -> Option<Self> {
        let steps: Vec<StepErrors> = evals
            .iter()
            .map(|e| StepErrors::new(&e.step_errors))
            .collect::<Result<_>>()
            .ok()?;
        StepErrors::mean(&steps).map(|m| Self::from_mean(&m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub heldout: EvalSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<L2Table>,
    pub stratified: StratifiedTable,
}

impl Evaluation {
    pub fn new(heldout: EvalSummary, heldout_pool: &Pool, tau_c: usize) -> Result<Self> {
        Ok(Evaluation {
            l2: L2Table::from_evals(&heldout.per_clip),
            stratified: stratified_metrics(&heldout.per_clip, heldout_pool, tau_c)?,
            heldout,
        })
    }
}

pub const MANIFEST_SCHEMA: &str = "drivesel.run.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Active,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub ids: Vec<String>,
    pub summary: ScoreSummary,
}

/// Everything needed to audit or replay a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema: String,
    pub kind: RunKind,
    pub config: ActiveConfig,
    /// Free-form provenance, e.g. world and planner settings.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
    pub init: InitOutcome,
    pub rounds: Vec<RoundRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Evaluation>,
}

impl RunManifest {
    pub fn new(kind: RunKind, config: &ActiveConfig, outcome: &RunOutcome) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            kind,
            config: config.clone(),
            extra: BTreeMap::new(),
            init: outcome.init.clone(),
            rounds: outcome
                .rounds
                .iter()
                .map(|r| RoundRecord {
                    round: r.round,
                    ids: r.ids.clone(),
                    summary: r.summary.clone(),
                })
                .collect(),
            evaluation: None,
        }
    }

    /// Every labeled id, initial set first.
    pub fn labeled(&self) -> Vec<String> {
        let mut ids = self.init.ids.clone();
        for r in &self.rounds {
            ids.extend(r.ids.iter().cloned());
        }
        ids
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = fsutil::read_json(path)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Config(format!(
                "{}: manifest schema `{}`, expected `{MANIFEST_SCHEMA}`",
                path.display(),
                m.schema
            )));
        }
        Ok(m)
    }
}

/// One long-format cell of the delimited report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub section: String,
    pub run: String,
    pub key: String,
    pub metric: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedManifest {
    pub name: String,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<NamedManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<OverlapMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Long-format CSV: `section,run,key,metric,value`.
    Delimited,
    /// Pretty-printed JSON.
    Structured,
}

impl Report {
    pub fn rows(&self) -> Result<Vec<ReportRow>> {
        let mut rows = Vec::new();
        let mut push = |section: &str, run: &str, key: &str, metric: &str, value: String| {
            rows.push(ReportRow {
                section: section.into(),
                run: run.into(),
                key: key.into(),
                metric: metric.into(),
                value,
            })
        };
        for NamedManifest { name, manifest: m } in &self.runs {
            if let serde_json::Value::Object(cfg) = serde_json::to_value(&m.config)? {
                for (k, v) in cfg {
                    push("config", name, &k, "value", json_scalar(&v));
                }
            }
            push(
                "init",
                name,
                "total",
                "selected",
                m.init.ids.len().to_string(),
            );
            for a in &m.init.allocations {
                let key = format!("{}/{}", a.bucket, a.command);
                push("init", name, &key, "available", a.available.to_string());
                push("init", name, &key, "share", a.share.to_string());
                push("init", name, &key, "allocated", a.allocated.to_string());
            }
            for r in &m.rounds {
                let key = r.round.to_string();
                let s = &r.summary;
                push("round", name, &key, "selected", r.ids.len().to_string());
                push("round", name, &key, "scored", s.scored.to_string());
                push(
                    "round",
                    name,
                    &key,
                    "mean_de_raw",
                    s.mean_de_raw.to_string(),
                );
                push(
                    "round",
                    name,
                    &key,
                    "mean_sc_raw",
                    s.mean_sc_raw.to_string(),
                );
                push(
                    "round",
                    name,
                    &key,
                    "mean_au_raw",
                    s.mean_au_raw.to_string(),
                );
                push(
                    "round",
                    name,
                    &key,
                    "mean_overall",
                    s.mean_overall.to_string(),
                );
                push(
                    "round",
                    name,
                    &key,
                    "selected_mean_overall",
                    s.selected_mean_overall.to_string(),
                );
            }
            if let Some(ev) = &m.evaluation {
                push(
                    "comparison",
                    name,
                    "heldout",
                    "labeled",
                    m.labeled().len().to_string(),
                );
                push(
                    "comparison",
                    name,
                    "heldout",
                    "clips",
                    ev.heldout.clips.to_string(),
                );
                push(
                    "comparison",
                    name,
                    "heldout",
                    "avg_de",
                    ev.heldout.avg_de.to_string(),
                );
                push(
                    "comparison",
                    name,
                    "heldout",
                    "proxy_collision_rate",
                    ev.heldout.proxy_collision_rate.to_string(),
                );
                if let Some(l2) = &ev.l2 {
                    for (i, k) in ["1s", "2s", "3s"].iter().enumerate() {
                        push("l2", name, "uniad", k, l2.uniad[i].to_string());
                        push("l2", name, "vad", k, l2.vad[i].to_string());
                    }
                }
                for row in &ev.stratified {
                    push("stratified", name, &row.key, "clips", row.clips.to_string());
                    push(
                        "stratified",
                        name,
                        &row.key,
                        "avg_de",
                        row.avg_de.to_string(),
                    );
                    push(
                        "stratified",
                        name,
                        &row.key,
                        "proxy_collision_rate",
                        row.proxy_collision_rate.to_string(),
                    );
                }
            }
        }
        if let Some(o) = &self.overlap {
            for (i, a) in o.names.iter().enumerate() {
                for (j, b) in o.names.iter().enumerate() {
                    push("overlap", "", a, b, o.rates[i][j].to_string());
                }
            }
        }
        Ok(rows)
    }

    pub fn render(&self, format: ReportFormat) -> Result<Vec<u8>> {
        match format {
            ReportFormat::Structured => {
                let mut bytes = serde_json::to_vec_pretty(self)?;
                bytes.push(b'\n');
                Ok(bytes)
            }
            ReportFormat::Delimited => {
                let mut w = csv::Writer::from_writer(Vec::new());
                for row in self.rows()? {
                    w.serialize(row)?;
                }
                w.into_inner()
                    .map_err(|e| Error::io("<report>", e.into_error()))
            }
        }
    }
}

fn json_scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn emit_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    fsutil::write_atomic(path, &report.render(format)?)
}
