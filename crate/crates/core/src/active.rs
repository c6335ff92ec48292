//! The iterative selection loop: initialize, then repeatedly train, predict,
//! score and label the highest-loss clips until the budget is spent.

use std::collections::HashSet;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{self, ClipPrediction, CriterionScores, ScoringParams, SelectionCriterion};
use crate::diversity::{self, StratumAllocation};
use crate::error::{Error, Result};
use crate::pool::{ClipRecord, Pool, SelectionState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Random,
    #[default]
    EgoDiversity,
}

/// Every knob of a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    /// Total number of clips to label, `n0 + iterations * per_round`.
    pub budget: usize,
    pub n0: usize,
    pub iterations: usize,
    pub per_round: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau_c: usize,
    pub eps_a: f64,
    pub delta_d: f64,
    pub seed: u64,
    pub init_mode: InitMode,
    pub criterion: SelectionCriterion,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            budget: 0,
            n0: 0,
            iterations: 2,
            per_round: 0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
            tau_c: 4,
            eps_a: 0.5,
            delta_d: 3.0,
            seed: 0,
            init_mode: InitMode::EgoDiversity,
            criterion: SelectionCriterion::Mixture,
        }
    }
}

impl ActiveConfig {
    /// 10% initial selection followed by two rounds of 10% each.
    pub fn ten_percent_schedule(pool_size: usize) -> Self {
        let step = (pool_size / 10).max(1);
        ActiveConfig {
            budget: 3 * step,
            n0: step,
            iterations: 2,
            per_round: step,
            ..Default::default()
        }
    }

    /// Fills a zero budget schedule with the default 10% + 2 x 10% one.
    pub fn with_default_schedule(mut self, pool_size: usize) -> Self {
        if self.budget == 0 && self.n0 == 0 && self.per_round == 0 {
            let s = Self::ten_percent_schedule(pool_size);
            self.budget = s.budget;
            self.n0 = s.n0;
            self.iterations = s.iterations;
            self.per_round = s.per_round;
        }
        self
    }

    pub fn scoring(&self) -> ScoringParams {
        ScoringParams {
            alpha: self.alpha,
            beta: self.beta,
            eps_a: self.eps_a,
            delta_d: self.delta_d,
            criterion: self.criterion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 {
            return Err(Error::Config("n0 must be at least 1".into()));
        }
        if self.n0 + self.iterations * self.per_round != self.budget {
            return Err(Error::Config(format!(
                "budget {} != n0 {} + iterations {} x per_round {}",
                self.budget, self.n0, self.iterations, self.per_round
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "gamma {} must be positive",
                self.gamma
            )));
        }
        if self.tau_c == 0 {
            return Err(Error::Config("tau_c must be at least 1".into()));
        }
        self.scoring().validate()
    }
}

/// The model being actively trained, seen only through its predictions.
pub trait PredictionProvider {
    /// Fits on the full current labeled set. Called once per round.
    fn train(&mut self, round: usize, labeled: &[&ClipRecord]) -> Result<()>;

    /// One prediction per requested clip.
    fn predict(&self, round: usize, clips: &[&ClipRecord]) -> Result<Vec<ClipPrediction>>;
}

/// Replays externally produced `predictions_round_<k>.jsonl` files.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dir: PathBuf,
    horizon: usize,
}

impl FileProvider {
    pub fn new(dir: impl Into<PathBuf>, horizon: usize) -> Self {
        FileProvider {
            dir: dir.into(),
            horizon,
        }
    }

    pub fn round_path(&self, round: usize) -> PathBuf {
        self.dir.join(predictions_file_name(round))
    }
}

pub fn predictions_file_name(round: usize) -> String {
    format!("predictions_round_{round}.jsonl")
}

impl PredictionProvider for FileProvider {
    fn train(&mut self, _round: usize, _labeled: &[&ClipRecord]) -> Result<()> {
        Ok(())
    }

    fn predict(&self, round: usize, clips: &[&ClipRecord]) -> Result<Vec<ClipPrediction>> {
        let path = self.round_path(round);
        let records: Vec<(usize, ClipPrediction)> = crate::fsutil::read_jsonl(&path)?;
        let wanted: HashSet<&str> = clips.iter().map(|c| c.id.as_str()).collect();
        let mut out = Vec::with_capacity(clips.len());
        for (line, pred) in records {
            if !wanted.contains(pred.clip_id.as_str()) {
                continue;
            }
            pred.validate(self.horizon).map_err(|e| Error::Parse {
                path: path.clone(),
                line,
                message: e.to_string(),
            })?;
            out.push(pred);
        }
        Ok(out)
    }
}

/// Uniform sample of `n0` clips without replacement, in pool order.
pub fn random_init(pool: &Pool, n0: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_pick(
        pool,
        &pool.ids().map(str::to_owned).collect::<Vec<_>>(),
        n0,
        &mut rng,
    )
}

fn random_pick(
    pool: &Pool,
    candidates: &[String],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>> {
    if n > candidates.len() {
        return Err(Error::BudgetExceedsPool {
            requested: n,
            available: candidates.len(),
        });
    }
    let mut picked: Vec<&String> = rand::seq::index::sample(rng, candidates.len(), n)
        .into_iter()
        .map(|i| &candidates[i])
        .collect();
    picked.sort_by_key(|id| pool.position(id));
    Ok(picked.into_iter().cloned().collect())
}

/// Aggregates of one round's scores, kept in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub scored: usize,
    pub mean_de_raw: f64,
    pub mean_sc_raw: f64,
    pub mean_au_raw: f64,
    pub mean_overall: f64,
    pub max_overall: f64,
    pub selected_mean_overall: f64,
}

impl ScoreSummary {
    pub fn from_scores(scores: &[CriterionScores], selected: &[String]) -> Self {
        let n = scores.len().max(1) as f64;
        let mean = |f: fn(&CriterionScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
        let chosen: HashSet<&str> = selected.iter().map(String::as_str).collect();
        let sel: Vec<f64> = scores
            .iter()
            .filter(|s| chosen.contains(s.clip_id.as_str()))
            .map(|s| s.overall)
            .collect();
        ScoreSummary {
            scored: scores.len(),
            mean_de_raw: mean(|s| s.de_raw),
            mean_sc_raw: mean(|s| s.sc_raw),
            mean_au_raw: mean(|s| s.au_raw),
            mean_overall: mean(|s| s.overall),
            max_overall: scores.iter().map(|s| s.overall).fold(0.0, f64::max),
            selected_mean_overall: sel.iter().sum::<f64>() / sel.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    pub ids: Vec<String>,
    pub scores: Vec<CriterionScores>,
    pub summary: ScoreSummary,
}

/// Selects the top `n` clips of already computed scores, skipping labeled
/// ones. Shared by the loop and the file-level `select` step.
pub fn select_top(
    scores: &[CriterionScores],
    state: &SelectionState,
    n: usize,
) -> Result<Vec<String>> {
    let candidates: Vec<(&str, f64)> = scores
        .iter()
        .filter(|s| !state.is_labeled(&s.clip_id))
        .map(|s| (s.clip_id.as_str(), s.overall))
        .collect();
    criteria::rank_and_take(&candidates, n)
}

/// One train / predict / score / select cycle. The state is only touched
/// once every fallible step has succeeded.
pub fn run_round<P: PredictionProvider + ?Sized>(
    pool: &Pool,
    state: &mut SelectionState,
    provider: &mut P,
    config: &ActiveConfig,
    round: usize,
) -> Result<RoundOutcome> {
    let labeled: Vec<&ClipRecord> = clips_of(pool, state.labeled())?;
    let unlabeled_ids = state.unlabeled().to_vec();
    let unlabeled: Vec<&ClipRecord> = clips_of(pool, &unlabeled_ids)?;
    let take = config.per_round.min(unlabeled.len());

    provider.train(round, &labeled)?;
    let predictions = provider.predict(round, &unlabeled)?;
    check_coverage(&unlabeled_ids, &predictions)?;
    let scores = criteria::score_clips(pool, &unlabeled_ids, &predictions, &config.scoring())?;
    let ids = select_top(&scores, state, take)?;
    let summary = ScoreSummary::from_scores(&scores, &ids);

    state.add_round(ids.clone())?;
    Ok(RoundOutcome {
        round,
        ids,
        scores,
        summary,
    })
}

fn clips_of<'a>(pool: &'a Pool, ids: &[String]) -> Result<Vec<&'a ClipRecord>> {
    ids.iter()
        .map(|id| pool.get(id).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect()
}

fn check_coverage(requested: &[String], predictions: &[ClipPrediction]) -> Result<()> {
    let wanted: HashSet<&str> = requested.iter().map(String::as_str).collect();
    let mut seen = HashSet::with_capacity(predictions.len());
    for p in predictions {
        if !wanted.contains(p.clip_id.as_str()) {
            return Err(Error::Provider(format!(
                "unrequested prediction for `{}`",
                p.clip_id
            )));
        }
        if !seen.insert(p.clip_id.as_str()) {
            return Err(Error::Provider(format!(
                "duplicate prediction for `{}`",
                p.clip_id
            )));
        }
    }
    if let Some(missing) = requested.iter().find(|id| !seen.contains(id.as_str())) {
        return Err(Error::MissingPrediction(missing.clone()));
    }
    Ok(())
}

/// How the initial set was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub mode: InitMode,
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allocations: Vec<StratumAllocation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub state: SelectionState,
    pub init: InitOutcome,
    pub rounds: Vec<RoundOutcome>,
}

pub fn initialize(pool: &Pool, config: &ActiveConfig) -> Result<InitOutcome> {
    let n0 = config.n0.min(pool.len());
    Ok(match config.init_mode {
        InitMode::Random => InitOutcome {
            mode: InitMode::Random,
            ids: random_init(pool, n0, config.seed)?,
            allocations: Vec::new(),
        },
        InitMode::EgoDiversity => {
            let sel = diversity::ego_diversity_init(pool, n0, config.gamma, config.tau_c)?;
            InitOutcome {
                mode: InitMode::EgoDiversity,
                ids: sel.ids,
                allocations: sel.allocations,
            }
        }
    })
}

/// Full selection run. Ends with `min(budget, |pool|)` labeled clips.
pub fn run<P: PredictionProvider + ?Sized>(
    pool: &Pool,
    provider: &mut P,
    config: &ActiveConfig,
) -> Result<RunOutcome> {
    config.validate()?;
    let mut state = SelectionState::new(pool);
    let init = initialize(pool, config)?;
    state.add_round(init.ids.clone())?;

    let mut rounds = Vec::with_capacity(config.iterations);
    for round in 1..=config.iterations {
        if state.unlabeled().is_empty() {
            break;
        }
        rounds.push(run_round(pool, &mut state, provider, config, round)?);
    }
    Ok(RunOutcome {
        state,
        init,
        rounds,
    })
}

/// Random-selection comparator: random initial set, then `per_round` random
/// clips per round. Round `k` draws from its own seeded stream.
pub fn run_random(pool: &Pool, config: &ActiveConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut state = SelectionState::new(pool);
    let init = InitOutcome {
        mode: InitMode::Random,
        ids: random_init(pool, config.n0.min(pool.len()), config.seed)?,
        allocations: Vec::new(),
    };
    state.add_round(init.ids.clone())?;

    let mut rounds = Vec::new();
    for round in 1..=config.iterations {
        if state.unlabeled().is_empty() {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(round as u64);
        let candidates = state.unlabeled().to_vec();
        let ids = random_pick(
            pool,
            &candidates,
            config.per_round.min(candidates.len()),
            &mut rng,
        )?;
        state.add_round(ids.clone())?;
        rounds.push(RoundOutcome {
            round,
            ids,
            scores: Vec::new(),
            summary: ScoreSummary::from_scores(&[], &[]),
        });
    }
    Ok(RunOutcome {
        state,
        init,
        rounds,
    })
}
