//! Closed-loop runs on a synthetic world: select with the toy planner in
//! the loop, retrain on the final labeled set, evaluate on held-out clips.

use std::collections::HashMap;
use std::sync::Arc;

use crate::active::{self, ActiveConfig};
use crate::error::{Error, Result};
use crate::pool::{ClipRecord, Pool};
use crate::report::{Evaluation, RunKind, RunManifest};
use crate::synthworld::{self, ClipTruth, ToyConfig, ToyPlanner, World, WorldConfig};

/// A generated selection pool plus a disjoint held-out set drawn from the
/// same distribution.
#[derive(Debug, Clone)]
pub struct SplitWorld {
    pub pool: Pool,
    pub heldout: Pool,
    /// Truth for both pool and held-out clips.
    pub truth: Arc<HashMap<String, ClipTruth>>,
}

impl SplitWorld {
    /// The held-out set uses the same seed under a different id prefix and
    /// RNG stream offset, so it never shares clips with the pool.
    pub fn generate(config: &WorldConfig, heldout_n: usize) -> Result<Self> {
        let pool_world = synthworld::generate(config)?;
        let heldout_world = synthworld::generate(&heldout_config(config, heldout_n))?;
        Self::from_worlds(pool_world, heldout_world, config.horizon)
    }

    pub fn from_worlds(pool: World, heldout: World, horizon: usize) -> Result<Self> {
        let mut truth = pool.truth_map();
        for t in heldout.truth {
            let id = t.clip_id.clone();
            if truth.insert(id.clone(), t).is_some() {
                return Err(Error::HeldoutOverlap(id));
            }
        }
        Ok(SplitWorld {
            pool: Pool::new(pool.clips, horizon)?,
            heldout: Pool::new(heldout.clips, horizon)?,
            truth: Arc::new(truth),
        })
    }
}

/// World config of the held-out set paired with `config`.
pub fn heldout_config(config: &WorldConfig, heldout_n: usize) -> WorldConfig {
    WorldConfig {
        n: heldout_n,
        seed: config.seed ^ 0x9e37_79b9_7f4a_7c15,
        id_prefix: format!("{}-heldout", config.id_prefix),
        ..config.clone()
    }
}

/// Trains a fresh toy planner on `labeled` and evaluates it on `heldout`.
pub fn evaluate_labeled(
    pool: &Pool,
    labeled: &[String],
    heldout: &Pool,
    truth: Arc<HashMap<String, ClipTruth>>,
    toy: ToyConfig,
) -> Result<Evaluation> {
    let mut planner = ToyPlanner::new(toy, truth.clone());
    let clips: Vec<&ClipRecord> = labeled
        .iter()
        .map(|id| pool.get(id).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<_>>()?;
    planner.toy_train(&clips)?;
    let heldout_clips: Vec<&ClipRecord> = heldout.clips().iter().collect();
    let summary = synthworld::heldout_eval(&planner, &heldout_clips, &truth)?;
    Evaluation::new(summary, heldout, toy.tau_c)
}

/// Runs selection (active with the toy planner in the loop, or the random
/// comparator) and attaches the held-out evaluation of the final set.
pub fn closed_loop(
    world: &SplitWorld,
    config: &ActiveConfig,
    toy: ToyConfig,
    kind: RunKind,
) -> Result<RunManifest> {
    let outcome = match kind {
        RunKind::Active => {
            let mut planner = ToyPlanner::new(toy, world.truth.clone());
            active::run(&world.pool, &mut planner, config)?
        }
        RunKind::Random => active::run_random(&world.pool, config)?,
    };
    let mut manifest = RunManifest::new(kind, config, &outcome);
    manifest.evaluation = Some(evaluate_labeled(
        &world.pool,
        outcome.state.labeled(),
        &world.heldout,
        world.truth.clone(),
        toy,
    )?);
    manifest
        .extra
        .insert("toy".into(), serde_json::to_value(toy)?);
    Ok(manifest)
}
