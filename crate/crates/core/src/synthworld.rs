//! Seeded synthetic driving world and a nearest-neighbor toy planner.
//!
//! Every clip starts with the ego vehicle at the origin heading along +x.
//! Its recorded future is a constant-speed path whose yaw-rate profile
//! follows the clip maneuver (left / right arc, lane-change S-curve, or a
//! straight line), with Gaussian noise that doubles in rain and doubles
//! again at night. Frame commands come from the sign of the per-frame yaw
//! rate. Clips that turn or change lane have a row of static obstacles on
//! the straight path ahead, which is what forces the maneuver; every clip
//! also has a Poisson number of constant-velocity agents travelling next to
//! the ego path.
//!
//! The toy planner stands in for an end-to-end driving model. It plans by
//! averaging the recorded futures of the `k` labeled clips closest in
//! metadata feature space, and it forms agent forecasts from the *true*
//! agent states. It is not a fair perception model: it exists so that the
//! selection criteria have something informative to rank.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::PredictionProvider;
use crate::criteria::{self, AgentForecast, ClipPrediction};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::pool::{
    classify_command, Bucket, ClipRecord, Command, CommandClass, FrameState, Lighting, Point,
    Weather,
};

/// Fewest turn commands a turning clip emits.
pub const MIN_COMMAND_FRAMES: usize = 4;
/// Yaw rates within this band (rad/s) read as `Straight`.
pub const YAW_DEADBAND: f64 = 0.02;
/// Obstacles closer than this to the true ego path are removed.
const OBSTACLE_CLEARANCE: f64 = 1.5;
const OBSTACLE_SPACING: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n: usize,
    /// DS, DR, NS, NR.
    pub bucket_probs: [f64; 4],
    /// L, R, O, S.
    pub maneuver_probs: [f64; 4],
    pub horizon: usize,
    pub frames: usize,
    /// Seconds between frames and between future waypoints.
    pub dt: f64,
    /// Mean number of moving agents per clip.
    pub agent_rate: f64,
    /// Positional noise of the recorded future in meters, before the
    /// weather / lighting inflation.
    pub noise_scale: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n: 2000,
            bucket_probs: [0.701, 0.179, 0.101, 0.019],
            maneuver_probs: [0.160, 0.189, 0.047, 0.604],
            horizon: 6,
            frames: 20,
            dt: 0.5,
            agent_rate: 3.0,
            noise_scale: 0.15,
            seed: 0,
            id_prefix: "clip".into(),
        }
    }
}

fn check_probs(name: &str, probs: &[f64; 4]) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Config(format!("{name} has an invalid entry")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        check_probs("bucket_probs", &self.bucket_probs)?;
        check_probs("maneuver_probs", &self.maneuver_probs)?;
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.frames < 2 * MIN_COMMAND_FRAMES {
            return Err(Error::Config(format!(
                "frames must be at least {}",
                2 * MIN_COMMAND_FRAMES
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.agent_rate.is_finite() && self.agent_rate >= 0.0) {
            return Err(Error::Config("agent_rate must be non-negative".into()));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config("noise_scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub agent_id: String,
    /// Position at the clip's current frame.
    pub start: Point,
    /// Constant velocity, m/s.
    pub velocity: Point,
    /// Positions at the `horizon` future steps.
    pub trajectory: Vec<Point>,
}

/// Hidden state of one clip, parallel to the pool record by `clip_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipTruth {
    pub clip_id: String,
    pub maneuver: CommandClass,
    pub ego_future: Vec<Point>,
    pub agents: Vec<AgentTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub clips: Vec<ClipRecord>,
    pub truth: Vec<ClipTruth>,
}

impl World {
    pub fn truth_map(&self) -> HashMap<String, ClipTruth> {
        self.truth
            .iter()
            .map(|t| (t.clip_id.clone(), t.clone()))
            .collect()
    }
}

/// Yaw rate (rad/s) of the maneuver at time `t` into a horizon of length
/// `span` seconds.
fn yaw_rate(maneuver: CommandClass, omega: f64, t: f64, span: f64) -> f64 {
    match maneuver {
        CommandClass::L => omega,
        CommandClass::R => -omega,
        CommandClass::O if t < span / 2.0 => omega,
        CommandClass::O => -omega,
        CommandClass::S => 0.0,
    }
}

const SUBSTEPS: usize = 20;

/// Integrates a constant-speed path from the origin, returning the position
/// and heading at each waypoint. The yaw rate is piecewise constant over
/// substeps.
fn integrate_path(
    speed: f64,
    maneuver: CommandClass,
    omega: f64,
    dt: f64,
    horizon: usize,
) -> Vec<(Point, f64)> {
    let span = dt * horizon as f64;
    let h = dt / SUBSTEPS as f64;
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(horizon);
    for step in 0..horizon {
        for sub in 0..SUBSTEPS {
            let t = step as f64 * dt + (sub as f64 + 0.5) * h;
            let w = yaw_rate(maneuver, omega, t, span);
            let next = heading + w * h;
            if w.abs() < 1e-12 {
                x += speed * h * heading.cos();
                y += speed * h * heading.sin();
            } else {
                // exact arc at constant yaw rate
                x += speed / w * (next.sin() - heading.sin());
                y += speed / w * (heading.cos() - next.cos());
            }
            heading = next;
        }
        out.push(([x, y], heading));
    }
    out
}

fn command_for_yaw(yaw: f64) -> Command {
    if yaw > YAW_DEADBAND {
        Command::Left
    } else if yaw < -YAW_DEADBAND {
        Command::Right
    } else {
        Command::Straight
    }
}

fn frame_yaw_rates(
    rng: &mut ChaCha8Rng,
    maneuver: CommandClass,
    omega: f64,
    frames: usize,
) -> Vec<f64> {
    let mut yaw: Vec<f64> = (0..frames)
        .map(|_| rng.random_range(-YAW_DEADBAND / 2.0..YAW_DEADBAND / 2.0))
        .collect();
    let max_window = (MIN_COMMAND_FRAMES + 6).min(frames);
    match maneuver {
        CommandClass::L | CommandClass::R => {
            let w = rng.random_range(MIN_COMMAND_FRAMES..=max_window);
            let sign = if maneuver == CommandClass::L {
                1.0
            } else {
                -1.0
            };
            for v in &mut yaw[frames - w..] {
                *v = sign * omega;
            }
        }
        CommandClass::O => {
            let half_max = (frames / 2).min(MIN_COMMAND_FRAMES + 4);
            let wl = rng.random_range(MIN_COMMAND_FRAMES..=half_max);
            let wr = rng.random_range(MIN_COMMAND_FRAMES..=half_max);
            for v in &mut yaw[frames - wl - wr..frames - wr] {
                *v = omega;
            }
            for v in &mut yaw[frames - wr..] {
                *v = -omega;
            }
        }
        CommandClass::S => {
            // A few stray steering frames, always below the class threshold.
            let strays = rng.random_range(0..MIN_COMMAND_FRAMES);
            let picks = rand::seq::index::sample(rng, frames, strays * 2);
            for (j, f) in picks.into_iter().enumerate() {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                yaw[f] = sign * rng.random_range(0.05..0.1);
            }
        }
    }
    yaw
}

fn generate_clip(config: &WorldConfig, index: usize) -> (ClipRecord, ClipTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let bucket = Bucket::ALL[WeightedIndex::new(config.bucket_probs)
        .expect("validated")
        .sample(&mut rng)];
    let maneuver = CommandClass::ALL[WeightedIndex::new(config.maneuver_probs)
        .expect("validated")
        .sample(&mut rng)];
    let speed = match maneuver {
        CommandClass::L | CommandClass::R => rng.random_range(2.0f64..9.0),
        CommandClass::O => rng.random_range(6.0..15.0),
        CommandClass::S => rng.random_range(1.0..15.0),
    };
    let omega = match maneuver {
        CommandClass::L | CommandClass::R => rng.random_range(0.25..0.5),
        CommandClass::O => rng.random_range(0.12..0.25),
        CommandClass::S => 0.0,
    };

    let speed_jitter = Normal::new(0.0, 0.3).expect("finite");
    let yaw = frame_yaw_rates(&mut rng, maneuver, omega, config.frames);
    let mut frames: Vec<FrameState> = yaw
        .iter()
        .map(|&w| FrameState {
            speed: (speed + speed_jitter.sample(&mut rng)).max(0.0),
            command: command_for_yaw(w),
        })
        .collect();
    if let Some(last) = frames.last_mut() {
        last.speed = speed;
    }

    let clean = integrate_path(speed, maneuver, omega, config.dt, config.horizon);
    let mut sigma = config.noise_scale;
    if bucket.weather() == Weather::Rainy {
        sigma *= 2.0;
    }
    if bucket.lighting() == Lighting::Night {
        sigma *= 2.0;
    }
    let noise = Normal::new(0.0, sigma).expect("finite");
    let gt_future: Vec<Point> = clean
        .iter()
        .map(|(p, _)| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
        .collect();

    let id = format!("{}-{index:06}", config.id_prefix);
    let agents = generate_agents(&mut rng, config, maneuver, speed, &clean);

    let record = ClipRecord {
        id: id.clone(),
        weather: bucket.weather(),
        lighting: bucket.lighting(),
        frames,
        gt_future: gt_future.clone(),
        annotation: None,
    };
    let truth = ClipTruth {
        clip_id: id,
        maneuver,
        ego_future: gt_future,
        agents,
    };
    (record, truth)
}

fn constant_velocity(start: Point, velocity: Point, dt: f64, horizon: usize) -> Vec<Point> {
    (1..=horizon)
        .map(|t| {
            let s = t as f64 * dt;
            [start[0] + velocity[0] * s, start[1] + velocity[1] * s]
        })
        .collect()
}

fn generate_agents(
    rng: &mut ChaCha8Rng,
    config: &WorldConfig,
    maneuver: CommandClass,
    speed: f64,
    clean: &[(Point, f64)],
) -> Vec<AgentTruth> {
    let mut agents = Vec::new();
    let count = if config.agent_rate > 0.0 {
        Poisson::new(config.agent_rate)
            .expect("positive rate")
            .sample(rng) as usize
    } else {
        0
    };
    let heading_jitter = Normal::new(0.0, 0.15).expect("finite");
    for a in 0..count {
        let t_ref = rng.random_range(1..=config.horizon);
        let (anchor, heading) = clean[t_ref - 1];
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let lateral = side * rng.random_range(2.0..6.0);
        let normal = [-heading.sin(), heading.cos()];
        let agent_speed = speed * rng.random_range(0.6..1.2);
        let agent_heading = heading + heading_jitter.sample(rng);
        let velocity = [
            agent_speed * agent_heading.cos(),
            agent_speed * agent_heading.sin(),
        ];
        let back = t_ref as f64 * config.dt;
        let start = [
            anchor[0] + lateral * normal[0] - velocity[0] * back,
            anchor[1] + lateral * normal[1] - velocity[1] * back,
        ];
        agents.push(AgentTruth {
            agent_id: format!("a{a}"),
            start,
            velocity,
            trajectory: constant_velocity(start, velocity, config.dt, config.horizon),
        });
    }

    if maneuver != CommandClass::S {
        // Static obstacles on the straight path, 1 m apart.
        let step = speed * config.dt;
        let begin = step * rng.random_range(2.5..3.5);
        let count = (2.0 * step / OBSTACLE_SPACING).ceil() as usize + 1;
        let mut o = 0;
        for j in 0..count {
            let p = [begin + j as f64 * OBSTACLE_SPACING, 0.0];
            let clear = clean
                .iter()
                .all(|(q, _)| (p[0] - q[0]).hypot(p[1] - q[1]) >= OBSTACLE_CLEARANCE);
            if clear {
                agents.push(AgentTruth {
                    agent_id: format!("o{o}"),
                    start: p,
                    velocity: [0.0, 0.0],
                    trajectory: vec![p; config.horizon],
                });
                o += 1;
            }
        }
    }
    agents
}

/// Generates the pool records and their hidden truth. Clip `i` depends only
/// on `(seed, i)`.
pub fn generate(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let (clips, truth) = (0..config.n)
        .into_par_iter()
        .map(|i| generate_clip(config, i))
        .unzip();
    Ok(World { clips, truth })
}

/// Writes the pool file and the parallel truth file. Nothing is written if
/// the configuration is invalid, and a failure on the second file removes
/// the first.
pub fn generate_pool(config: &WorldConfig, pool_path: &Path, truth_path: &Path) -> Result<World> {
    let world = generate(config)?;
    let pool_bytes = fsutil::to_jsonl(&world.clips)?;
    let truth_bytes = fsutil::to_jsonl(&world.truth)?;
    fsutil::write_atomic(pool_path, &pool_bytes)?;
    if let Err(e) = fsutil::write_atomic(truth_path, &truth_bytes) {
        let _ = std::fs::remove_file(pool_path);
        return Err(e);
    }
    Ok(world)
}

pub fn load_truth(path: &Path) -> Result<HashMap<String, ClipTruth>> {
    let records: Vec<(usize, ClipTruth)> = fsutil::read_jsonl(path)?;
    let mut map = HashMap::with_capacity(records.len());
    for (_, t) in records {
        let id = t.clip_id.clone();
        if map.insert(id.clone(), t).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}

pub fn save_truth(truth: &[ClipTruth], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &fsutil::to_jsonl(truth)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Neighbors averaged per plan.
    pub k: usize,
    /// Agents farther than this from the ego at the current frame are not
    /// forecast.
    pub agent_radius: f64,
    /// Softmax temperature (m) turning endpoint errors into modality
    /// probabilities.
    pub softmax_temp: f64,
    pub modality_angle_deg: f64,
    pub speed_scale: f64,
    pub dt: f64,
    pub tau_c: usize,
    /// Distance under which a plan counts as a proxy collision.
    pub collision_radius: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            k: 5,
            agent_radius: 30.0,
            softmax_temp: 5.0,
            modality_angle_deg: 15.0,
            speed_scale: 15.0,
            dt: 0.5,
            tau_c: 4,
            collision_radius: 0.5,
        }
    }
}

const FEATURES: usize = 9;

/// Bucket one-hot, maneuver one-hot, mean speed / `speed_scale`.
pub fn clip_features(clip: &ClipRecord, cfg: &ToyConfig) -> [f64; FEATURES] {
    let mut f = [0.0; FEATURES];
    f[clip.bucket().index()] = 1.0;
    f[4 + classify_command(clip, cfg.tau_c).index()] = 1.0;
    f[8] = clip.mean_speed() / cfg.speed_scale;
    f
}

#[derive(Debug, Clone)]
struct Exemplar {
    id: String,
    features: [f64; FEATURES],
    future: Vec<Point>,
}

/// Nearest-neighbor planner over labeled clips. Immutable between trainings.
#[derive(Debug, Clone)]
pub struct ToyPlanner {
    cfg: ToyConfig,
    truth: std::sync::Arc<HashMap<String, ClipTruth>>,
    exemplars: Vec<Exemplar>,
}

impl ToyPlanner {
    pub fn new(cfg: ToyConfig, truth: std::sync::Arc<HashMap<String, ClipTruth>>) -> Self {
        ToyPlanner {
            cfg,
            truth,
            exemplars: Vec::new(),
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    /// False until trained on at least one clip; an untrained planner
    /// extrapolates at constant velocity.
    pub fn is_trained(&self) -> bool {
        !self.exemplars.is_empty()
    }

    pub fn exemplar_count(&self) -> usize {
        self.exemplars.len()
    }

    pub fn exemplar_ids(&self) -> impl Iterator<Item = &str> {
        self.exemplars.iter().map(|e| e.id.as_str())
    }

    /// Replaces the exemplar set with `labeled`.
    pub fn toy_train(&mut self, labeled: &[&ClipRecord]) -> Result<()> {
        let mut seen = HashSet::with_capacity(labeled.len());
        for clip in labeled {
            if !seen.insert(clip.id.as_str()) {
                return Err(Error::DuplicateId(clip.id.clone()));
            }
        }
        self.exemplars = labeled
            .iter()
            .map(|clip| Exemplar {
                id: clip.id.clone(),
                features: clip_features(clip, &self.cfg),
                future: clip.gt_future.clone(),
            })
            .collect();
        Ok(())
    }

    fn plan(&self, clip: &ClipRecord) -> Vec<Point> {
        let horizon = clip.gt_future.len();
        if self.exemplars.is_empty() {
            let speed = clip.frames.last().map_or(0.0, |f| f.speed);
            return (1..=horizon)
                .map(|t| [speed * self.cfg.dt * t as f64, 0.0])
                .collect();
        }
        let q = clip_features(clip, &self.cfg);
        let mut ranked: Vec<(f64, &Exemplar)> = self
            .exemplars
            .iter()
            .map(|e| {
                let d2: f64 = q
                    .iter()
                    .zip(&e.features)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (d2, e)
            })
            .collect();
        let k = self.cfg.k.max(1).min(ranked.len());
        let order = |a: &(f64, &Exemplar), b: &(f64, &Exemplar)| {
            a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id))
        };
        if k < ranked.len() {
            ranked.select_nth_unstable_by(k - 1, order);
        }
        let nearest = &ranked[..k];
        (0..horizon)
            .map(|t| {
                let mut p = [0.0, 0.0];
                for (_, e) in nearest {
                    p[0] += e.future[t][0];
                    p[1] += e.future[t][1];
                }
                [p[0] / k as f64, p[1] / k as f64]
            })
            .collect()
    }

    fn forecast(&self, agent: &AgentTruth, horizon: usize) -> Option<AgentForecast> {
        let d0 = agent.start[0].hypot(agent.start[1]);
        if d0 > self.cfg.agent_radius {
            return None;
        }
        let angle = self.cfg.modality_angle_deg.to_radians();
        let trajs: Vec<Vec<Point>> = [-angle, 0.0, angle]
            .iter()
            .map(|&a| {
                let (s, c) = a.sin_cos();
                let v = [
                    c * agent.velocity[0] - s * agent.velocity[1],
                    s * agent.velocity[0] + c * agent.velocity[1],
                ];
                constant_velocity(agent.start, v, self.cfg.dt, horizon)
            })
            .collect();
        let truth_end = *agent.trajectory.last()?;
        let logits: Vec<f64> = trajs
            .iter()
            .map(|t| {
                let end = t[horizon - 1];
                -(end[0] - truth_end[0]).hypot(end[1] - truth_end[1]) / self.cfg.softmax_temp
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Some(AgentForecast {
            agent_id: agent.agent_id.clone(),
            confidence: (-d0 / self.cfg.agent_radius).exp(),
            modality_probs: exps.iter().map(|e| e / total).collect(),
            modality_trajs: trajs,
        })
    }

    pub fn toy_predict(&self, clip: &ClipRecord) -> Result<ClipPrediction> {
        let truth = self
            .truth
            .get(&clip.id)
            .ok_or_else(|| Error::UnknownId(clip.id.clone()))?;
        let horizon = clip.gt_future.len();
        Ok(ClipPrediction {
            clip_id: clip.id.clone(),
            ego_plan: self.plan(clip),
            agents: truth
                .agents
                .iter()
                .filter_map(|a| self.forecast(a, horizon))
                .collect(),
        })
    }
}

impl PredictionProvider for ToyPlanner {
    fn train(&mut self, _round: usize, labeled: &[&ClipRecord]) -> Result<()> {
        self.toy_train(labeled)
    }

    fn predict(&self, _round: usize, clips: &[&ClipRecord]) -> Result<Vec<ClipPrediction>> {
        clips.par_iter().map(|c| self.toy_predict(c)).collect()
    }
}

/// Evaluation of one held-out clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEval {
    pub clip_id: String,
    pub de: f64,
    pub step_errors: Vec<f64>,
    /// Closest approach of the plan to any true agent at equal time steps.
    pub min_agent_distance: f64,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub clips: usize,
    pub avg_de: f64,
    /// Percentage of clips with a proxy collision.
    pub proxy_collision_rate: f64,
    #[serde(skip)]
    pub per_clip: Vec<ClipEval>,
}

/// Scores given plans against the truth. Used directly for replay-style
/// checks and by [`heldout_eval`].
pub fn evaluate_plans(
    plans: &[ClipPrediction],
    clips: &HashMap<&str, &ClipRecord>,
    truth: &HashMap<String, ClipTruth>,
    collision_radius: f64,
) -> Result<EvalSummary> {
    let per_clip: Vec<ClipEval> = plans
        .iter()
        .map(|p| {
            let clip = clips
                .get(p.clip_id.as_str())
                .ok_or_else(|| Error::UnknownId(p.clip_id.clone()))?;
            let t = truth
                .get(&p.clip_id)
                .ok_or_else(|| Error::UnknownId(p.clip_id.clone()))?;
            let step_errors = criteria::step_errors(&p.ego_plan, &clip.gt_future)?;
            let de = criteria::displacement_error(&p.ego_plan, &clip.gt_future)?;
            let min_agent_distance = t
                .agents
                .iter()
                .flat_map(|a| {
                    p.ego_plan
                        .iter()
                        .zip(&a.trajectory)
                        .map(|(e, q)| (e[0] - q[0]).hypot(e[1] - q[1]))
                })
                .fold(f64::INFINITY, f64::min);
            Ok(ClipEval {
                clip_id: p.clip_id.clone(),
                de,
                step_errors,
                min_agent_distance,
                collided: min_agent_distance < collision_radius,
            })
        })
        .collect::<Result<_>>()?;
    let n = per_clip.len().max(1) as f64;
    Ok(EvalSummary {
        clips: per_clip.len(),
        avg_de: per_clip.iter().map(|c| c.de).sum::<f64>() / n,
        proxy_collision_rate: 100.0 * per_clip.iter().filter(|c| c.collided).count() as f64 / n,
        per_clip,
    })
}

/// Average displacement error and proxy collision rate of the planner on
/// clips it was not trained on.
pub fn heldout_eval(
    planner: &ToyPlanner,
    heldout: &[&ClipRecord],
    truth: &HashMap<String, ClipTruth>,
) -> Result<EvalSummary> {
    let trained: HashSet<&str> = planner.exemplar_ids().collect();
    if let Some(c) = heldout.iter().find(|c| trained.contains(c.id.as_str())) {
        return Err(Error::HeldoutOverlap(c.id.clone()));
    }
    let plans = planner.predict(0, heldout)?;
    let by_id: HashMap<&str, &ClipRecord> = heldout.iter().map(|c| (c.id.as_str(), *c)).collect();
    evaluate_plans(&plans, &by_id, truth, planner.cfg.collision_radius)
}
