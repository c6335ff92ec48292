//! Randomized invariants, 1000 cases per property.

use std::collections::{HashMap, HashSet};

use drivesel::active::{self, ActiveConfig, InitMode, PredictionProvider};
use drivesel::criteria::{
    agent_uncertainty, displacement_error, entropy, min_max_normalize, rank_and_take,
    soft_collision, AgentForecast, ClipPrediction,
};
use drivesel::diversity::{
    ego_diversity_init, first_level_shares, integerize, select_by_speed, speed_pick_indices,
};
use drivesel::pool::{
    classify_command, load_pool, load_selection, save_selection, weather_lighting_bucket, Bucket,
    ClipRecord, Command, CommandClass, FrameState, Lighting, Point, Pool, SelectionState, Weather,
};
use drivesel::report::{
    l2_at_k_uniad, l2_at_k_vad, overlap_matrix, stratified_metrics, StepErrors,
};
use drivesel::synthworld::{self, ClipEval, ToyConfig, ToyPlanner, WorldConfig};
use proptest::prelude::*;

use super::HashProvider;

const CASES: u32 = 1000;
const H: usize = 6;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(CASES)
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        Just(Command::Left),
        Just(Command::Right),
        Just(Command::Straight)
    ]
}

fn frames() -> impl Strategy<Value = Vec<FrameState>> {
    prop::collection::vec(
        (0.0f64..20.0, command()).prop_map(|(speed, command)| FrameState { speed, command }),
        1..16,
    )
}

fn clip_body() -> impl Strategy<Value = (Weather, Lighting, Vec<FrameState>, Vec<Point>)> {
    (
        prop_oneof![Just(Weather::Sunny), Just(Weather::Rainy)],
        prop_oneof![Just(Lighting::Day), Just(Lighting::Night)],
        frames(),
        prop::collection::vec(prop::array::uniform2(-50.0f64..50.0), H),
    )
}

fn pool_of(max: usize) -> impl Strategy<Value = Pool> {
    prop::collection::vec(clip_body(), 1..max).prop_map(|bodies| {
        let clips = bodies
            .into_iter()
            .enumerate()
            .map(|(i, (weather, lighting, frames, gt_future))| ClipRecord {
                id: format!("c{i:04}"),
                weather,
                lighting,
                frames,
                gt_future,
                annotation: if i % 3 == 0 {
                    Some(vec![i as u8, 0, 255])
                } else {
                    None
                },
            })
            .collect();
        Pool::new(clips, H).unwrap()
    })
}

/// Splits pool ids into successive rounds using `cuts` as sizes.
fn rounds_from(pool: &Pool, order_seed: u64, cuts: &[usize]) -> Vec<Vec<String>> {
    let mut ids: Vec<String> = pool.ids().map(String::from).collect();
    // deterministic shuffle
    let n = ids.len();
    for i in (1..n).rev() {
        let j = (order_seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(i as u64)
            >> 33) as usize
            % (i + 1);
        ids.swap(i, j);
    }
    let mut out = Vec::new();
    let mut rest = &ids[..];
    for &c in cuts {
        let take = c.min(rest.len());
        out.push(rest[..take].to_vec());
        rest = &rest[take..];
    }
    out
}

fn traj() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::array::uniform2(-10.0f64..10.0), H)
}

fn probs(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, m).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn agent_forecast() -> impl Strategy<Value = AgentForecast> {
    (1usize..4)
        .prop_flat_map(|m| (0.0f64..=1.0, probs(m), prop::collection::vec(traj(), m)))
        .prop_map(
            |(confidence, modality_probs, modality_trajs)| AgentForecast {
                agent_id: "a".into(),
                confidence,
                modality_probs,
                modality_trajs,
            },
        )
}

fn prediction() -> impl Strategy<Value = ClipPrediction> {
    (traj(), prop::collection::vec(agent_forecast(), 0..5)).prop_map(|(ego_plan, agents)| {
        ClipPrediction {
            clip_id: "c".into(),
            ego_plan,
            agents,
        }
    })
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

// ---------------------------------------------------------------- pool

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ac9_pool_partition(body in clip_body(), tau in 1usize..8) {
        let (weather, lighting, frames, gt_future) = body;
        let clip = ClipRecord { id: "x".into(), weather, lighting, frames, gt_future, annotation: None };
        let bucket = weather_lighting_bucket(&clip);
        prop_assert_eq!(bucket.lighting(), lighting);
        prop_assert_eq!(bucket.weather(), weather);
        prop_assert_eq!(Bucket::ALL.iter().filter(|b| **b == bucket).count(), 1);

        let left = clip.frames.iter().filter(|f| f.command == Command::Left).count();
        let right = clip.frames.iter().filter(|f| f.command == Command::Right).count();
        let expected = match (left >= tau, right >= tau) {
            (true, true) => CommandClass::O,
            (true, false) => CommandClass::L,
            (false, true) => CommandClass::R,
            (false, false) => CommandClass::S,
        };
        prop_assert_eq!(classify_command(&clip, tau), expected);
    }

    #[test]
    fn ac9_pool_state_invariants(pool in pool_of(40), seed in any::<u64>(), cuts in prop::collection::vec(0usize..10, 0..6)) {
        let mut state = SelectionState::new(&pool);
        for ids in rounds_from(&pool, seed, &cuts) {
            state.add_round(ids).unwrap();
            let labeled: HashSet<&String> = state.labeled().iter().collect();
            let unlabeled: HashSet<&String> = state.unlabeled().iter().collect();
            prop_assert!(labeled.is_disjoint(&unlabeled));
            prop_assert_eq!(labeled.len() + unlabeled.len(), pool.len());
            prop_assert_eq!(labeled.len(), state.labeled().len());
            let from_rounds: usize = state.rounds().iter().map(|r| r.ids.len()).sum();
            prop_assert_eq!(from_rounds, labeled.len());
            for (i, r) in state.rounds().iter().enumerate() {
                prop_assert_eq!(r.round, i);
            }
        }
        // re-adding a labeled id is rejected and leaves the state unchanged
        if let Some(id) = state.labeled().first().cloned() {
            let before = state.clone();
            prop_assert!(state.add_round(vec![id]).is_err());
            prop_assert_eq!(&state, &before);
        }
    }

    #[test]
    fn ac9_pool_round_trip(pool in pool_of(12), seed in any::<u64>(), cuts in prop::collection::vec(0usize..5, 0..4)) {
        let dir = tempfile::tempdir().unwrap();
        let pool_path = dir.path().join("pool.jsonl");
        let sel_path = dir.path().join("selection.json");
        pool.save(&pool_path).unwrap();
        let (loaded, empty) = load_pool(&pool_path, H).unwrap();
        prop_assert_eq!(&loaded, &pool);
        prop_assert!(empty.labeled().is_empty());

        let mut state = SelectionState::new(&pool);
        for ids in rounds_from(&pool, seed, &cuts) {
            state.add_round(ids).unwrap();
        }
        save_selection(&state, &sel_path).unwrap();
        prop_assert_eq!(load_selection(&loaded, &sel_path).unwrap(), state);
    }
}

// ---------------------------------------------------------------- diversity

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ac9_diversity_apportionment_totals(
        raw in prop::collection::vec((0.0f64..1.0, 0usize..30), 1..10),
        frac in 0.0f64..=1.0,
    ) {
        let shares: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let caps: Vec<usize> = raw.iter().map(|r| r.1).collect();
        let cap_total: usize = caps.iter().sum();
        let total = (cap_total as f64 * frac).floor() as usize;
        let alloc = integerize(&shares, total, &caps).unwrap();
        prop_assert_eq!(alloc.iter().sum::<usize>(), total);
        for (a, c) in alloc.iter().zip(&caps) {
            prop_assert!(a <= c);
        }
        prop_assert!(integerize(&shares, cap_total + 1, &caps).is_err());
    }

    #[test]
    fn ac9_diversity_init_size(pool in pool_of(80), n0 in 1usize..100, tau in 1usize..6) {
        let sel = ego_diversity_init(&pool, n0, 0.5, tau).unwrap();
        prop_assert_eq!(sel.ids.len(), n0.min(pool.len()));
        let unique: HashSet<&String> = sel.ids.iter().collect();
        prop_assert_eq!(unique.len(), sel.ids.len());
        for a in &sel.allocations {
            prop_assert!(a.allocated <= a.available);
        }
        prop_assert_eq!(&ego_diversity_init(&pool, n0, 0.5, tau).unwrap(), &sel);
    }

    #[test]
    fn ac9_diversity_gamma_flattens(big in 2usize..2000, ratio in 1.5f64..50.0) {
        let small = ((big as f64 / ratio).floor() as usize).max(1);
        prop_assume!(small < big);
        let counts = [big, small, 0, 0];
        // budget large enough that rounding cannot flip the comparison
        let n0 = (big + small) / 2;
        let caps = counts;
        let minor = |g: f64| {
            let alloc = integerize(&first_level_shares(&counts, g).unwrap(), n0, &caps).unwrap();
            alloc[1] as f64 / n0 as f64
        };
        prop_assert!(minor(0.5) >= minor(1.0));
    }

    #[test]
    fn ac9_diversity_speed_picks(m in 1usize..500, k_frac in 0.0f64..=1.0) {
        let k = (m as f64 * k_frac).floor() as usize;
        let picks = speed_pick_indices(m, k).unwrap();
        prop_assert_eq!(picks.len(), k);
        prop_assert!(picks.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(picks.iter().all(|&i| i < m));
        let items: Vec<usize> = (0..m).collect();
        prop_assert_eq!(select_by_speed(&items, k).unwrap(), picks);
    }
}

// ---------------------------------------------------------------- criteria

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ac9_criteria_de_metric(a in traj(), b in traj(), c in traj()) {
        let ab = displacement_error(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(displacement_error(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - displacement_error(&b, &a).unwrap()).abs() < 1e-12);
        let ac = displacement_error(&a, &c).unwrap();
        let cb = displacement_error(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
        if a != b {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn ac9_criteria_sc_bounds_and_monotone(
        p in prediction(),
        eps in 0.0f64..=1.0,
        pick in any::<prop::sample::Index>(),
        t in 0usize..H,
        lambda in 0.0f64..=1.0,
    ) {
        let sc = soft_collision(&p, eps);
        prop_assert!(sc >= 0.0);
        prop_assert!(sc <= H as f64 + 1e-12);
        if p.agents.is_empty() {
            return Ok(());
        }
        // pull one waypoint of one agent's drawn modality toward the ego
        let mut closer = p.clone();
        let a = &mut closer.agents[pick.index(p.agents.len())];
        let m = a.best_modality();
        let ego = closer.ego_plan[t];
        let w = &mut a.modality_trajs[m][t];
        *w = [ego[0] + lambda * (w[0] - ego[0]), ego[1] + lambda * (w[1] - ego[1])];
        prop_assert!(soft_collision(&closer, eps) >= sc - 1e-12);
    }

    #[test]
    fn ac9_criteria_au(p in prediction(), delta in 0.0f64..10.0) {
        let au = agent_uncertainty(&p, delta).unwrap();
        let plain: f64 = p
            .agents
            .iter()
            .filter(|a| {
                let traj = &a.modality_trajs[a.best_modality()];
                p.ego_plan.iter().zip(traj).map(|(e, w)| dist(*e, *w)).fold(f64::INFINITY, f64::min) <= delta
            })
            .map(|a| entropy(&a.modality_probs))
            .sum();
        // weights exp(delta - d) are at least 1 for qualifying agents
        prop_assert!(au >= plain - 1e-12);

        let mut one_hot = p.clone();
        for a in &mut one_hot.agents {
            let m = a.modality_probs.len();
            a.modality_probs = (0..m).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        }
        prop_assert_eq!(agent_uncertainty(&one_hot, delta).unwrap(), 0.0);
    }

    #[test]
    fn ac9_criteria_entropy_bound(ps in (1usize..12).prop_flat_map(probs)) {
        let n = ps.len();
        let h = entropy(&ps);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (n as f64).ln() + 1e-9);
        let uniform = vec![1.0 / n as f64; n];
        prop_assert!((entropy(&uniform) - (n as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn ac9_criteria_normalization(v in prop::collection::vec(-1e3f64..1e3, 0..50)) {
        let once = min_max_normalize(&v);
        prop_assert_eq!(once.len(), v.len());
        prop_assert!(once.iter().all(|x| (0.0..=1.0).contains(x)));
        let twice = min_max_normalize(&once);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ac9_criteria_rank_invariance(
        levels in prop::collection::vec(0u32..40, 1..200),
        n_frac in 0.0f64..=1.0,
    ) {
        let ids: Vec<String> = (0..levels.len()).map(|i| format!("id{:03}", (i * 37) % 1000)).collect();
        let n = (levels.len() as f64 * n_frac) as usize;
        // multiples of 1/8 keep the affine map exact
        let base: Vec<(&str, f64)> = ids.iter().zip(&levels).map(|(i, l)| (i.as_str(), *l as f64 / 8.0)).collect();
        let mapped: Vec<(&str, f64)> = base.iter().map(|(i, s)| (*i, 2.0 * s + 1.0)).collect();
        let top = rank_and_take(&base, n).unwrap();
        prop_assert_eq!(&top, &rank_and_take(&mapped, n).unwrap());

        let mut oracle: Vec<(&str, f64)> = base.clone();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        let expected: Vec<String> = oracle.iter().take(n).map(|(i, _)| i.to_string()).collect();
        prop_assert_eq!(top, expected);
    }
}

// ---------------------------------------------------------------- loop

/// Records which clips it was asked about.
struct Spy {
    inner: HashProvider,
    asked: std::cell::RefCell<Vec<(usize, Vec<String>)>>,
}

impl PredictionProvider for Spy {
    fn train(&mut self, round: usize, labeled: &[&ClipRecord]) -> drivesel::Result<()> {
        self.inner.train(round, labeled)
    }

    fn predict(
        &self,
        round: usize,
        clips: &[&ClipRecord],
    ) -> drivesel::Result<Vec<ClipPrediction>> {
        self.asked
            .borrow_mut()
            .push((round, clips.iter().map(|c| c.id.clone()).collect()));
        self.inner.predict(round, clips)
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ac9_loop_budget_and_monotone(
        pool in pool_of(40),
        n0_frac in 0.0f64..=1.0,
        iterations in 0usize..4,
        per_round in 0usize..8,
        seed in any::<u64>(),
        random_init in any::<bool>(),
    ) {
        let n = pool.len();
        let n0 = ((n as f64 * n0_frac) as usize).clamp(1, n);
        let cfg = ActiveConfig {
            budget: n0 + iterations * per_round,
            n0,
            iterations,
            per_round,
            seed,
            init_mode: if random_init { InitMode::Random } else { InitMode::EgoDiversity },
            ..Default::default()
        };
        let mut spy = Spy { inner: HashProvider::default(), asked: Default::default() };
        let out = active::run(&pool, &mut spy, &cfg).unwrap();
        prop_assert_eq!(out.state.labeled().len(), cfg.budget.min(n));
        let mut labeled_before: HashSet<String> = out.state.rounds()[0].ids.iter().cloned().collect();
        let asked = spy.asked.borrow();
        for (round, ids) in asked.iter() {
            // only unlabeled clips are scored
            prop_assert!(ids.iter().all(|i| !labeled_before.contains(i)));
            prop_assert_eq!(ids.len(), n - labeled_before.len());
            let picked = &out.state.rounds()[*round].ids;
            prop_assert_eq!(picked.len(), per_round.min(n - labeled_before.len()));
            labeled_before.extend(picked.iter().cloned());
        }
        let again = active::run(&pool, &mut HashProvider::default(), &cfg).unwrap();
        prop_assert_eq!(again.state, out.state);
    }
}

// ---------------------------------------------------------------- synthworld

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ac9_synthworld_determinism(seed in any::<u64>(), n in 1usize..4) {
        let cfg = WorldConfig { n, seed, ..Default::default() };
        let a = synthworld::generate(&cfg).unwrap();
        let b = synthworld::generate(&cfg).unwrap();
        prop_assert_eq!(&a.clips, &b.clips);
        prop_assert_eq!(&a.truth, &b.truth);
        for c in &a.clips {
            prop_assert!(c.validate(cfg.horizon).is_ok());
        }
    }

    #[test]
    fn ac9_synthworld_forecast_validity(seed in any::<u64>(), train in 0usize..3) {
        let w = synthworld::generate(&WorldConfig { n: 4, seed, agent_rate: 4.0, ..Default::default() }).unwrap();
        let truth = std::sync::Arc::new(w.truth_map());
        let mut planner = ToyPlanner::new(ToyConfig::default(), truth);
        let labeled: Vec<&ClipRecord> = w.clips.iter().take(train).collect();
        planner.toy_train(&labeled).unwrap();
        for clip in &w.clips {
            let p = planner.toy_predict(clip).unwrap();
            prop_assert!(p.validate(H).is_ok());
            prop_assert_eq!(&p.clip_id, &clip.id);
            for a in &p.agents {
                prop_assert!((a.modality_probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!((0.0..=1.0).contains(&a.confidence));
            }
        }
    }
}

// ---------------------------------------------------------------- report

proptest! {
    #![proptest_config(config())]

    #[test]
    fn ac9_report_convention_agreement(c in 0.0f64..10.0, tail in prop::collection::vec(0.0f64..10.0, 6), k in 1u32..=3) {
        let constant = StepErrors::new(&[c; 6]).unwrap();
        prop_assert!((l2_at_k_uniad(&constant, k).unwrap() - l2_at_k_vad(&constant, k).unwrap()).abs() < 1e-12);
        // only the first 2k entries matter to either convention
        let prefix = 2 * k as usize;
        let mut v = [c; 6];
        v[prefix..].copy_from_slice(&tail[prefix..]);
        let e = StepErrors::new(&v).unwrap();
        prop_assert_eq!(l2_at_k_uniad(&e, k).unwrap(), c);
        prop_assert!((l2_at_k_vad(&e, k).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn ac9_report_vad_bounds(v in prop::collection::vec(0.0f64..10.0, 6), k in 1u32..=3) {
        let e = StepErrors::new(&v).unwrap();
        let head = &v[..2 * k as usize];
        let lo = head.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = head.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vad = l2_at_k_vad(&e, k).unwrap();
        prop_assert!(vad >= lo - 1e-12 && vad <= hi + 1e-12);
    }

    #[test]
    fn ac9_report_overlap_symmetry(size in 1usize..20, picks in prop::collection::vec(prop::collection::btree_set(0u32..40, 1..20), 2..5)) {
        // trim every set to a common size
        let size = picks.iter().map(|s| s.len()).min().unwrap().min(size);
        let sets: Vec<(String, Vec<String>)> = picks
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("s{i}"), s.iter().take(size).map(|x| x.to_string()).collect()))
            .collect();
        let m = overlap_matrix(&sets).unwrap();
        for i in 0..sets.len() {
            prop_assert_eq!(m.rates[i][i], 1.0);
            for j in 0..sets.len() {
                prop_assert!((0.0..=1.0).contains(&m.rates[i][j]));
                prop_assert_eq!(m.rates[i][j], m.rates[j][i]);
            }
        }
    }

    #[test]
    fn ac9_report_stratified_weighted_mean(pool in pool_of(30), des in prop::collection::vec(0.0f64..5.0, 30), hits in prop::collection::vec(any::<bool>(), 30)) {
        let results: Vec<ClipEval> = pool
            .clips()
            .iter()
            .enumerate()
            .map(|(i, c)| ClipEval {
                clip_id: c.id.clone(),
                de: des[i],
                step_errors: vec![des[i]; H],
                min_agent_distance: 1.0,
                collided: hits[i],
            })
            .collect();
        let table = stratified_metrics(&results, &pool, 4).unwrap();
        let rows: HashMap<&str, _> = table.iter().map(|r| (r.key.as_str(), r)).collect();
        let all = rows["All"];
        prop_assert_eq!(all.clips, pool.len());
        for group in [["Day", "Night"], ["Sunny", "Rainy"]] {
            let (mut n, mut de, mut cr) = (0usize, 0.0, 0.0);
            for key in group {
                if let Some(r) = rows.get(key) {
                    n += r.clips;
                    de += r.avg_de * r.clips as f64;
                    cr += r.proxy_collision_rate * r.clips as f64;
                }
            }
            prop_assert_eq!(n, all.clips);
            prop_assert!((de / n as f64 - all.avg_de).abs() < 1e-9);
            prop_assert!((cr / n as f64 - all.proxy_collision_rate).abs() < 1e-9);
        }
    }
}
