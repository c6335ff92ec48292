//! Compares active selection with random selection on a few seeded worlds.
//!
//! cargo run --release -p drivesel --example closed_loop -- [seeds]

use drivesel::active::{ActiveConfig, InitMode};
use drivesel::experiment::{closed_loop, evaluate_labeled, SplitWorld};
use drivesel::report::RunKind;
use drivesel::synthworld::{ToyConfig, WorldConfig};

fn main() -> drivesel::Result<()> {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let toy = ToyConfig::default();
    for seed in 0..seeds {
        let world = SplitWorld::generate(
            &WorldConfig {
                n: 2000,
                seed,
                ..Default::default()
            },
            1000,
        )?;
        let mut cfg = ActiveConfig::ten_percent_schedule(world.pool.len());
        cfg.seed = seed;
        let active = closed_loop(&world, &cfg, toy, RunKind::Active)?;
        let random = closed_loop(&world, &cfg, toy, RunKind::Random)?;
        let a = active.evaluation.unwrap().heldout;
        let r = random.evaluation.unwrap().heldout;

        let init_cfg = ActiveConfig {
            iterations: 0,
            budget: cfg.n0,
            ..cfg.clone()
        };
        let ed = drivesel::active::initialize(&world.pool, &init_cfg)?;
        let rnd = drivesel::active::initialize(
            &world.pool,
            &ActiveConfig {
                init_mode: InitMode::Random,
                ..init_cfg
            },
        )?;
        let ed_eval = evaluate_labeled(
            &world.pool,
            &ed.ids,
            &world.heldout,
            world.truth.clone(),
            toy,
        )?;
        let rnd_eval = evaluate_labeled(
            &world.pool,
            &rnd.ids,
            &world.heldout,
            world.truth.clone(),
            toy,
        )?;
        println!(
            "seed {seed}: 30% DE active {:.4} random {:.4} | CR active {:.2}% random {:.2}% | 10% CR ed {:.2}% random {:.2}% DE ed {:.4} random {:.4}",
            a.avg_de, r.avg_de, a.proxy_collision_rate, r.proxy_collision_rate,
            ed_eval.heldout.proxy_collision_rate, rnd_eval.heldout.proxy_collision_rate,
            ed_eval.heldout.avg_de, rnd_eval.heldout.avg_de,
        );
    }
    Ok(())
}
