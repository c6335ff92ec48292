use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use drivesel::active::{self, ActiveConfig, FileProvider, PredictionProvider};
use drivesel::criteria::{self, ClipPrediction};
use drivesel::experiment::{evaluate_labeled, heldout_config};
use drivesel::fsutil;
use drivesel::pool::{self, Bucket, ClipRecord, Pool, Round, SelectionState};
use drivesel::report::{
    emit_report, overlap_matrix, NamedManifest, Report, ReportFormat, RunKind, RunManifest,
};
use drivesel::synthworld::{self, ToyPlanner};
use drivesel::Error;
use serde::Deserialize;
use toml::Value;

use crate::config::{echo, CliConfig, ConfigBuilder};
use crate::{
    Baseline, GenArgs, GlobalOpts, InitArgs, ProviderArg, ReportArgs, RunArgs, ScoreArgs,
    ScoringArgs, SelectArgs, UsageError,
};

fn resolve(global: &GlobalOpts, flags: Vec<(&str, Option<Value>)>) -> anyhow::Result<CliConfig> {
    let mut b = ConfigBuilder::from_file(global.config.as_deref())?;
    for o in &global.overrides {
        b.set(o)?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            b.insert(key, v)?;
        }
    }
    let config = b.resolve()?;
    echo(&config)?;
    Ok(config)
}

fn int(v: Option<usize>) -> Option<Value> {
    v.map(|x| Value::Integer(x as i64))
}

fn seed(v: Option<u64>) -> Option<Value> {
    v.map(|x| Value::Integer(x as i64))
}

fn float(v: Option<f64>) -> Option<Value> {
    v.map(Value::Float)
}

fn enum_value<T: clap::ValueEnum>(v: Option<T>) -> Option<Value> {
    v.and_then(|x| x.to_possible_value())
        .map(|p| Value::String(p.get_name().to_string()))
}

fn scoring_flags(s: &ScoringArgs) -> Vec<(&'static str, Option<Value>)> {
    vec![
        ("active.alpha", float(s.alpha)),
        ("active.beta", float(s.beta)),
        ("active.eps_a", float(s.eps_a)),
        ("active.delta_d", float(s.delta_d)),
        ("active.criterion", enum_value(s.criterion)),
    ]
}

fn write_config(dir: &Path, config: &CliConfig) -> anyhow::Result<()> {
    let text = toml::to_string(config)?;
    fsutil::write_atomic(&dir.join("config.toml"), text.as_bytes())?;
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn gen(global: &GlobalOpts, args: GenArgs) -> anyhow::Result<()> {
    let config = resolve(
        global,
        vec![
            ("world.n", int(args.n)),
            ("world.seed", seed(args.seed)),
            ("eval.heldout_n", int(args.heldout)),
        ],
    )?;
    config.world.validate().map_err(|e| UsageError(e.into()))?;

    // Generate everything before touching the disk.
    let world = synthworld::generate(&config.world)?;
    let heldout = match config.eval.heldout_n {
        0 => None,
        n => Some(synthworld::generate(&heldout_config(&config.world, n))?),
    };

    create_dir(&args.out_dir)?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![
        (
            args.out_dir.join("pool.jsonl"),
            fsutil::to_jsonl(&world.clips)?,
        ),
        (
            args.out_dir.join("truth.jsonl"),
            fsutil::to_jsonl(&world.truth)?,
        ),
    ];
    if let Some(h) = &heldout {
        files.push((
            args.out_dir.join("heldout.jsonl"),
            fsutil::to_jsonl(&h.clips)?,
        ));
        files.push((
            args.out_dir.join("heldout_truth.jsonl"),
            fsutil::to_jsonl(&h.truth)?,
        ));
    }
    files.push((
        args.out_dir.join("config.toml"),
        toml::to_string(&config)?.into_bytes(),
    ));

    let mut written = Vec::new();
    for (path, bytes) in &files {
        if let Err(e) = fsutil::write_atomic(path, bytes) {
            for p in written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e.into());
        }
        written.push(path);
    }
    eprintln!(
        "wrote {} pool clips and {} held-out clips to {}",
        world.clips.len(),
        heldout.map_or(0, |h| h.clips.len()),
        args.out_dir.display()
    );
    Ok(())
}

fn load_pool(path: &Path, config: &CliConfig) -> anyhow::Result<Pool> {
    let (pool, _) = pool::load_pool(path, config.world.horizon)
        .with_context(|| format!("loading pool {}", path.display()))?;
    Ok(pool)
}

pub fn init(global: &GlobalOpts, args: InitArgs) -> anyhow::Result<()> {
    let config = resolve(
        global,
        vec![
            ("active.init_mode", enum_value(args.mode)),
            ("active.n0", int(args.n0)),
            ("active.gamma", float(args.gamma)),
            ("active.tau_c", int(args.tau_c)),
            ("active.seed", seed(args.seed)),
        ],
    )?;
    let pool = load_pool(&args.pool, &config)?;
    let mut active = config.active.clone();
    if active.n0 == 0 {
        active.n0 = ActiveConfig::ten_percent_schedule(pool.len()).n0;
    }
    if active.n0 > pool.len() {
        return Err(Error::BudgetExceedsPool {
            requested: active.n0,
            available: pool.len(),
        }
        .into());
    }
    let outcome = active::initialize(&pool, &active)?;
    if !outcome.allocations.is_empty() {
        let mut totals = [0usize; 4];
        for a in &outcome.allocations {
            totals[a.bucket.index()] += a.allocated;
        }
        let shown: Vec<String> = Bucket::ALL
            .iter()
            .map(|b| format!("{b}={}", totals[b.index()]))
            .collect();
        eprintln!("bucket totals: {}", shown.join(" "));
    }
    let mut state = SelectionState::new(&pool);
    state.add_round(outcome.ids)?;
    pool::save_selection(&state, &args.out)?;
    eprintln!(
        "selected {} of {} clips -> {}",
        state.labeled().len(),
        pool.len(),
        args.out.display()
    );
    Ok(())
}

fn load_state(pool: &Pool, path: Option<&Path>) -> anyhow::Result<SelectionState> {
    Ok(match path {
        Some(p) => pool::load_selection(pool, p)
            .with_context(|| format!("loading selection {}", p.display()))?,
        None => SelectionState::new(pool),
    })
}

pub fn score(global: &GlobalOpts, args: ScoreArgs) -> anyhow::Result<()> {
    let config = resolve(global, scoring_flags(&args.scoring))?;
    config
        .active
        .scoring()
        .validate()
        .map_err(|e| UsageError(e.into()))?;
    let pool = load_pool(&args.pool, &config)?;
    let state = load_state(&pool, args.selection.as_deref())?;
    let predictions = criteria::load_predictions(&args.predictions, &pool)
        .with_context(|| format!("loading predictions {}", args.predictions.display()))?;
    let scores = criteria::score_clips(
        &pool,
        state.unlabeled(),
        &predictions,
        &config.active.scoring(),
    )?;
    criteria::save_scores(&scores, &args.out)?;
    eprintln!(
        "scored {} unlabeled clips -> {}",
        scores.len(),
        args.out.display()
    );
    Ok(())
}

pub fn select(global: &GlobalOpts, args: SelectArgs) -> anyhow::Result<()> {
    let config = resolve(global, vec![])?;
    let pool = load_pool(&args.pool, &config)?;
    let mut state = load_state(&pool, Some(&args.selection))?;
    let scores = criteria::load_scores(&args.scores)
        .with_context(|| format!("loading scores {}", args.scores.display()))?;
    if args.n_itr > state.unlabeled().len() {
        return Err(Error::BudgetExceedsPool {
            requested: args.n_itr,
            available: state.unlabeled().len(),
        }
        .into());
    }
    let scored: HashSet<&str> = scores.iter().map(|s| s.clip_id.as_str()).collect();
    if let Some(id) = scores.iter().find(|s| !pool.contains(&s.clip_id)) {
        return Err(Error::UnknownId(id.clip_id.clone()).into());
    }
    if let Some(id) = state
        .unlabeled()
        .iter()
        .find(|id| !scored.contains(id.as_str()))
    {
        bail!("no score for unlabeled clip `{id}`");
    }
    let ids = active::select_top(&scores, &state, args.n_itr)?;
    state.add_round(ids)?;
    let out = args.out.unwrap_or(args.selection);
    pool::save_selection(&state, &out)?;
    eprintln!(
        "round {}: {} labeled, {} unlabeled -> {}",
        state.next_round() - 1,
        state.labeled().len(),
        state.unlabeled().len(),
        out.display()
    );
    Ok(())
}

/// Writes every batch of predictions it forwards.
struct Dumping<'a> {
    inner: &'a mut dyn PredictionProvider,
    dir: PathBuf,
}

impl PredictionProvider for Dumping<'_> {
    fn train(&mut self, round: usize, labeled: &[&ClipRecord]) -> drivesel::Result<()> {
        self.inner.train(round, labeled)
    }

    fn predict(
        &self,
        round: usize,
        clips: &[&ClipRecord],
    ) -> drivesel::Result<Vec<ClipPrediction>> {
        let preds = self.inner.predict(round, clips)?;
        criteria::save_predictions(&preds, &self.dir.join(active::predictions_file_name(round)))?;
        Ok(preds)
    }
}

fn truth_of(
    path: &Path,
) -> anyhow::Result<std::collections::HashMap<String, synthworld::ClipTruth>> {
    synthworld::load_truth(path).with_context(|| format!("loading truth {}", path.display()))
}

pub fn run(global: &GlobalOpts, args: RunArgs) -> anyhow::Result<()> {
    let mut flags = scoring_flags(&args.scoring);
    flags.push(("active.init_mode", enum_value(args.init_mode)));
    flags.push(("active.seed", seed(args.seed)));
    let config = resolve(global, flags)?;
    let pool = load_pool(&args.pool, &config)?;
    let active = config.active.clone().with_default_schedule(pool.len());
    active.validate().map_err(|e| UsageError(e.into()))?;

    let mut truth = match &args.truth {
        Some(p) => truth_of(p)?,
        None => Default::default(),
    };
    if let Some(id) = args
        .truth
        .as_ref()
        .and(pool.ids().find(|id| !truth.contains_key(*id)))
    {
        bail!("truth file has no record for clip `{id}`");
    }
    if let Some(p) = &args.heldout_truth {
        for (id, t) in truth_of(p)? {
            if truth.insert(id.clone(), t).is_some() {
                return Err(Error::HeldoutOverlap(id).into());
            }
        }
    }
    let truth = Arc::new(truth);

    let (kind, outcome) = match args.baseline {
        Some(Baseline::Random) => (RunKind::Random, active::run_random(&pool, &active)?),
        None => {
            let mut provider: Box<dyn PredictionProvider> = match args.provider {
                ProviderArg::Toy => {
                    if args.truth.is_none() {
                        bail!(UsageError(anyhow!("--provider toy needs --truth")));
                    }
                    Box::new(ToyPlanner::new(config.toy, truth.clone()))
                }
                ProviderArg::Files => {
                    let dir = args.predictions_dir.clone().ok_or_else(|| {
                        UsageError(anyhow!("--provider files needs --predictions-dir"))
                    })?;
                    Box::new(FileProvider::new(dir, pool.horizon()))
                }
            };
            let outcome = match &args.dump_predictions {
                Some(dir) => {
                    create_dir(dir)?;
                    let mut d = Dumping {
                        inner: provider.as_mut(),
                        dir: dir.clone(),
                    };
                    active::run(&pool, &mut d, &active)?
                }
                None => active::run(&pool, provider.as_mut(), &active)?,
            };
            (RunKind::Active, outcome)
        }
    };

    let mut manifest = RunManifest::new(kind, &active, &outcome);
    manifest
        .extra
        .insert("toy".into(), serde_json::to_value(config.toy)?);
    if let Some(h) = &args.heldout {
        if args.truth.is_none() {
            bail!(UsageError(anyhow!(
                "--heldout needs --truth to train the evaluation planner"
            )));
        }
        let heldout = load_pool(h, &config)?;
        manifest.evaluation = Some(evaluate_labeled(
            &pool,
            outcome.state.labeled(),
            &heldout,
            truth.clone(),
            config.toy,
        )?);
    }

    create_dir(&args.out_dir)?;
    write_config(&args.out_dir, &config)?;
    manifest.save(&args.out_dir.join("manifest.json"))?;
    pool::save_selection(&outcome.state, &args.out_dir.join("selection.json"))?;
    let name = match kind {
        RunKind::Active => "active",
        RunKind::Random => "random",
    };
    let report = Report {
        runs: vec![NamedManifest {
            name: name.into(),
            manifest: manifest.clone(),
        }],
        overlap: None,
    };
    emit_report(
        &report,
        &args.out_dir.join("report.csv"),
        ReportFormat::Delimited,
    )?;
    emit_report(
        &report,
        &args.out_dir.join("report.json"),
        ReportFormat::Structured,
    )?;

    let sizes: Vec<usize> = outcome.state.rounds().iter().map(|r| r.ids.len()).collect();
    eprintln!("{name} run: round sizes {sizes:?}");
    if let Some(ev) = &manifest.evaluation {
        eprintln!(
            "held-out: avg DE {:.4} m, proxy collision rate {:.2}%",
            ev.heldout.avg_de, ev.heldout.proxy_collision_rate
        );
    }
    Ok(())
}

fn split_named(arg: &str) -> (Option<&str>, &str) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (Some(name), path),
        _ => (None, arg),
    }
}

#[derive(Deserialize)]
struct SelectionRounds {
    rounds: Vec<Round>,
}

pub fn report(args: ReportArgs) -> anyhow::Result<()> {
    if args.manifests.is_empty() && args.selections.is_empty() {
        bail!(UsageError(anyhow!(
            "nothing to report: pass --manifest or --criterion-selection"
        )));
    }
    let mut runs: Vec<NamedManifest> = Vec::new();
    for arg in &args.manifests {
        let (name, path) = split_named(arg);
        let manifest = RunManifest::load(Path::new(path))
            .with_context(|| format!("loading manifest {path}"))?;
        let mut name = name
            .map(String::from)
            .unwrap_or_else(|| match manifest.kind {
                RunKind::Active => "active".into(),
                RunKind::Random => "random".into(),
            });
        if runs.iter().any(|r| r.name == name) {
            name = format!("{name}-{}", runs.len());
        }
        runs.push(NamedManifest { name, manifest });
    }

    let mut sets = Vec::new();
    for arg in &args.selections {
        let (Some(name), path) = split_named(arg) else {
            bail!(UsageError(anyhow!(
                "--criterion-selection expects NAME=PATH, got `{arg}`"
            )));
        };
        let file: SelectionRounds = fsutil::read_json(Path::new(path))?;
        // the initial round is shared by every criterion
        let ids: Vec<String> = file
            .rounds
            .into_iter()
            .filter(|r| r.round > 0)
            .flat_map(|r| r.ids)
            .collect();
        sets.push((name.to_string(), ids));
    }
    let overlap = if sets.is_empty() {
        None
    } else {
        Some(overlap_matrix(&sets)?)
    };

    let report = Report { runs, overlap };
    create_dir(&args.out_dir)?;
    emit_report(
        &report,
        &args.out_dir.join("report.csv"),
        ReportFormat::Delimited,
    )?;
    emit_report(
        &report,
        &args.out_dir.join("report.json"),
        ReportFormat::Structured,
    )?;
    print!("{}", render_text(&report));
    Ok(())
}

fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let evaluated: Vec<_> = report
        .runs
        .iter()
        .filter_map(|r| r.manifest.evaluation.as_ref().map(|e| (r, e)))
        .collect();
    if evaluated.len() > 1 {
        out.push_str(&format!(
            "{:<16} {:>8} {:>10} {:>8}\n",
            "run", "labeled", "avg_de_m", "cr_pct"
        ));
        for (r, e) in &evaluated {
            out.push_str(&format!(
                "{:<16} {:>8} {:>10.4} {:>8.2}\n",
                r.name,
                r.manifest.labeled().len(),
                e.heldout.avg_de,
                e.heldout.proxy_collision_rate
            ));
        }
        out.push('\n');
    }
    for (r, e) in &evaluated {
        out.push_str(&format!(
            "{}\n{:<8} {:>6} {:>10} {:>8}\n",
            r.name, "stratum", "clips", "avg_de_m", "cr_pct"
        ));
        for row in &e.stratified {
            out.push_str(&format!(
                "{:<8} {:>6} {:>10.4} {:>8.2}\n",
                row.key, row.clips, row.avg_de, row.proxy_collision_rate
            ));
        }
        out.push('\n');
    }
    if let Some(o) = &report.overlap {
        out.push_str(&format!("{:<10}", "overlap"));
        for n in &o.names {
            out.push_str(&format!(" {n:>8}"));
        }
        out.push('\n');
        for (n, row) in o.names.iter().zip(&o.rates) {
            out.push_str(&format!("{n:<10}"));
            for v in row {
                out.push_str(&format!(" {v:>8.3}"));
            }
            out.push('\n');
        }
    }
    out
}
