use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenechain::assets::AssetCatalog;
use scenechain::chain_synth::{
    fnv1a, read_chain, replay, splitmix64, synthesize_dataset, write_dataset, ChainConfig, IndexEntry,
    MockChainJudge, SynthOptions,
};
use scenechain::env::{
    read_record, rescore, run_batch, write_record, EpisodeConfig, EpisodeJob, HttpJudge, Judge, MockJudge, PolicySpec,
};
use scenechain::exec::Execution;
use scenechain::fixtures::{degrade, fixture_scenes, Degradation};
use scenechain::metrics::{check_physics, evaluate_scenes, scene_fractions, PhysicsConfig};
use scenechain::phys_opt::{optimize, OptConfig};
use scenechain::render::{render_merged, render_topdown, render_topdown_png, RenderOptions};
use scenechain::scene::{parse_scene_json, serialize_scene, Scene};
use serde_json::{json, Value};

use crate::config::{self, FileConfig};
use crate::manifest::{write_atomic, RunManifest};
use crate::{Cli, Command, EpisodeArgs, Failure, Mode, SynthArgs};

type Outcome = Result<Value, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    let file = config::load(cli.config.as_deref()).map_err(Failure::usage)?;
    let owned;
    let catalog: &AssetCatalog = match &cli.catalog {
        Some(path) => {
            owned = AssetCatalog::load(path).map_err(|e| Failure::new("catalog", format!("{}: {e}", path.display())))?;
            &owned
        }
        None => AssetCatalog::builtin(),
    };
    let ctx = Ctx { catalog, file: &file, jobs: cli.jobs, started: Instant::now() };
    match &cli.command {
        Command::SynthChains(args) => synth_chains(&ctx, args),
        Command::VerifyChains { dataset } => verify_chains(&ctx, dataset),
        Command::RunEpisode(args) => run_episodes(&ctx, args),
        Command::ScoreEpisode { record } => score_episode(&ctx, record),
        Command::Optimize { input, out, report, seed, max_steps } => {
            optimize_scene(&ctx, input, out, report.as_deref(), *seed, *max_steps)
        }
        Command::Metrics { scenes, out } => metrics(&ctx, scenes, out.as_deref()),
        Command::Render { input, out, merged, px_per_meter, grid_step, no_labels } => {
            let opts = RenderOptions { px_per_meter: *px_per_meter, grid_step: *grid_step, label_boxes: !no_labels, merged: *merged };
            render(&ctx, input, out, opts)
        }
        Command::MakeFixtures { out, count, seed, modes } => make_fixtures(&ctx, out, *count, *seed, modes),
    }
}

struct Ctx<'a> {
    catalog: &'a AssetCatalog,
    file: &'a FileConfig,
    jobs: Option<usize>,
    started: Instant,
}

impl Ctx<'_> {
    fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.file.seed).unwrap_or(0)
    }

    /// Run `f` sequentially for `--jobs 1`, otherwise on a pool of the
    /// requested size (or the global pool).
    fn exec<R: Send>(&self, f: impl FnOnce(Execution) -> R + Send) -> Result<R, Failure> {
        match self.jobs {
            Some(0) => Err(Failure::usage("--jobs must be at least 1")),
            Some(1) => Ok(f(Execution::Sequential)),
            #[cfg(feature = "parallel")]
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
                Ok(pool.install(|| f(Execution::Parallel)))
            }
            #[cfg(feature = "parallel")]
            None => Ok(f(Execution::Parallel)),
            #[cfg(not(feature = "parallel"))]
            _ => Ok(f(Execution::Sequential)),
        }
    }
}

fn read_scene(path: &Path) -> Result<Scene, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
    parse_scene_json(&text).map_err(|e| Failure::new("scene", format!("{}: {e}", path.display())))
}

/// Every `*.json` scene in `dir`, keyed by file stem, in name order.
fn read_scene_dir(dir: &Path) -> Result<Vec<(String, Scene)>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::new("io", format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".manifest.json"))
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::new("io", format!("{}: no scene files", dir.display())));
    }
    paths
        .iter()
        .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_scene(p)?)))
        .collect()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("io", format!("{}: {e}", path.display()))
}

fn synth_chains(ctx: &Ctx, args: &SynthArgs) -> Outcome {
    let s = &ctx.file.synth;
    let base = ChainConfig::default();
    let cfg = ChainConfig {
        seed: ctx.seed(args.seed),
        turns_min: s.turns_min.unwrap_or(base.turns_min),
        turns_max: s.turns_max.unwrap_or(base.turns_max),
        ..base
    };
    let defaults = SynthOptions::default();
    let opts = SynthOptions {
        n_candidates: args.candidates.or(s.candidates).unwrap_or(defaults.n_candidates),
        keep: args.keep.or(s.keep).unwrap_or(defaults.keep),
        max_attempts: s.max_attempts.unwrap_or(defaults.max_attempts),
    };
    if opts.keep == 0 || opts.keep > opts.n_candidates {
        return Err(Failure::usage("--keep must be between 1 and --candidates"));
    }
    let scenes = read_scene_dir(&args.scenes)?;
    let dataset = ctx.exec(|exec| synthesize_dataset(&scenes, &cfg, &opts, &MockChainJudge, ctx.catalog, exec))??;
    let index = write_dataset(&dataset, &args.out)?;
    let config = json!({
        "chain": cfg,
        "candidates": opts.n_candidates,
        "keep": opts.keep,
        "max_attempts": opts.max_attempts,
    });
    RunManifest::new("synth-chains", config, Some(cfg.seed))
        .input(&args.scenes)
        .output(&args.out.join("index.jsonl"))
        .write(&RunManifest::location(&args.out, true), ctx.started)?;
    Ok(json!({
        "scenes": scenes.len(),
        "chains": index.len(),
        "index": args.out.join("index.jsonl").display().to_string(),
    }))
}

fn verify_chains(ctx: &Ctx, dataset: &Path) -> Outcome {
    let index_path = dataset.join("index.jsonl");
    let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let entries: Vec<IndexEntry> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::new("dataset", format!("{}: {e}", index_path.display())))?;
    let results: Vec<Result<(), String>> = ctx.exec(|exec| {
        exec.map(&entries, |e| {
            let chain = read_chain(&dataset.join(&e.chain_path))?;
            replay(&chain, ctx.catalog).map(|_| ()).map_err(|err| err.to_string())
        })
    })?;
    let failures: Vec<Value> = entries
        .iter()
        .zip(&results)
        .filter_map(|(e, r)| r.as_ref().err().map(|msg| json!({ "chain": e.chain_path, "error": msg })))
        .collect();
    let out = json!({
        "total": entries.len(),
        "passed": entries.len() - failures.len(),
        "failed": failures.len(),
        "failures": failures,
    });
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Failure { output: Some(out), ..Failure::new("replay", format!("{} chain(s) failed replay", failures.len())) })
    }
}

fn policy_spec(args: &EpisodeArgs, seed: u64) -> Result<PolicySpec, Failure> {
    let timeout = Duration::from_secs(args.timeout);
    Ok(match args.policy.as_str() {
        "greedy" => PolicySpec::Greedy { seed },
        "random" => PolicySpec::Random { seed },
        "replay" => {
            let path = args.chain.as_ref().ok_or_else(|| Failure::usage("--policy replay needs --chain FILE"))?;
            PolicySpec::Replay(Box::new(read_chain(path).map_err(|e| Failure::new("chain", e))?))
        }
        other => match other.strip_prefix("http:") {
            Some(url) => PolicySpec::Http { url: url.to_string(), timeout },
            None => return Err(Failure::usage(format!("unknown policy `{other}`"))),
        },
    })
}

fn run_episodes(ctx: &Ctx, args: &EpisodeArgs) -> Outcome {
    if args.episodes == 0 {
        return Err(Failure::usage("--episodes must be at least 1"));
    }
    let seed = ctx.seed(args.seed);
    let init = args.init.as_deref().map(read_scene).transpose()?;
    let prompt = match (&args.prompt, args.policy.as_str()) {
        (Some(p), _) => p.clone(),
        (None, "replay") => match policy_spec(args, seed)? {
            PolicySpec::Replay(chain) => chain.instruction.clone(),
            _ => unreachable!("replay policy"),
        },
        (None, _) => return Err(Failure::usage("--prompt is required for this policy")),
    };

    let e = &ctx.file.episode;
    let base = if init.is_some() { EpisodeConfig::goal_oriented() } else { EpisodeConfig::default() };
    let cfg = EpisodeConfig {
        max_turns: args.max_turns.or(e.max_turns).unwrap_or(base.max_turns),
        history_depth: e.history_depth.unwrap_or(base.history_depth),
        render_enabled: args.render || e.render.unwrap_or(base.render_enabled),
        physics_opt_on_finish: args.optimize || e.optimize.unwrap_or(base.physics_opt_on_finish),
        weights: ctx.file.weights.unwrap_or(base.weights),
        ..base
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let jobs: Vec<EpisodeJob> = (0..args.episodes as u64)
        .map(|i| {
            Ok(EpisodeJob {
                instruction: prompt.clone(),
                init_scene: init.clone(),
                policy: policy_spec(args, seed + i)?,
                seed: seed + i,
            })
        })
        .collect::<Result<_, Failure>>()?;
    let judge: Box<dyn Judge> = match args.judge.as_str() {
        "mock" => Box::new(MockJudge::new(ctx.catalog)),
        other => match other.strip_prefix("http:") {
            Some(url) => Box::new(HttpJudge::new(url, Duration::from_secs(args.timeout))),
            None => return Err(Failure::usage(format!("unknown judge `{other}`"))),
        },
    };
    let records = ctx.exec(|exec| run_batch(&jobs, judge.as_ref(), &cfg, ctx.catalog, exec))?;

    let mut summaries = Vec::new();
    let mut manifest = RunManifest::new(
        "run-episode",
        json!({ "policy": args.policy, "judge": args.judge, "prompt": prompt, "episodes": args.episodes, "episode": cfg }),
        Some(seed),
    );
    if let Some(p) = &args.init {
        manifest = manifest.input(p);
    }
    for (i, record) in records.into_iter().enumerate() {
        let record = record.map_err(|e| Failure::new("episode", format!("episode {i}: {e}")))?;
        let dir = if args.episodes == 1 { args.out.clone() } else { args.out.join(format!("episode_{i:03}")) };
        write_record(&record, &dir)?;
        manifest = manifest.output(&dir);
        summaries.push(json!({
            "dir": dir.display().to_string(),
            "seed": record.seed,
            "termination": record.termination,
            "turns": record.turns.len(),
            "objects": record.final_scene().map_or(0, |s| s.objects.len()),
            "r_final": record.trajectory.r_final,
            "j_tau": record.trajectory.j_tau,
        }));
    }
    manifest.write(&RunManifest::location(&args.out, true), ctx.started)?;
    Ok(if summaries.len() == 1 { summaries.remove(0) } else { json!({ "episodes": summaries }) })
}

fn score_episode(ctx: &Ctx, dir: &Path) -> Outcome {
    let record = read_record(dir)?;
    match rescore(&record, ctx.catalog) {
        Ok(t) => Ok(json!({
            "match": true,
            "j_tau": t.j_tau,
            "stored_j_tau": record.trajectory.j_tau,
            "mean_step": t.mean_step,
            "r_final": t.r_final,
        })),
        Err(m) => Err(Failure {
            output: Some(json!({ "match": false, "turn": m.turn, "detail": m.detail })),
            ..Failure::new("rescore", m.to_string())
        }),
    }
}

fn optimize_scene(
    ctx: &Ctx,
    input: &Path,
    out: &Path,
    report_path: Option<&Path>,
    seed: Option<u64>,
    max_steps: Option<usize>,
) -> Outcome {
    let scene = read_scene(input)?;
    let seed = ctx.seed(seed);
    let cfg = OptConfig { max_steps: max_steps.unwrap_or(OptConfig::default().max_steps), ..OptConfig::default() };
    let (fixed, report) = optimize(&scene, &cfg, &mut ChaCha8Rng::seed_from_u64(splitmix64(seed)));
    write_atomic(out, (serialize_scene(&fixed) + "\n").as_bytes()).map_err(io_err(out))?;
    let mut manifest = RunManifest::new("optimize", json!({ "optimizer": cfg }), Some(seed)).input(input).output(out);
    if let Some(p) = report_path {
        write_atomic(p, (serde_json::to_string_pretty(&report)? + "\n").as_bytes()).map_err(io_err(p))?;
        manifest = manifest.output(p);
    }
    manifest.write(&RunManifest::location(out, false), ctx.started)?;
    Ok(json!({
        "steps_run": report.steps_run,
        "moved": report.moved.len(),
        "deleted": report.deleted,
        "violation_counts": report.violation_counts,
        "residual_violations": report.residual.violation_count(),
    }))
}

fn metrics(ctx: &Ctx, dir: &Path, out: Option<&Path>) -> Outcome {
    let named = read_scene_dir(dir)?;
    let scenes: Vec<Scene> = named.iter().map(|(_, s)| s.clone()).collect();
    let physics = PhysicsConfig::default();
    let (reports, agg) = ctx.exec(|exec| evaluate_scenes(&scenes, &physics, exec))??;
    let per_scene: Vec<Value> = named
        .iter()
        .zip(&reports)
        .map(|((id, s), r)| {
            let f = scene_fractions(r, s);
            json!({
                "scene_id": id,
                "objects": s.objects.len(),
                "oob": f.oob,
                "col": f.col,
                "violation_liters": f.violation_liters,
                "colliding": r.colliding,
                "out_of_bounds": r.oob,
            })
        })
        .collect();
    let value = json!({
        "obr": agg.obr,
        "cnr": agg.cnr,
        "vbl": agg.vbl,
        "scene_count": agg.scene_count,
        "per_scene": per_scene,
    });
    if let Some(p) = out {
        write_atomic(p, (serde_json::to_string_pretty(&value)? + "\n").as_bytes()).map_err(io_err(p))?;
        RunManifest::new("metrics", json!({ "physics": physics }), None)
            .input(dir)
            .output(p)
            .write(&RunManifest::location(p, false), ctx.started)?;
    }
    Ok(value)
}

fn render(ctx: &Ctx, input: &Path, out: &Path, opts: RenderOptions) -> Outcome {
    let scene = read_scene(input)?;
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("");
    let bytes = match (ext, opts.merged) {
        ("svg", false) => render_topdown(&scene, &opts)?.into_bytes(),
        ("svg", true) => return Err(Failure::usage("--merged output is raster; use a .png path")),
        ("png", true) => render_merged(&scene, &opts)?,
        ("png", false) => render_topdown_png(&scene, &opts)?,
        _ => return Err(Failure::usage("output must end in .svg or .png")),
    };
    write_atomic(out, &bytes).map_err(io_err(out))?;
    RunManifest::new("render", json!({ "render": opts }), None)
        .input(input)
        .output(out)
        .write(&RunManifest::location(out, false), ctx.started)?;
    Ok(json!({ "out": out.display().to_string(), "bytes": bytes.len(), "objects": scene.objects.len() }))
}

fn make_fixtures(ctx: &Ctx, out: &Path, count: usize, seed: Option<u64>, modes: &[Mode]) -> Outcome {
    let seed = ctx.seed(seed);
    let scenes = fixture_scenes(count, seed, ctx.catalog);
    let clean_dir = out.join("clean");
    for (id, s) in &scenes {
        write_atomic(&clean_dir.join(format!("{id}.json")), (serialize_scene(s) + "\n").as_bytes()).map_err(io_err(out))?;
    }
    let mut written = json!({ "clean": scenes.len() });
    for mode in modes {
        let (name, degradation) = match mode {
            Mode::Chaotic => ("chaotic", Degradation::Chaotic),
            Mode::Missing => ("missing", Degradation::Missing),
            Mode::Both => ("both", Degradation::Both),
        };
        let dir = out.join(name);
        let mut dirty = 0;
        for (i, (id, s)) in scenes.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(name) ^ splitmix64(i as u64)));
            let d = degrade(s, degradation, &mut rng, ctx.catalog);
            if !check_physics(&d, &PhysicsConfig::default()).is_clean() {
                dirty += 1;
            }
            write_atomic(&dir.join(format!("{id}.json")), (serialize_scene(&d) + "\n").as_bytes()).map_err(io_err(out))?;
        }
        written[name] = json!({ "scenes": scenes.len(), "with_violations": dirty });
    }
    let names: Vec<&str> = modes
        .iter()
        .map(|m| match m {
            Mode::Chaotic => "chaotic",
            Mode::Missing => "missing",
            Mode::Both => "both",
        })
        .collect();
    RunManifest::new("make-fixtures", json!({ "count": count, "modes": names }), Some(seed))
        .output(out)
        .write(&RunManifest::location(out, true), ctx.started)?;
    Ok(written)
}
