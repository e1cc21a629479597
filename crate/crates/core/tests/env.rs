use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use scenechain::assets::AssetCatalog;
use scenechain::chain_synth::{synthesize_candidate, ChainConfig};
use scenechain::env::{
    assemble_observation, read_record, rescore, run_episode, write_record, EnvError, EpisodeConfig, GreedyBuilderPolicy,
    HistoryEntry, HttpJudge, HttpPolicy, Judge, JudgeContext, MockJudge, Observation, Policy, RandomPolicy,
    ReplayPolicy, Termination,
};
use scenechain::fixtures::fixture_scenes;
use scenechain::metrics::{check_physics, PhysicsConfig};
use scenechain::rewards::{key_presence, Consolidated, StepReward};
use scenechain::scene::{serialize_scene, Phase, RoomGeometry, Scene};

fn catalog() -> &'static AssetCatalog {
    AssetCatalog::builtin()
}

/// Replies with a fixed list of texts, then terminates.
struct Scripted(Vec<String>, usize);

impl Policy for Scripted {
    fn act(&mut self, _obs: &Observation) -> Result<String, EnvError> {
        let text = self.0.get(self.1).cloned().unwrap_or_else(|| {
            r#"<think>done</think><tool_calls>[{"id":"t","name":"terminate","arguments":{"reason":""}}]</tool_calls>"#
                .into()
        });
        self.1 += 1;
        Ok(text)
    }
}

fn empty_room_text(room_type: &str) -> String {
    let scene = Scene::empty(RoomGeometry::rectangle(5.0, 4.0, 2.8, room_type, "room"));
    format!("<create_scene>{}</create_scene>", serialize_scene(&scene))
}

/// One-thread HTTP/1.1 server; `handler(path, body)` returning `None`
/// drops the connection without answering.
fn serve<F>(handler: F) -> String
where
    F: Fn(&str, &str) -> Option<String> + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            if reader.read_line(&mut line).is_err() {
                continue;
            }
            let path = line.split_whitespace().nth(1).unwrap_or("/").to_string();
            let mut len = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some(v) = h.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            if let Some(reply) = handler(&path, &String::from_utf8(body).unwrap()) {
                let _ = write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
            }
        }
    });
    format!("http://{addr}")
}

#[test]
fn replay_reaches_the_chain_final_scene() {
    let (id, scene) = fixture_scenes(1, 5, catalog()).remove(0);
    let cfg = ChainConfig { seed: 3, ..ChainConfig::default() };
    let (_, _, chain) = synthesize_candidate(&id, &scene, &cfg, 0, 10, catalog()).unwrap();
    let judge = MockJudge::new(catalog());
    let record = run_episode(
        &mut ReplayPolicy::new(chain.clone()),
        &judge,
        &chain.instruction,
        None,
        &EpisodeConfig::default(),
        1,
        catalog(),
    )
    .unwrap();
    assert_eq!(record.termination, Termination::TerminateTool);
    assert_eq!(record.turns.len(), chain.turns.len());
    assert!(record.init.penalties.is_empty());
    assert!(record.turns.iter().all(|t| t.penalties.is_empty()));
    assert_eq!(record.final_scene().unwrap(), &chain.final_scene);
    assert_eq!(rescore(&record, catalog()).unwrap(), record.trajectory);
}

#[test]
fn immediate_terminate_is_a_forced_failure() {
    let mut policy = Scripted(vec![empty_room_text("bedroom")], 0);
    let judge = MockJudge::new(catalog());
    let record =
        run_episode(&mut policy, &judge, "a bedroom", None, &EpisodeConfig::default(), 0, catalog()).unwrap();
    assert_eq!(record.turns.len(), 1);
    let fr = record.terminal.as_ref().unwrap().final_reward;
    assert!(fr.overrides.too_few_objects);
    assert_eq!(fr.r_final, -1.0);
    assert_eq!(record.turns[0].improvement, -1);
}

#[test]
fn fatal_init_ends_the_episode() {
    let mut policy = Scripted(vec!["<create_scene>{oops</create_scene>".into()], 0);
    let judge = MockJudge::new(catalog());
    let record =
        run_episode(&mut policy, &judge, "a bedroom", None, &EpisodeConfig::default(), 0, catalog()).unwrap();
    assert_eq!(record.termination, Termination::FatalInit);
    assert!(record.turns.is_empty() && record.terminal.is_none());
    assert_eq!(record.trajectory.r_final, -1.0);
    assert_eq!(record.trajectory.j_tau, -1.0);
    assert_eq!(rescore(&record, catalog()).unwrap(), record.trajectory);
}

#[test]
fn greedy_bedroom_is_complete_and_clean() {
    let judge = MockJudge::new(catalog());
    let cfg = EpisodeConfig { physics_opt_on_finish: true, ..EpisodeConfig::default() };
    let mut policy = GreedyBuilderPolicy::new(7, catalog());
    let record = run_episode(&mut policy, &judge, "Design a cozy bedroom", None, &cfg, 7, catalog()).unwrap();
    let scene = record.final_scene().unwrap();
    let mandatory = catalog().mandatory_objects("bedroom", "").unwrap();
    assert_eq!(mandatory.len(), 6);
    let key = key_presence(scene, &mandatory, None, catalog());
    assert_eq!(key.found, key.total);
    assert!(check_physics(scene, &PhysicsConfig::default()).is_clean());
    assert!(record.trajectory.j_tau > 0.0, "{:?}", record.trajectory);
    assert!(record.turns.len() <= 15);
}

fn entry(turn: usize) -> HistoryEntry {
    HistoryEntry {
        turn,
        think: None,
        tool_calls: Vec::new(),
        penalties: 0,
        step: StepReward { r_fmt: 1.0, r_col: 1.0, r_oob: 1.0, r_pen: 1.0, r_oob_vol: 1.0, r_imp: 0.0, r_key: 0.0, r_t: 0.5 },
    }
}

#[test]
fn observation_rules() {
    let scene = Scene::empty(RoomGeometry::rectangle(4.0, 4.0, 2.8, "bedroom", "r"));
    let history: Vec<HistoryEntry> = (1..=6).map(entry).collect();
    let cfg = EpisodeConfig::default();
    let a = assemble_observation("x", &scene, &history, 7, Phase::Edit, &cfg);
    assert!(a.render.is_none() && !a.render_failed);
    assert_eq!(a.history.iter().map(|h| h.turn).collect::<Vec<_>>(), [3, 4, 5, 6]);
    let b = assemble_observation("x", &scene, &history, 7, Phase::Edit, &cfg);
    assert_eq!(a.to_wire().to_string(), b.to_wire().to_string());

    let cfg = EpisodeConfig { render_enabled: true, ..EpisodeConfig::default() };
    let c = assemble_observation("x", &scene, &history, 7, Phase::Edit, &cfg);
    let d = assemble_observation("x", &scene, &history, 7, Phase::Edit, &cfg);
    assert_eq!(c.render.as_ref().unwrap().format, "png");
    assert_eq!(c, d);
    assert!(c.to_wire()["render_b64"].is_string());
}

/// Fixed judge outputs, served in-process or over HTTP.
struct FixedJudge;

impl Judge for FixedJudge {
    fn improvement(&self, _: &Scene, _: &Scene, _: &JudgeContext) -> Result<i8, EnvError> {
        Ok(1)
    }
    fn mandatory_objects(&self, _: &str, _: &str) -> Result<Vec<String>, EnvError> {
        Ok(["double bed", "nightstand", "wardrobe", "lamp", "dresser"].map(String::from).to_vec())
    }
    fn consolidated(&self, _: &Scene, _: &JudgeContext) -> Result<Consolidated, EnvError> {
        Ok(Consolidated { rationality: 0.5, requirement_match: 1.0, scene_graph: 0.0 })
    }
}

fn fixed_judge_server(improve: &'static str) -> String {
    serve(move |path, _| {
        Some(match path {
            "/improve" => improve.to_string(),
            "/mandatory" => r#"{"mandatory_objects":["double bed","nightstand","wardrobe","lamp","dresser"]}"#.into(),
            "/consolidate" => r#"{"rationality":0.5,"requirement_match":1.0,"scene_graph":0.0}"#.into(),
            _ => "{}".into(),
        })
    })
}

fn bedroom_script() -> Vec<String> {
    let add = r#"<think>Diagnosis: empty. Plan: add a bed.</think><tool_calls>[{"id":"tool_1","name":"add_object","arguments":{"object_description":"double bed","position":[2.5,0.5,2.0],"rotation":[0,0,0,1],"size":[2.1,1.0,1.7]}}]</tool_calls>"#;
    vec![empty_room_text("bedroom"), add.into()]
}

#[test]
fn http_transport_is_transparent() {
    let script = bedroom_script();
    let served = script.clone();
    let counter = Arc::new(AtomicUsize::new(0));
    let c = counter.clone();
    let policy_url = serve(move |_, _| {
        let i = c.fetch_add(1, Ordering::SeqCst);
        let text = served.get(i).cloned().unwrap_or_else(|| {
            r#"<think>done</think><tool_calls>[{"id":"t","name":"terminate","arguments":{"reason":""}}]</tool_calls>"#.into()
        });
        Some(serde_json::json!({ "text": text }).to_string())
    });
    let judge_url = fixed_judge_server("1");
    let cfg = EpisodeConfig::default();
    let local = run_episode(&mut Scripted(script, 0), &FixedJudge, "a bedroom", None, &cfg, 4, catalog()).unwrap();
    let remote = run_episode(
        &mut HttpPolicy::new(&policy_url, Duration::from_secs(10)),
        &HttpJudge::new(&judge_url, Duration::from_secs(10)),
        "a bedroom",
        None,
        &cfg,
        4,
        catalog(),
    )
    .unwrap();
    assert_eq!(local, remote);
    assert_eq!(counter.load(Ordering::SeqCst), 3);
}

#[test]
fn judge_values_off_the_grid_abort() {
    let judge = HttpJudge::new(&fixed_judge_server("2"), Duration::from_secs(10));
    let err = run_episode(&mut Scripted(bedroom_script(), 0), &judge, "a bedroom", None, &EpisodeConfig::default(), 0, catalog())
        .unwrap_err();
    assert!(matches!(err, EnvError::NonConforming { ref endpoint, ref body } if endpoint == "/improve" && body == "2"));

    let off_grid = serve(|path, _| {
        Some(match path {
            "/improve" => "0".into(),
            "/mandatory" => r#"{"mandatory_objects":["a","b","c","d","e"]}"#.into(),
            _ => r#"{"rationality":0.25,"requirement_match":1.0,"scene_graph":0.0}"#.into(),
        })
    });
    let judge = HttpJudge::new(&off_grid, Duration::from_secs(10));
    let err = run_episode(&mut Scripted(bedroom_script(), 0), &judge, "a bedroom", None, &EpisodeConfig::default(), 0, catalog())
        .unwrap_err();
    assert!(matches!(err, EnvError::NonConforming { ref endpoint, .. } if endpoint == "/consolidate"));
}

#[test]
fn transport_failures_retry_once_then_abort() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    // Drops every other connection: each call succeeds on its retry.
    let flaky = serve(move |_, _| {
        let i = h.fetch_add(1, Ordering::SeqCst);
        (i % 2 == 1).then(|| serde_json::json!({ "text": empty_room_text("bedroom") }).to_string())
    });
    let mut policy = HttpPolicy::new(&flaky, Duration::from_secs(10));
    let obs = Observation {
        instruction: "a bedroom".into(),
        scene_json: String::new(),
        render: None,
        render_failed: false,
        history: Vec::new(),
        turn: 0,
        phase: Phase::Init,
    };
    assert!(policy.act(&obs).unwrap().starts_with("<create_scene>"));
    assert_eq!(hits.load(Ordering::SeqCst), 2);

    let dead = serve(|_, _| None);
    let judge = MockJudge::new(catalog());
    let err = run_episode(
        &mut HttpPolicy::new(&dead, Duration::from_secs(5)),
        &judge,
        "a bedroom",
        None,
        &EpisodeConfig::default(),
        0,
        catalog(),
    )
    .unwrap_err();
    assert!(matches!(err, EnvError::PolicyTransport(_)));
}

#[test]
fn random_episodes_rescore_exactly() {
    let judge = MockJudge::new(catalog());
    let cfg = EpisodeConfig { max_turns: 6, ..EpisodeConfig::default() };
    let prompts = ["a bedroom", "a living room", "a dining room", "a study room"];
    for seed in 0..40u64 {
        let prompt = prompts[seed as usize % 4];
        let record = run_episode(&mut RandomPolicy::new(seed, catalog()), &judge, prompt, None, &cfg, seed, catalog()).unwrap();
        assert!(record.turns.len() <= cfg.max_turns);
        for v in record.turns.iter().map(|t| t.step.r_t).chain([record.trajectory.r_final, record.trajectory.j_tau]) {
            assert!((-1.0..=1.0).contains(&v));
        }
        let dir = tempfile::tempdir().unwrap();
        write_record(&record, dir.path()).unwrap();
        let back = read_record(dir.path()).unwrap();
        assert_eq!(back, record, "seed {seed}");
        assert_eq!(rescore(&back, catalog()).unwrap(), record.trajectory, "seed {seed}");
    }
}

#[test]
fn tampered_record_is_detected() {
    let judge = MockJudge::new(catalog());
    let mut record = run_episode(
        &mut GreedyBuilderPolicy::new(1, catalog()),
        &judge,
        "a living room",
        None,
        &EpisodeConfig::default(),
        1,
        catalog(),
    )
    .unwrap();
    record.turns[0].step.r_t += 1e-12;
    assert!(rescore(&record, catalog()).is_err());
}

#[test]
fn episodes_are_byte_deterministic() {
    let judge = MockJudge::new(catalog());
    let cfg = EpisodeConfig { physics_opt_on_finish: true, render_enabled: true, ..EpisodeConfig::default() };
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let r = run_episode(&mut GreedyBuilderPolicy::new(9, catalog()), &judge, "a study room", None, &cfg, 9, catalog())
            .unwrap();
        write_record(&r, dir.path()).unwrap();
        let a = std::fs::read(dir.path().join("episode.jsonl")).unwrap();
        let b = std::fs::read(dir.path().join("summary.json")).unwrap();
        (a, b)
    };
    assert_eq!(run(), run());
}

#[test]
fn goal_oriented_refinement_from_a_given_scene() {
    use rand::SeedableRng;
    use scenechain::fixtures::{degrade, Degradation};
    let (_, clean) = fixture_scenes(1, 11, catalog()).remove(0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let messy = degrade(&clean, Degradation::Missing, &mut rng, catalog());
    let judge = MockJudge::new(catalog());
    let cfg = EpisodeConfig::goal_oriented();
    let record = run_episode(
        &mut GreedyBuilderPolicy::new(2, catalog()),
        &judge,
        &format!("Complete this {}", clean.room.room_type),
        Some(&messy),
        &cfg,
        2,
        catalog(),
    )
    .unwrap();
    assert!(record.init.response.is_none());
    assert!(record.turns.len() <= 10);
    let scene = record.final_scene().unwrap();
    assert!(scene.objects.len() >= messy.objects.len());
    assert!(check_physics(scene, &PhysicsConfig::default()).is_clean());
    assert_eq!(rescore(&record, catalog()).unwrap(), record.trajectory);
}
