//! Multi-turn episode loop.
//!
//! Turn 0 sets up the room (from the policy's `<create_scene>` or a given
//! initial scene). Each edit turn parses the policy's reply, applies its
//! tool calls and scores the step. The terminal phase optionally runs the
//! physics optimizer and computes the final and trajectory rewards.

mod judge;
mod policy;
mod remote;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::assets::AssetCatalog;
use crate::canon::to_canonical_json;
use crate::chain_synth::{canonicalize, splitmix64};
use crate::exec::Execution;
use crate::metrics::{check_physics, scene_ratios, PhysicsConfig};
use crate::phys_opt::{optimize, OptConfig, OptReport};
use crate::render::{render_merged, RenderOptions};
use crate::rewards::{
    final_reward, format_reward, init_reward, key_objects_score, key_presence, physical_components,
    relevance_score, size_proportion_score, size_valid_count, step_reward, trajectory_score, Consolidated,
    FinalInputs, FinalReward, KeyCheck, RewardError, RewardWeights, StepReward, TrajectoryScore,
};
use crate::scene::{
    apply_tool_call, parse_agent_response, parse_scene_json, serialize_scene, Action, FormatPenalty, Phase,
    Scene, ToolCall,
};

pub use judge::{Judge, JudgeContext, MockJudge};
pub use policy::{GreedyBuilderPolicy, Policy, PolicySpec, RandomPolicy, ReplayPolicy};
pub use remote::{HttpJudge, HttpPolicy, DEFAULT_TIMEOUT};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("policy transport: {0}")]
    PolicyTransport(String),
    #[error("judge transport: {0}")]
    JudgeTransport(String),
    #[error("non-conforming response from {endpoint}: {body}")]
    NonConforming { endpoint: String, body: String },
    #[error("invalid episode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("record io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_turns: usize,
    pub render_enabled: bool,
    pub render: RenderOptions,
    pub weights: RewardWeights,
    pub physics_opt_on_finish: bool,
    pub history_depth: usize,
    pub opt: OptConfig,
    pub physics: PhysicsConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_turns: 15,
            render_enabled: false,
            render: RenderOptions { merged: true, ..RenderOptions::default() },
            weights: RewardWeights::default(),
            physics_opt_on_finish: false,
            history_depth: 4,
            opt: OptConfig::default(),
            physics: PhysicsConfig::default(),
        }
    }
}

impl EpisodeConfig {
    /// Refinement of a given scene: ten turns, optimizer on finish.
    pub fn goal_oriented() -> Self {
        Self { max_turns: 10, physics_opt_on_finish: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_turns == 0 {
            return Err(EnvError::InvalidConfig("max_turns must be at least 1".into()));
        }
        self.weights.validate()?;
        self.render.validate().map_err(|e| EnvError::InvalidConfig(e.to_string()))
    }
}

/// Summary of one earlier turn as shown to the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub turn: usize,
    pub think: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    pub penalties: usize,
    pub step: StepReward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderImage {
    pub format: &'static str,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub instruction: String,
    pub scene_json: String,
    pub render: Option<RenderImage>,
    /// Rendering was requested but failed.
    pub render_failed: bool,
    pub history: Vec<HistoryEntry>,
    pub turn: usize,
    pub phase: Phase,
}

impl Observation {
    /// Wire form sent to remote policies.
    pub fn to_wire(&self) -> Value {
        let mut v = json!({
            "instruction": self.instruction,
            "scene_json": self.scene_json,
            "history": self.history,
            "turn": self.turn,
            "phase": self.phase,
        });
        if let Some(r) = &self.render {
            v["render_b64"] = json!(base64::engine::general_purpose::STANDARD.encode(&r.bytes));
            v["render_format"] = json!(r.format);
        }
        v
    }

    pub fn summary(&self) -> ObservationSummary {
        ObservationSummary {
            turn: self.turn,
            phase: self.phase,
            history_turns: self.history.iter().map(|h| h.turn).collect(),
            render_bytes: self.render.as_ref().map(|r| r.bytes.len()),
            render_failed: self.render_failed,
        }
    }
}

/// What gets persisted of an observation; the scene itself is stored with
/// the turn and raw image bytes are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSummary {
    pub turn: usize,
    pub phase: Phase,
    pub history_turns: Vec<usize>,
    pub render_bytes: Option<usize>,
    pub render_failed: bool,
}

pub fn assemble_observation(
    instruction: &str,
    scene: &Scene,
    history: &[HistoryEntry],
    turn: usize,
    phase: Phase,
    cfg: &EpisodeConfig,
) -> Observation {
    let (render, render_failed) = if cfg.render_enabled {
        match render_merged(scene, &cfg.render) {
            Ok(bytes) => (Some(RenderImage { format: "png", bytes }), false),
            Err(e) => {
                log::warn!("render failed at turn {turn}: {e}");
                (None, true)
            }
        }
    } else {
        (None, false)
    };
    let keep = history.len().saturating_sub(cfg.history_depth);
    Observation {
        instruction: instruction.to_string(),
        scene_json: serialize_scene(scene),
        render,
        render_failed,
        history: history[keep..].to_vec(),
        turn,
        phase,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TerminateTool,
    MaxTurns,
    FatalInit,
}

/// How `r_key` was evaluated for a turn: relevance of the objects it added
/// or replaced, or presence of the mandatory objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum KeyEval {
    Relevance { relevant: usize, irrelevant: usize },
    Presence(KeyCheck),
}

impl KeyEval {
    pub fn score(&self) -> f64 {
        match *self {
            KeyEval::Relevance { relevant, irrelevant } => relevance_score(relevant, irrelevant),
            KeyEval::Presence(k) => key_objects_score(k.found, k.total, k.essential_missing),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub observation: Option<ObservationSummary>,
    pub response: Option<String>,
    pub penalties: Vec<FormatPenalty>,
    pub scene: Option<Scene>,
    pub requested_room_type: String,
    pub r_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub observation: ObservationSummary,
    pub response: String,
    pub calls: Vec<ToolCall>,
    pub penalties: Vec<FormatPenalty>,
    pub scene_before: Scene,
    pub scene_after: Scene,
    pub terminated: bool,
    pub improvement: i8,
    pub key: KeyEval,
    pub step: StepReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRecord {
    pub scene_before_opt: Scene,
    pub opt_report: Option<OptReport>,
    pub final_scene: Scene,
    pub r_fmt: f64,
    pub key: KeyCheck,
    pub consolidated: Consolidated,
    pub final_reward: FinalReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instruction: String,
    pub seed: u64,
    pub config: EpisodeConfig,
    pub room_type: String,
    pub mandatory: Vec<String>,
    pub essential: Option<String>,
    pub init: InitRecord,
    pub turns: Vec<TurnRecord>,
    pub terminal: Option<TerminalRecord>,
    pub termination: Termination,
    pub trajectory: TrajectoryScore,
}

impl EpisodeRecord {
    /// Per-step values entering `J`: the weighted init reward, then every
    /// edit turn's `r_t`.
    pub fn step_series(&self) -> Vec<f64> {
        std::iter::once(self.config.weights.init.r_init * self.init.r_init)
            .chain(self.turns.iter().map(|t| t.step.r_t))
            .collect()
    }

    pub fn final_scene(&self) -> Option<&Scene> {
        self.terminal.as_ref().map(|t| &t.final_scene)
    }

    pub fn context(&self) -> JudgeContext {
        JudgeContext {
            instruction: self.instruction.clone(),
            room_type: self.room_type.clone(),
            mandatory: self.mandatory.clone(),
            essential: self.essential.clone(),
        }
    }
}

/// Scene-side outcome of one edit turn, before the judge is consulted.
struct TurnOutcome {
    calls: Vec<ToolCall>,
    think: Option<String>,
    penalties: Vec<FormatPenalty>,
    scene_after: Scene,
    terminated: bool,
    key: KeyEval,
}

fn play_turn(scene: &Scene, response: &str, ctx: &JudgeContext, catalog: &AssetCatalog) -> TurnOutcome {
    let (parsed, mut penalties) = parse_agent_response(response, Phase::Edit);
    let mut current = scene.clone();
    let mut terminated = false;
    let (mut relevant, mut irrelevant, mut added) = (0, 0, false);
    for call in &parsed.tool_calls {
        // Calls after a terminate are not executed.
        if call.is_terminate() {
            terminated = true;
            break;
        }
        let (next, p) = apply_tool_call(&current, call, catalog);
        if p.is_empty() {
            let new_description = match &call.action {
                Action::AddObject { description, .. } => Some(description),
                Action::ReplaceObject { new_description, .. } => Some(new_description),
                _ => None,
            };
            if let Some(d) = new_description {
                added = true;
                if catalog.is_relevant(&ctx.room_type, catalog.category_of(d), &ctx.instruction) {
                    relevant += 1;
                } else {
                    irrelevant += 1;
                }
            }
        }
        penalties.extend(p);
        current = next;
    }
    let scene_after = canonicalize(&current);
    let key = if added {
        KeyEval::Relevance { relevant, irrelevant }
    } else {
        KeyEval::Presence(key_presence(&scene_after, &ctx.mandatory, ctx.essential.as_deref(), catalog))
    };
    TurnOutcome { calls: parsed.tool_calls, think: parsed.think, penalties, scene_after, terminated, key }
}

fn score_turn(outcome: &TurnOutcome, improvement: i8, physics: &PhysicsConfig, w: &RewardWeights) -> StepReward {
    let report = check_physics(&outcome.scene_after, physics);
    let physical = physical_components(&scene_ratios(&report, &outcome.scene_after));
    step_reward(format_reward(&outcome.penalties), physical, improvement as f64, outcome.key.score(), w)
}

/// Terminal format check: the final scene validates and survives the wire
/// format unchanged.
pub fn terminal_format_reward(scene: &Scene) -> f64 {
    let round_trips = parse_scene_json(&serialize_scene(scene)).is_ok_and(|s| &s == scene);
    if scene.validate().is_ok() && round_trips { 1.0 } else { -1.0 }
}

fn optimizer_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6f70_7469_6d69_7a65))
}

struct TerminalOutcome {
    scene_before_opt: Scene,
    opt_report: Option<OptReport>,
    final_scene: Scene,
    r_fmt: f64,
    key: KeyCheck,
}

fn finish_scene(scene: &Scene, ctx: &JudgeContext, cfg: &EpisodeConfig, seed: u64, catalog: &AssetCatalog) -> TerminalOutcome {
    let (final_scene, opt_report) = if cfg.physics_opt_on_finish {
        let (s, r) = optimize(scene, &cfg.opt, &mut optimizer_rng(seed));
        (canonicalize(&s), Some(r))
    } else {
        (scene.clone(), None)
    };
    TerminalOutcome {
        scene_before_opt: scene.clone(),
        opt_report,
        r_fmt: terminal_format_reward(&final_scene),
        key: key_presence(&final_scene, &ctx.mandatory, ctx.essential.as_deref(), catalog),
        final_scene,
    }
}

fn terminal_reward(t: &TerminalOutcome, consolidated: Consolidated, cfg: &EpisodeConfig, catalog: &AssetCatalog) -> FinalReward {
    let report = check_physics(&t.final_scene, &cfg.physics);
    let inputs = FinalInputs {
        r_fmt: t.r_fmt,
        key: t.key,
        r_size: size_proportion_score(&t.final_scene, catalog),
        valid_objects: size_valid_count(&t.final_scene, catalog),
        consolidated,
    };
    final_reward(&t.final_scene, &report, &inputs, &cfg.weights)
}

fn checked_improvement(v: i8) -> Result<i8, EnvError> {
    if (-1..=1).contains(&v) {
        Ok(v)
    } else {
        Err(EnvError::NonConforming { endpoint: "improvement".into(), body: v.to_string() })
    }
}

fn checked_consolidated(c: Consolidated) -> Result<Consolidated, EnvError> {
    if c.is_conforming() {
        Ok(c)
    } else {
        Err(EnvError::NonConforming { endpoint: "consolidated".into(), body: to_canonical_json(&c) })
    }
}

/// Run one episode. Deterministic for a fixed policy, judge, seed and config.
pub fn run_episode(
    policy: &mut dyn Policy,
    judge: &dyn Judge,
    instruction: &str,
    init_scene: Option<&Scene>,
    cfg: &EpisodeConfig,
    seed: u64,
    catalog: &AssetCatalog,
) -> Result<EpisodeRecord, EnvError> {
    cfg.validate()?;
    let requested = catalog.infer_room_type(instruction).unwrap_or("").to_string();

    // Turn 0.
    let init = match init_scene {
        Some(scene) => InitRecord {
            observation: None,
            response: None,
            penalties: Vec::new(),
            scene: Some(canonicalize(scene)),
            r_init: init_reward(Some(scene), &requested),
            requested_room_type: requested.clone(),
        },
        None => {
            // No room exists yet, so there is nothing to serialize or render.
            let obs = Observation {
                instruction: instruction.to_string(),
                scene_json: String::new(),
                render: None,
                render_failed: false,
                history: Vec::new(),
                turn: 0,
                phase: Phase::Init,
            };
            let response = policy.act(&obs)?;
            let (parsed, penalties) = parse_agent_response(&response, Phase::Init);
            let scene = parsed.create_scene.map(|s| canonicalize(&s));
            InitRecord {
                observation: Some(obs.summary()),
                r_init: init_reward(scene.as_ref(), &requested),
                response: Some(response),
                penalties,
                scene,
                requested_room_type: requested.clone(),
            }
        }
    };

    let Some(mut scene) = init.scene.clone() else {
        let mut record = EpisodeRecord {
            instruction: instruction.to_string(),
            seed,
            config: cfg.clone(),
            room_type: requested.clone(),
            mandatory: Vec::new(),
            essential: None,
            init,
            turns: Vec::new(),
            terminal: None,
            termination: Termination::FatalInit,
            trajectory: TrajectoryScore { mean_step: 0.0, r_final: -1.0, j_tau: 0.0 },
        };
        record.trajectory = trajectory_score(&record.step_series(), -1.0, &cfg.weights)?;
        return Ok(record);
    };

    let room_type = if requested.is_empty() { scene.room.room_type.clone() } else { requested.clone() };
    let ctx = JudgeContext {
        instruction: instruction.to_string(),
        mandatory: judge.mandatory_objects(&room_type, instruction)?,
        essential: catalog.essential_category(&room_type).map(str::to_string),
        room_type,
    };

    // Edit turns.
    let mut turns: Vec<TurnRecord> = Vec::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut termination = Termination::MaxTurns;
    for turn in 1..=cfg.max_turns {
        let obs = assemble_observation(instruction, &scene, &history, turn, Phase::Edit, cfg);
        let response = policy.act(&obs)?;
        let outcome = play_turn(&scene, &response, &ctx, catalog);
        let improvement = checked_improvement(judge.improvement(&scene, &outcome.scene_after, &ctx)?)?;
        let step = score_turn(&outcome, improvement, &cfg.physics, &cfg.weights);
        history.push(HistoryEntry {
            turn,
            think: outcome.think.clone(),
            tool_calls: outcome.calls.clone(),
            penalties: outcome.penalties.len(),
            step,
        });
        let terminated = outcome.terminated;
        turns.push(TurnRecord {
            turn,
            observation: obs.summary(),
            response,
            calls: outcome.calls,
            penalties: outcome.penalties,
            scene_before: std::mem::replace(&mut scene, outcome.scene_after.clone()),
            scene_after: outcome.scene_after,
            terminated,
            improvement,
            key: outcome.key,
            step,
        });
        if terminated {
            termination = Termination::TerminateTool;
            break;
        }
    }

    // Terminal assessment.
    let outcome = finish_scene(&scene, &ctx, cfg, seed, catalog);
    let consolidated = checked_consolidated(judge.consolidated(&outcome.final_scene, &ctx)?)?;
    let final_reward = terminal_reward(&outcome, consolidated, cfg, catalog);
    let mut record = EpisodeRecord {
        instruction: instruction.to_string(),
        seed,
        config: cfg.clone(),
        room_type: ctx.room_type.clone(),
        mandatory: ctx.mandatory.clone(),
        essential: ctx.essential.clone(),
        init,
        turns,
        terminal: Some(TerminalRecord {
            scene_before_opt: outcome.scene_before_opt,
            opt_report: outcome.opt_report,
            final_scene: outcome.final_scene,
            r_fmt: outcome.r_fmt,
            key: outcome.key,
            consolidated,
            final_reward,
        }),
        termination,
        trajectory: TrajectoryScore { mean_step: 0.0, r_final: 0.0, j_tau: 0.0 },
    };
    record.trajectory = trajectory_score(&record.step_series(), final_reward.r_final, &cfg.weights)?;
    Ok(record)
}

/// One episode of a batch.
#[derive(Debug, Clone)]
pub struct EpisodeJob {
    pub instruction: String,
    pub init_scene: Option<Scene>,
    pub policy: PolicySpec,
    pub seed: u64,
}

/// Independent episodes, results in job order whatever the execution mode.
pub fn run_batch(
    jobs: &[EpisodeJob],
    judge: &dyn Judge,
    cfg: &EpisodeConfig,
    catalog: &AssetCatalog,
    exec: Execution,
) -> Vec<Result<EpisodeRecord, EnvError>> {
    exec.map(jobs, |job| {
        let mut policy = job.policy.build(catalog)?;
        run_episode(policy.as_mut(), judge, &job.instruction, job.init_scene.as_ref(), cfg, job.seed, catalog)
    })
}

// --- persistence ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RecordLine {
    Init(InitRecord),
    Turn(Box<TurnRecord>),
    Terminal(Box<TerminalRecord>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordSummary {
    instruction: String,
    seed: u64,
    config: EpisodeConfig,
    room_type: String,
    mandatory: Vec<String>,
    essential: Option<String>,
    termination: Termination,
    turns: usize,
    step_rewards: Vec<f64>,
    final_reward: Option<FinalReward>,
    trajectory: TrajectoryScore,
}

pub const RECORD_TURNS: &str = "episode.jsonl";
pub const RECORD_SUMMARY: &str = "summary.json";

/// Write `episode.jsonl` (one line per turn) and `summary.json` into `dir`.
pub fn write_record(record: &EpisodeRecord, dir: &Path) -> Result<(), EnvError> {
    let io = |e: std::io::Error| EnvError::Io(e.to_string());
    fs::create_dir_all(dir).map_err(io)?;
    let mut lines = Vec::new();
    writeln!(lines, "{}", to_canonical_json(&RecordLine::Init(record.init.clone()))).map_err(io)?;
    for t in &record.turns {
        writeln!(lines, "{}", to_canonical_json(&RecordLine::Turn(Box::new(t.clone())))).map_err(io)?;
    }
    if let Some(t) = &record.terminal {
        writeln!(lines, "{}", to_canonical_json(&RecordLine::Terminal(Box::new(t.clone())))).map_err(io)?;
    }
    fs::write(dir.join(RECORD_TURNS), lines).map_err(io)?;
    let summary = RecordSummary {
        instruction: record.instruction.clone(),
        seed: record.seed,
        config: record.config.clone(),
        room_type: record.room_type.clone(),
        mandatory: record.mandatory.clone(),
        essential: record.essential.clone(),
        termination: record.termination,
        turns: record.turns.len(),
        step_rewards: record.turns.iter().map(|t| t.step.r_t).collect(),
        final_reward: record.terminal.as_ref().map(|t| t.final_reward),
        trajectory: record.trajectory,
    };
    fs::write(dir.join(RECORD_SUMMARY), to_canonical_json(&summary) + "\n").map_err(io)
}

pub fn read_record(dir: &Path) -> Result<EpisodeRecord, EnvError> {
    let io = |e: std::io::Error| EnvError::Io(e.to_string());
    let bad = |e: serde_json::Error| EnvError::Io(e.to_string());
    let summary: RecordSummary =
        serde_json::from_str(&fs::read_to_string(dir.join(RECORD_SUMMARY)).map_err(io)?).map_err(bad)?;
    let text = fs::read_to_string(dir.join(RECORD_TURNS)).map_err(io)?;
    let (mut init, mut turns, mut terminal) = (None, Vec::new(), None);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<RecordLine>(line).map_err(bad)? {
            RecordLine::Init(i) => init = Some(i),
            RecordLine::Turn(t) => turns.push(*t),
            RecordLine::Terminal(t) => terminal = Some(*t),
        }
    }
    Ok(EpisodeRecord {
        instruction: summary.instruction,
        seed: summary.seed,
        config: summary.config,
        room_type: summary.room_type,
        mandatory: summary.mandatory,
        essential: summary.essential,
        init: init.ok_or_else(|| EnvError::Io("record has no init line".into()))?,
        turns,
        terminal,
        termination: summary.termination,
        trajectory: summary.trajectory,
    })
}

// --- offline re-scoring -----------------------------------------------------

#[derive(Debug, Error)]
#[error("turn {turn}: {detail}")]
pub struct RescoreMismatch {
    /// 0 for the init turn, `max_turns + 1` for the terminal phase.
    pub turn: usize,
    pub detail: String,
}

fn mismatch(turn: usize, detail: impl Into<String>) -> RescoreMismatch {
    RescoreMismatch { turn, detail: detail.into() }
}

/// Recompute every reward of a stored episode from its responses, scenes
/// and recorded judge outputs, and require exact agreement.
pub fn rescore(record: &EpisodeRecord, catalog: &AssetCatalog) -> Result<TrajectoryScore, RescoreMismatch> {
    let cfg = &record.config;
    let init = &record.init;
    let scene0 = match &init.response {
        Some(text) => parse_agent_response(text, Phase::Init).0.create_scene.map(|s| canonicalize(&s)),
        None => init.scene.clone(),
    };
    if scene0 != init.scene {
        return Err(mismatch(0, "create_scene does not reproduce the stored scene"));
    }
    if init_reward(scene0.as_ref(), &init.requested_room_type) != init.r_init {
        return Err(mismatch(0, "r_init differs"));
    }
    let ctx = record.context();
    let mut scene = scene0;
    for t in &record.turns {
        let before = scene.as_ref().ok_or_else(|| mismatch(t.turn, "edit turn after fatal init"))?;
        if before != &t.scene_before {
            return Err(mismatch(t.turn, "scene_before does not continue the previous turn"));
        }
        let outcome = play_turn(before, &t.response, &ctx, catalog);
        if outcome.scene_after != t.scene_after {
            return Err(mismatch(t.turn, "tool calls do not reproduce scene_after"));
        }
        if outcome.penalties != t.penalties || outcome.key != t.key || outcome.terminated != t.terminated {
            return Err(mismatch(t.turn, "penalties, key evaluation or termination differ"));
        }
        let step = score_turn(&outcome, t.improvement, &cfg.physics, &cfg.weights);
        if step != t.step {
            return Err(mismatch(t.turn, format!("step reward {} != stored {}", step.r_t, t.step.r_t)));
        }
        scene = Some(outcome.scene_after);
    }
    let r_final = match (&record.terminal, scene) {
        (None, None) => -1.0,
        (Some(term), Some(scene)) => {
            let t_idx = cfg.max_turns + 1;
            let outcome = finish_scene(&scene, &ctx, cfg, record.seed, catalog);
            if outcome.final_scene != term.final_scene || outcome.opt_report != term.opt_report {
                return Err(mismatch(t_idx, "optimizer does not reproduce the final scene"));
            }
            if outcome.r_fmt != term.r_fmt || outcome.key != term.key {
                return Err(mismatch(t_idx, "terminal format or key check differs"));
            }
            let fr = terminal_reward(&outcome, term.consolidated, cfg, catalog);
            if fr != term.final_reward {
                return Err(mismatch(t_idx, format!("R_final {} != stored {}", fr.r_final, term.final_reward.r_final)));
            }
            fr.r_final
        }
        _ => return Err(mismatch(cfg.max_turns + 1, "terminal record inconsistent with init")),
    };
    let traj = trajectory_score(&record.step_series(), r_final, &cfg.weights)
        .map_err(|e| mismatch(cfg.max_turns + 1, e.to_string()))?;
    if traj != record.trajectory {
        return Err(mismatch(cfg.max_turns + 1, format!("J {} != stored {}", traj.j_tau, record.trajectory.j_tau)));
    }
    Ok(traj)
}
