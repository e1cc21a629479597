//! Edit-chain synthesis by reverse engineering.
//!
//! A finished scene is dismantled turn by turn (small objects first, big
//! ones last), each reverse edit recording its exact forward inverse.
//! Flipping the turn order yields a coarse-to-fine construction trajectory
//! that replays to the original scene bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetCatalog;
use crate::canon::to_canonical_json;
use crate::exec::Execution;
use crate::geometry::point_in_polygon;
use crate::metrics::{check_physics, PhysicsConfig};
use crate::scene::{apply_tool_call, Action, Rotation, Scene, SceneObject, ToolCall, Vec3};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("cannot dismantle an empty scene")]
    EmptyScene,
    #[error("invalid chain config: {0}")]
    InvalidConfig(String),
    #[error("replay failed at turn {turn}: {detail}")]
    Replay { turn: usize, detail: String },
    #[error("source scene `{0}` violates physical constraints")]
    DirtySource(String),
    #[error("no valid chain for `{scene}` after {attempts} attempts")]
    Exhausted { scene: String, attempts: usize },
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("writing dataset: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseOp {
    Add,
    Move,
    Rotate,
    Scale,
    Replace,
    Remove,
}

impl ReverseOp {
    pub const ALL: [ReverseOp; 6] = [
        ReverseOp::Add,
        ReverseOp::Move,
        ReverseOp::Rotate,
        ReverseOp::Scale,
        ReverseOp::Replace,
        ReverseOp::Remove,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub op_probs: BTreeMap<ReverseOp, f64>,
    pub small_vol: f64,
    pub large_vol: f64,
    pub early_p: f64,
    pub late_p: f64,
    pub turns_min: usize,
    pub turns_max: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        let op_probs = [
            (ReverseOp::Add, 0.35),
            (ReverseOp::Move, 0.20),
            (ReverseOp::Rotate, 0.20),
            (ReverseOp::Scale, 0.05),
            (ReverseOp::Replace, 0.10),
            (ReverseOp::Remove, 0.10),
        ]
        .into_iter()
        .collect();
        Self {
            op_probs,
            small_vol: 0.5,
            large_vol: 2.0,
            early_p: 0.3,
            late_p: 0.7,
            turns_min: 4,
            turns_max: 8,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        let bad = |m: &str| Err(ChainError::InvalidConfig(m.into()));
        let total: f64 = self.op_probs.values().sum();
        if (total - 1.0).abs() > 1e-9 || self.op_probs.values().any(|p| *p < 0.0) {
            return bad("op probabilities must be non-negative and sum to 1");
        }
        if !(0.0 < self.small_vol && self.small_vol < self.large_vol) {
            return bad("volume thresholds must satisfy 0 < small < large");
        }
        if !(0.0 < self.early_p && self.early_p < self.late_p && self.late_p <= 1.0) {
            return bad("progress thresholds must satisfy 0 < early < late <= 1");
        }
        if !(2 <= self.turns_min && self.turns_min <= self.turns_max) {
            return bad("turn range must satisfy 2 <= min <= max");
        }
        Ok(())
    }

    fn sample_op(&self, rng: &mut ChaCha8Rng) -> ReverseOp {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for op in ReverseOp::ALL {
            acc += self.op_probs.get(&op).copied().unwrap_or(0.0);
            if u < acc {
                return op;
            }
        }
        // Rounding slack lands on the last op with non-zero mass.
        *ReverseOp::ALL
            .iter()
            .rev()
            .find(|op| self.op_probs.get(op).copied().unwrap_or(0.0) > 0.0)
            .expect("validated probabilities")
    }

    /// Volume filter for add candidates at a given reverse progress.
    fn bucket_admits(&self, p: f64, volume: f64) -> bool {
        if p < self.early_p {
            volume < self.small_vol
        } else if p < self.late_p {
            self.small_vol <= volume && volume < self.large_vol
        } else {
            volume >= self.large_vol
        }
    }
}

/// One reverse edit and the forward calls that undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseEdit {
    pub op: ReverseOp,
    pub uid: String,
    /// Volume of the target (or inserted distractor) when edited.
    pub volume: f64,
    /// For adds: whether the progress bucket was empty and every object
    /// was eligible instead.
    pub bucket_fallback: bool,
    pub forward: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseTurn {
    pub index: usize,
    pub progress: f64,
    pub is_final: bool,
    pub before: Scene,
    pub edits: Vec<ReverseEdit>,
    pub after: Scene,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseChain {
    pub source: Scene,
    pub planned_turns: usize,
    pub turns: Vec<ReverseTurn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTurn {
    pub scene_before: Scene,
    pub forward_calls: Vec<ToolCall>,
    pub scene_after: Scene,
    pub cot_stub: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditChain {
    pub instruction: String,
    pub turns: Vec<ChainTurn>,
    pub final_scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainScore {
    pub coherence: u32,
    pub naturalness: u32,
    pub instruction_following: u32,
    pub visual_transition: u32,
    pub overall: u32,
    pub reasoning: String,
    pub strengths: String,
    pub weaknesses: String,
}

impl ChainScore {
    pub fn is_conforming(&self) -> bool {
        self.coherence <= 40
            && self.naturalness <= 35
            && self.instruction_following <= 15
            && self.visual_transition <= 10
            && self.overall
                == self.coherence + self.naturalness + self.instruction_following + self.visual_transition
    }
}

/// Scores candidate chains.
pub trait ChainJudge: Sync {
    fn score_chain(&self, chain: &EditChain, catalog: &AssetCatalog) -> Result<ChainScore, ChainError>;
}

/// Sort objects by uid and snap numbers to the serialization grid.
pub fn canonicalize(scene: &Scene) -> Scene {
    let mut out = scene.clone();
    for o in &mut out.objects {
        o.position = o.position.quantized();
        o.size = o.size.quantized();
    }
    out.objects.sort_by(|a, b| a.uid.cmp(&b.uid));
    out
}

/// Deterministic 64-bit mixer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seed for candidate `k` (and retry `attempt`) of a scene.
pub fn candidate_seed(base: u64, scene_id: &str, k: usize, attempt: usize) -> u64 {
    let s = splitmix64(base ^ splitmix64(fnv1a(scene_id)));
    splitmix64(splitmix64(s ^ k as u64) ^ (attempt as u64).wrapping_mul(0x9E37_79B9))
}

fn bbox(scene: &Scene) -> ((f64, f64), (f64, f64)) {
    scene.room.footprint().iter().fold(
        ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), &(x, z)| ((lo.0.min(x), lo.1.min(z)), (hi.0.max(x), hi.1.max(z))),
    )
}

/// Uniform point in the room footprint by rejection, snapped to the grid.
pub fn random_floor_point(scene: &Scene, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let ring = scene.room.footprint();
    let (lo, hi) = bbox(scene);
    loop {
        let x = crate::canon::quantize(rng.random_range(lo.0..=hi.0));
        let z = crate::canon::quantize(rng.random_range(lo.1..=hi.1));
        if point_in_polygon((x, z), &ring) {
            return (x, z);
        }
    }
}

fn random_yaw(rng: &mut ChaCha8Rng) -> Rotation {
    Rotation::from_yaw(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

/// Forward calls that recreate `obj` exactly from nothing.
fn forward_add(obj: &SceneObject, catalog: &AssetCatalog) -> Vec<Action> {
    let mut out = vec![Action::AddObject {
        description: obj.description.clone(),
        position: obj.position,
        rotation: obj.rotation,
        size: obj.size,
        uid: Some(obj.uid.clone()),
    }];
    if catalog.realize(&obj.description, obj.size) != obj.size {
        out.push(Action::ScaleObject { uid: obj.uid.clone(), new_size: obj.size });
    }
    out
}

/// Remove `uid` from the scene; the inverse re-adds it.
pub fn reverse_add(scene: &mut Scene, uid: &str, catalog: &AssetCatalog) -> Option<ReverseEdit> {
    let obj = scene.remove(uid)?;
    Some(ReverseEdit {
        op: ReverseOp::Add,
        uid: uid.into(),
        volume: obj.volume(),
        bucket_fallback: false,
        forward: forward_add(&obj, catalog),
    })
}

/// Teleport `uid` to a random in-room XZ position.
pub fn reverse_move(scene: &mut Scene, uid: &str, rng: &mut ChaCha8Rng) -> Option<ReverseEdit> {
    let (x, z) = random_floor_point(scene, rng);
    let obj = scene.object_mut(uid)?;
    let original = obj.position;
    obj.position = Vec3::new(x, original.y, z);
    Some(ReverseEdit {
        op: ReverseOp::Move,
        uid: uid.into(),
        volume: obj.volume(),
        bucket_fallback: false,
        forward: vec![Action::MoveObject { uid: uid.into(), new_position: original }],
    })
}

pub fn reverse_rotate(scene: &mut Scene, uid: &str, rng: &mut ChaCha8Rng) -> Option<ReverseEdit> {
    let rotation = random_yaw(rng);
    let obj = scene.object_mut(uid)?;
    let original = obj.rotation;
    obj.rotation = rotation;
    Some(ReverseEdit {
        op: ReverseOp::Rotate,
        uid: uid.into(),
        volume: obj.volume(),
        bucket_fallback: false,
        forward: vec![Action::RotateObject { uid: uid.into(), new_rotation: original }],
    })
}

/// Per-axis factor in `[0.5, 1.5]`, clamped into the category's valid range.
pub fn reverse_scale(
    scene: &mut Scene,
    uid: &str,
    rng: &mut ChaCha8Rng,
    catalog: &AssetCatalog,
) -> Option<ReverseEdit> {
    let factors: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..=1.5));
    let obj = scene.object_mut(uid)?;
    let original = obj.size;
    let mut s = original.to_array();
    for d in 0..3 {
        s[d] *= factors[d];
    }
    if let Some((lo, hi)) = catalog.category_bounds(catalog.category_of(&obj.description)) {
        let (lo, hi) = (lo.to_array(), hi.to_array());
        for d in 0..3 {
            s[d] = s[d].clamp(0.5 * lo[d], 2.0 * hi[d]);
        }
    }
    obj.size = Vec3::from(s).quantized();
    Some(ReverseEdit {
        op: ReverseOp::Scale,
        uid: uid.into(),
        volume: obj.volume(),
        bucket_fallback: false,
        forward: vec![Action::ScaleObject { uid: uid.into(), new_size: original }],
    })
}

fn random_other_category<'a>(catalog: &'a AssetCatalog, not: &str, rng: &mut ChaCha8Rng) -> &'a str {
    let pool: Vec<&str> = catalog.categories().filter(|c| *c != not && *c != crate::assets::FALLBACK_CATEGORY).collect();
    pool[rng.random_range(0..pool.len())]
}

/// Swap the description for another category's, keeping the box.
pub fn reverse_replace(
    scene: &mut Scene,
    uid: &str,
    rng: &mut ChaCha8Rng,
    catalog: &AssetCatalog,
) -> Option<ReverseEdit> {
    let obj = scene.object(uid)?;
    let current = catalog.category_of(&obj.description).to_string();
    let swapped = random_other_category(catalog, &current, rng).to_string();
    let obj = scene.object_mut(uid)?;
    let original = obj.description.clone();
    obj.description = swapped;
    let mut forward = vec![Action::ReplaceObject { uid: uid.into(), new_description: original.clone() }];
    if catalog.realize(&original, obj.size) != obj.size {
        forward.push(Action::ScaleObject { uid: uid.into(), new_size: obj.size });
    }
    Some(ReverseEdit { op: ReverseOp::Replace, uid: uid.into(), volume: obj.volume(), bucket_fallback: false, forward })
}

/// Insert a random catalog object; the inverse removes it.
pub fn reverse_remove(
    scene: &mut Scene,
    uid: &str,
    rng: &mut ChaCha8Rng,
    catalog: &AssetCatalog,
) -> ReverseEdit {
    let category = random_other_category(catalog, "", rng).to_string();
    let entries: Vec<_> = catalog.entries_for(&category).collect();
    let size = entries[rng.random_range(0..entries.len())].canonical_size;
    let (x, z) = random_floor_point(scene, rng);
    let obj = SceneObject::new(uid, &category, Vec3::new(x, size.y / 2.0, z), 0.0, size);
    let obj = SceneObject { rotation: random_yaw(rng), position: obj.position.quantized(), ..obj };
    let volume = obj.volume();
    scene.objects.push(obj);
    ReverseEdit {
        op: ReverseOp::Remove,
        uid: uid.into(),
        volume,
        bucket_fallback: false,
        forward: vec![Action::RemoveObject { uid: uid.into() }],
    }
}

fn distractor_uid(scene: &Scene, source: &Scene, turn: usize) -> String {
    (1..)
        .map(|i| format!("distractor_{turn}_{i}"))
        .find(|u| !scene.contains(u) && !source.contains(u))
        .expect("unbounded range")
}

/// Dismantle a finished scene into a reverse chain.
pub fn dismantle(
    final_scene: &Scene,
    cfg: &ChainConfig,
    rng: &mut ChaCha8Rng,
    catalog: &AssetCatalog,
) -> Result<ReverseChain, ChainError> {
    cfg.validate()?;
    if final_scene.objects.is_empty() {
        return Err(ChainError::EmptyScene);
    }
    let source = canonicalize(final_scene);
    let planned = rng.random_range(cfg.turns_min..=cfg.turns_max);
    let mut scene = source.clone();
    let mut turns = Vec::new();
    for t in 0..planned {
        let progress = t as f64 / (planned - 1) as f64;
        let before = scene.clone();
        let is_final = t == planned - 1;
        let mut edits = Vec::new();
        if is_final {
            let uids: Vec<String> = scene.objects.iter().map(|o| o.uid.clone()).collect();
            for uid in uids {
                edits.push(reverse_add(&mut scene, &uid, catalog).expect("uid from scene"));
            }
        } else {
            let n = rng.random_range(1..=scene.objects.len());
            // Objects present at the start of the turn and not yet touched.
            let mut fresh: Vec<String> = scene.objects.iter().map(|o| o.uid.clone()).collect();
            for _ in 0..n {
                let op = cfg.sample_op(rng);
                if op == ReverseOp::Remove {
                    let uid = distractor_uid(&scene, &source, t);
                    edits.push(reverse_remove(&mut scene, &uid, rng, catalog));
                    continue;
                }
                let (pool, fallback) = if op == ReverseOp::Add {
                    let bucket: Vec<usize> = (0..fresh.len())
                        .filter(|&i| {
                            let v = scene.object(&fresh[i]).expect("fresh uid").volume();
                            cfg.bucket_admits(progress, v)
                        })
                        .collect();
                    if bucket.is_empty() {
                        ((0..fresh.len()).collect(), true)
                    } else {
                        (bucket, false)
                    }
                } else {
                    ((0..fresh.len()).collect::<Vec<usize>>(), false)
                };
                let uid = fresh.remove(pool[rng.random_range(0..pool.len())]);
                let mut edit = match op {
                    ReverseOp::Add => reverse_add(&mut scene, &uid, catalog),
                    ReverseOp::Move => reverse_move(&mut scene, &uid, rng),
                    ReverseOp::Rotate => reverse_rotate(&mut scene, &uid, rng),
                    ReverseOp::Scale => reverse_scale(&mut scene, &uid, rng, catalog),
                    ReverseOp::Replace => reverse_replace(&mut scene, &uid, rng, catalog),
                    ReverseOp::Remove => unreachable!("handled above"),
                }
                .expect("fresh uid is in the scene");
                edit.bucket_fallback = fallback;
                edits.push(edit);
            }
        }
        let after = scene.clone();
        turns.push(ReverseTurn { index: t, progress, is_final, before, edits, after });
        if scene.objects.is_empty() {
            break;
        }
    }
    Ok(ReverseChain { source, planned_turns: planned, turns })
}

fn instruction_for(scene: &Scene, catalog: &AssetCatalog) -> String {
    let mut counts: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for o in &scene.objects {
        let e = counts.entry(catalog.category_of(&o.description)).or_default();
        e.0 += 1;
        e.1 = e.1.max(o.volume());
    }
    let mut items: Vec<(&str, (usize, f64))> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1 .1.total_cmp(&a.1 .1).then_with(|| a.0.cmp(b.0)));
    let list: Vec<String> = items
        .iter()
        .map(|(c, (n, _))| if *n > 1 { format!("{c} x{n}") } else { c.to_string() })
        .collect();
    format!("Furnish the {} with: {}.", scene.room.room_type, list.join(", "))
}

fn cot_stub(before: &Scene, calls: &[ToolCall]) -> String {
    let dirty = !check_physics(before, &PhysicsConfig::default()).is_clean();
    let structural = calls.iter().any(|c| {
        matches!(c.action, Action::AddObject { .. } | Action::RemoveObject { .. } | Action::ReplaceObject { .. })
    });
    let class = if dirty {
        "Physical Conflict"
    } else if structural {
        "Layout Rationality"
    } else {
        "Spatial Distribution"
    };
    let steps: Vec<String> = calls
        .iter()
        .map(|c| match c.action.target() {
            Some(uid) => format!("{} {uid}", c.action.name()),
            None => match &c.action {
                Action::AddObject { description, .. } => format!("add_object {description}"),
                other => other.name().to_string(),
            },
        })
        .collect();
    format!("Diagnosis: {class}. Plan: {}.", steps.join("; "))
}

/// Flip a reverse chain into a forward construction chain.
pub fn invert(reverse: &ReverseChain, catalog: &AssetCatalog) -> EditChain {
    let mut turns = Vec::with_capacity(reverse.turns.len());
    for rt in reverse.turns.iter().rev() {
        let forward_calls: Vec<ToolCall> = rt
            .edits
            .iter()
            .rev()
            .flat_map(|e| e.forward.iter().cloned())
            .enumerate()
            .map(|(k, a)| ToolCall::new(format!("tool_{}", k + 1), a))
            .collect();
        let scene_before = canonicalize(&rt.after);
        let cot = cot_stub(&scene_before, &forward_calls);
        turns.push(ChainTurn {
            scene_before,
            forward_calls,
            scene_after: canonicalize(&rt.before),
            cot_stub: cot,
        });
    }
    EditChain {
        instruction: instruction_for(&reverse.source, catalog),
        turns,
        final_scene: reverse.source.clone(),
    }
}

/// Apply every forward call from the chain's initial scene.
///
/// Any penalty is a hard error; each turn must land exactly on its recorded
/// `scene_after`. Returns the terminal scene in canonical object order.
pub fn replay(chain: &EditChain, catalog: &AssetCatalog) -> Result<Scene, ChainError> {
    let Some(first) = chain.turns.first() else {
        return Ok(Scene::empty(chain.final_scene.room.clone()));
    };
    if !first.scene_before.objects.is_empty() {
        return Err(ChainError::Replay { turn: 0, detail: "initial scene is not empty".into() });
    }
    let mut scene = first.scene_before.clone();
    for (t, turn) in chain.turns.iter().enumerate() {
        for call in &turn.forward_calls {
            let (next, penalties) = apply_tool_call(&scene, call, catalog);
            if let Some(p) = penalties.first() {
                return Err(ChainError::Replay { turn: t, detail: p.detail.clone() });
            }
            scene = next;
        }
        scene = canonicalize(&scene);
        if scene != turn.scene_after {
            return Err(ChainError::Replay { turn: t, detail: "state differs from recorded scene_after".into() });
        }
    }
    if scene != chain.final_scene {
        return Err(ChainError::Replay { turn: chain.turns.len(), detail: "terminal state differs from final_scene".into() });
    }
    Ok(scene)
}

/// Rule-based stand-in for the chain-evaluation judge.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockChainJudge;

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl ChainJudge for MockChainJudge {
    fn score_chain(&self, chain: &EditChain, catalog: &AssetCatalog) -> Result<ChainScore, ChainError> {
        let cfg = PhysicsConfig::default();
        let n = chain.turns.len().max(1) as f64;
        let mut counts = vec![0usize];
        counts.extend(chain.turns.iter().map(|t| check_physics(&t.scene_after, &cfg).violation_count()));
        let steps: Vec<(usize, usize)> = counts.windows(2).map(|w| (w[0], w[1])).collect();

        // Coherence: violations never grow, and added volume shrinks over time.
        let mono = steps.iter().filter(|(a, b)| b <= a).count() as f64 / n;
        let add_means: Vec<f64> = chain
            .turns
            .iter()
            .filter_map(|t| {
                let vols: Vec<f64> = t
                    .forward_calls
                    .iter()
                    .filter_map(|c| match &c.action {
                        Action::AddObject { size, .. } => Some(size.volume()),
                        _ => None,
                    })
                    .collect();
                (!vols.is_empty()).then(|| mean(&vols))
            })
            .collect();
        let c2f = if add_means.len() < 2 {
            1.0
        } else {
            add_means.windows(2).filter(|w| w[1] <= w[0]).count() as f64 / (add_means.len() - 1) as f64
        };
        let coherence = (25.0 * mono + 15.0 * c2f).round() as u32;

        // Naturalness: balanced turn lengths and a mix of tools.
        let lens: Vec<f64> = chain.turns.iter().map(|t| t.forward_calls.len() as f64).collect();
        let mu = mean(&lens);
        let var = mean(&lens.iter().map(|l| (l - mu).powi(2)).collect::<Vec<_>>());
        let cv2 = if mu > 0.0 { var / (mu * mu) } else { 0.0 };
        let kinds: std::collections::BTreeSet<&str> =
            chain.turns.iter().flat_map(|t| t.forward_calls.iter().map(|c| c.action.name())).collect();
        let naturalness =
            (35.0 * (0.6 / (1.0 + cv2) + 0.4 * (kinds.len() as f64 / 3.0).min(1.0))).round() as u32;

        // Instruction following: coverage of requested categories grows.
        let mut wanted = catalog.categories_in_text(&chain.instruction);
        wanted.sort();
        wanted.dedup();
        let coverage = |s: &Scene| {
            if wanted.is_empty() {
                return 1.0;
            }
            let present = wanted
                .iter()
                .filter(|w| s.objects.iter().any(|o| catalog.category_of(&o.description) == w.as_str()))
                .count();
            present as f64 / wanted.len() as f64
        };
        let mut covs = vec![0.0];
        covs.extend(chain.turns.iter().map(|t| coverage(&t.scene_after)));
        let cov_mono = covs.windows(2).filter(|w| w[1] >= w[0]).count() as f64 / n;
        let cov_final = covs.last().copied().unwrap_or(0.0);
        let instruction_following = (15.0 * (0.5 * cov_mono + 0.5 * cov_final)).round() as u32;

        // Visual transition: penalize turns that add violations.
        let increases: usize = steps.iter().map(|(a, b)| b.saturating_sub(*a)).sum();
        let visual_transition = (10.0 * (1.0 - (increases as f64 / n).min(1.0))).round() as u32;

        let overall = coherence + naturalness + instruction_following + visual_transition;
        let mut strengths = Vec::new();
        let mut weaknesses = Vec::new();
        if c2f >= 1.0 {
            strengths.push("large furniture placed before small items");
        } else {
            weaknesses.push("object sizes do not shrink monotonically across turns");
        }
        if increases == 0 {
            strengths.push("no turn introduces new physical violations");
        } else {
            weaknesses.push("some turns introduce new physical violations");
        }
        if cov_final >= 1.0 {
            strengths.push("all requested categories present at the end");
        }
        Ok(ChainScore {
            coherence,
            naturalness,
            instruction_following,
            visual_transition,
            overall,
            reasoning: format!(
                "{} turns, {} tool kinds, {increases} violation increases, final coverage {:.2}",
                chain.turns.len(),
                kinds.len(),
                cov_final
            ),
            strengths: strengths.join("; "),
            weaknesses: weaknesses.join("; "),
        })
    }
}

/// A retained chain together with its provenance.
#[derive(Debug, Clone)]
pub struct RetainedChain {
    pub scene_id: String,
    pub rank: usize,
    pub candidate: usize,
    pub seed: u64,
    pub chain: EditChain,
    pub score: ChainScore,
    /// Reverse edits of this chain, in reverse-time order.
    pub reverse: ReverseChain,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub chains: Vec<RetainedChain>,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub n_candidates: usize,
    pub keep: usize,
    /// Retries per candidate when a draw is rejected.
    pub max_attempts: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { n_candidates: 10, keep: 3, max_attempts: 10 }
    }
}

/// One candidate: dismantle, invert and verify, retrying rejected draws.
pub fn synthesize_candidate(
    scene_id: &str,
    scene: &Scene,
    cfg: &ChainConfig,
    k: usize,
    max_attempts: usize,
    catalog: &AssetCatalog,
) -> Result<(u64, ReverseChain, EditChain), ChainError> {
    for attempt in 0..max_attempts.max(1) {
        let seed = candidate_seed(cfg.seed, scene_id, k, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reverse = dismantle(scene, cfg, &mut rng, catalog)?;
        let chain = invert(&reverse, catalog);
        if !(cfg.turns_min..=cfg.turns_max).contains(&chain.turns.len()) {
            log::debug!("{scene_id} candidate {k} attempt {attempt}: {} turns, redrawing", chain.turns.len());
            continue;
        }
        match replay(&chain, catalog) {
            Ok(_) => return Ok((seed, reverse, chain)),
            Err(e) => log::warn!("{scene_id} candidate {k} attempt {attempt}: {e}"),
        }
    }
    Err(ChainError::Exhausted { scene: scene_id.into(), attempts: max_attempts })
}

fn synthesize_scene(
    scene_id: &str,
    scene: &Scene,
    cfg: &ChainConfig,
    opts: &SynthOptions,
    judge: &dyn ChainJudge,
    catalog: &AssetCatalog,
) -> Result<Vec<RetainedChain>, ChainError> {
    if !check_physics(scene, &PhysicsConfig::default()).is_clean() {
        return Err(ChainError::DirtySource(scene_id.into()));
    }
    let mut scored = Vec::with_capacity(opts.n_candidates);
    for k in 0..opts.n_candidates {
        let (seed, reverse, chain) = synthesize_candidate(scene_id, scene, cfg, k, opts.max_attempts, catalog)?;
        let score = judge.score_chain(&chain, catalog)?;
        scored.push((k, seed, reverse, chain, score));
    }
    // Stable sort keeps earlier candidates first among equal scores.
    scored.sort_by_key(|c| std::cmp::Reverse(c.4.overall));
    Ok(scored
        .into_iter()
        .take(opts.keep)
        .enumerate()
        .map(|(rank, (candidate, seed, reverse, chain, score))| RetainedChain {
            scene_id: scene_id.into(),
            rank,
            candidate,
            seed,
            chain,
            score,
            reverse,
        })
        .collect())
}

/// Generate, score and filter chains for every scene.
pub fn synthesize_dataset(
    scenes: &[(String, Scene)],
    cfg: &ChainConfig,
    opts: &SynthOptions,
    judge: &dyn ChainJudge,
    catalog: &AssetCatalog,
    exec: Execution,
) -> Result<Dataset, ChainError> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(ChainError::InvalidConfig("no input scenes".into()));
    }
    let per_scene = exec.map(scenes, |(id, s)| synthesize_scene(id, s, cfg, opts, judge, catalog));
    let mut chains = Vec::new();
    for r in per_scene {
        chains.extend(r?);
    }
    Ok(Dataset { chains })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub scene_id: String,
    pub chain_path: String,
    pub overall_score: u32,
}

/// Write `<out>/<scene_id>/chain_<rank>.json`, per-scene `scores.json`,
/// and `<out>/index.jsonl`.
pub fn write_dataset(dataset: &Dataset, out: &Path) -> Result<Vec<IndexEntry>, ChainError> {
    fs::create_dir_all(out)?;
    let mut index = Vec::new();
    let mut scores: BTreeMap<&str, Vec<serde_json::Value>> = BTreeMap::new();
    for rc in &dataset.chains {
        let dir = out.join(&rc.scene_id);
        fs::create_dir_all(&dir)?;
        let name = format!("chain_{}.json", rc.rank);
        fs::write(dir.join(&name), to_canonical_json(&rc.chain) + "\n")?;
        scores.entry(&rc.scene_id).or_default().push(serde_json::json!({
            "chain": name,
            "candidate": rc.candidate,
            "seed": rc.seed,
            "score": rc.score,
        }));
        index.push(IndexEntry {
            scene_id: rc.scene_id.clone(),
            chain_path: format!("{}/{name}", rc.scene_id),
            overall_score: rc.score.overall,
        });
    }
    for (id, list) in scores {
        fs::write(out.join(id).join("scores.json"), to_canonical_json(&list) + "\n")?;
    }
    let lines: String = index.iter().map(|e| to_canonical_json(e) + "\n").collect();
    fs::write(out.join("index.jsonl"), lines)?;
    Ok(index)
}

pub fn read_chain(path: &Path) -> Result<EditChain, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
