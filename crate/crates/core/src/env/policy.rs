use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, HttpPolicy, Observation};
use crate::assets::AssetCatalog;
use crate::canon::to_canonical_json;
use crate::chain_synth::{random_floor_point, splitmix64, EditChain};
use crate::fixtures::FIXTURE_ROOMS;
use crate::layout::{footprint, supporters_for, Packer};
use crate::scene::{
    fresh_uid, parse_scene_json, serialize_scene, Action, Phase, RoomGeometry, Rotation, Scene, ToolCall, Vec3,
};

pub trait Policy {
    /// Raw agent text for the observation.
    fn act(&mut self, obs: &Observation) -> Result<String, EnvError>;
}

fn create_text(scene: &Scene) -> String {
    format!("<create_scene>{}</create_scene>", serialize_scene(scene))
}

fn edit_text(think: &str, calls: &[ToolCall]) -> String {
    format!("<think>{think}</think>\n<tool_calls>{}</tool_calls>", to_canonical_json(calls))
}

fn terminate(reason: &str) -> ToolCall {
    ToolCall::new("terminate", Action::Terminate { reason: reason.to_string() })
}

/// Plays back a synthesized chain turn by turn.
pub struct ReplayPolicy {
    chain: EditChain,
}

impl ReplayPolicy {
    pub fn new(chain: EditChain) -> Self {
        Self { chain }
    }
}

impl Policy for ReplayPolicy {
    fn act(&mut self, obs: &Observation) -> Result<String, EnvError> {
        if obs.phase == Phase::Init {
            let start = self
                .chain
                .turns
                .first()
                .map_or_else(|| Scene::empty(self.chain.final_scene.room.clone()), |t| t.scene_before.clone());
            return Ok(create_text(&start));
        }
        let k = obs.turn - 1;
        let Some(turn) = self.chain.turns.get(k) else {
            return Ok(edit_text("Diagnosis: the chain is complete. Plan: stop.", &[terminate("done")]));
        };
        let mut calls = turn.forward_calls.clone();
        if k + 1 == self.chain.turns.len() {
            calls.push(terminate("chain complete"));
        }
        Ok(edit_text(&turn.cot_stub, &calls))
    }
}

/// Uniformly random edits, occasionally malformed; a fuzzing baseline.
pub struct RandomPolicy<'a> {
    rng: ChaCha8Rng,
    catalog: &'a AssetCatalog,
}

impl<'a> RandomPolicy<'a> {
    pub fn new(seed: u64, catalog: &'a AssetCatalog) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(splitmix64(seed)), catalog }
    }

    fn random_call(&mut self, scene: &Scene, id: usize) -> ToolCall {
        let uids: Vec<String> = scene.objects.iter().map(|o| o.uid.clone()).collect();
        let id = format!("tool_{id}");
        let choice = if uids.is_empty() { 0 } else { self.rng.random_range(0..6) };
        // Only adds are drawn for an empty room, so `target` is unused there.
        let target = if uids.is_empty() { String::new() } else { uids[self.rng.random_range(0..uids.len())].clone() };
        let categories: Vec<&str> = self.catalog.categories().collect();
        let action = match choice {
            0 => {
                let category = categories[self.rng.random_range(0..categories.len())];
                let entry = self.catalog.entries_for(category).next().expect("category has entries");
                let (x, z) = random_floor_point(scene, &mut self.rng);
                let size = entry.canonical_size;
                Action::AddObject {
                    description: category.to_string(),
                    position: Vec3::new(x, size.y / 2.0, z),
                    rotation: Rotation::from_yaw(self.rng.random_range(0.0..std::f64::consts::TAU)),
                    size,
                    uid: None,
                }
            }
            1 => {
                let (x, z) = random_floor_point(scene, &mut self.rng);
                let y = scene.object(&target).map_or(0.5, |o| o.position.y);
                Action::MoveObject { uid: target, new_position: Vec3::new(x, y, z) }
            }
            2 => Action::RotateObject {
                uid: target,
                new_rotation: Rotation::from_yaw(self.rng.random_range(0.0..std::f64::consts::TAU)),
            },
            3 => {
                let k = self.rng.random_range(0.6..1.4);
                let size = scene.object(&target).map_or(Vec3::new(1.0, 1.0, 1.0), |o| o.size.scale(k));
                Action::ScaleObject { uid: target, new_size: size }
            }
            4 => Action::RemoveObject { uid: target },
            _ => {
                let category = categories[self.rng.random_range(0..categories.len())];
                Action::ReplaceObject { uid: target, new_description: category.to_string() }
            }
        };
        ToolCall::new(id, action)
    }
}

impl Policy for RandomPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Result<String, EnvError> {
        if obs.phase == Phase::Init {
            if self.rng.random_bool(0.05) {
                return Ok("<create_scene>{not json</create_scene>".into());
            }
            let room_type =
                self.catalog.infer_room_type(&obs.instruction).unwrap_or(FIXTURE_ROOMS[self.rng.random_range(0..4)]);
            let w = (self.rng.random_range(3.0..6.0) * 10.0_f64).round() / 10.0;
            let d = (self.rng.random_range(3.0..6.0) * 10.0_f64).round() / 10.0;
            return Ok(create_text(&Scene::empty(RoomGeometry::rectangle(w, d, 2.8, room_type, "random_room"))));
        }
        let Ok(scene) = parse_scene_json(&obs.scene_json) else {
            return Ok(edit_text("Diagnosis: unreadable scene. Plan: stop.", &[terminate("unreadable scene")]));
        };
        let n = self.rng.random_range(1..=3);
        let mut calls: Vec<ToolCall> = (1..=n).map(|i| self.random_call(&scene, i)).collect();
        if self.rng.random_bool(0.1) {
            calls.push(terminate("random stop"));
        }
        let text = edit_text("Diagnosis: unclear. Plan: try something.", &calls);
        Ok(match self.rng.random_range(0..20) {
            0 => text.replace("</tool_calls>", ""),
            1 => format!("<tool_calls>{}</tool_calls><think>late</think>", to_canonical_json(&calls)),
            _ => text,
        })
    }
}

/// Builds the mandatory furniture set for the instruction's room type,
/// large pieces first, in up to three turns.
pub struct GreedyBuilderPolicy<'a> {
    catalog: &'a AssetCatalog,
    rng: ChaCha8Rng,
    plan: Option<Vec<(String, Vec<ToolCall>)>>,
    next: usize,
}

/// Volume buckets: large, medium, small (m³).
const BUCKETS: [(&str, f64); 3] = [("large", 2.0), ("medium", 0.5), ("small", 0.0)];
const ROOM_ATTEMPTS: usize = 20;

impl<'a> GreedyBuilderPolicy<'a> {
    pub fn new(seed: u64, catalog: &'a AssetCatalog) -> Self {
        Self { catalog, rng: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x6772_6565_6479)), plan: None, next: 0 }
    }

    fn room_type(&self, instruction: &str) -> String {
        self.catalog.infer_room_type(instruction).unwrap_or("bedroom").to_string()
    }

    fn draw_room(&mut self, room_type: &str) -> RoomGeometry {
        let area = self.rng.random_range(18.0..=27.5);
        let w = (self.rng.random_range(4.2..=5.8) * 10.0_f64).round() / 10.0;
        let d = ((area / w) * 10.0_f64).floor() / 10.0;
        RoomGeometry::rectangle(w, d, 2.8, room_type, "greedy_room")
    }

    /// Pack the missing mandatory objects into `scene`; returns the turn
    /// plan and whether everything fit.
    fn pack(&mut self, scene: &Scene, room_type: &str, instruction: &str) -> (Vec<(String, Vec<ToolCall>)>, bool) {
        let catalog = self.catalog;
        let mut wanted = catalog.mandatory_objects(room_type, instruction).unwrap_or_default();
        for o in &scene.objects {
            if let Some(i) = wanted.iter().position(|c| c == catalog.category_of(&o.description)) {
                wanted.remove(i);
            }
        }
        let mut items: Vec<(String, Vec3)> = wanted
            .into_iter()
            .filter_map(|c| catalog.entries_for(&c).next().map(|e| (c.clone(), e.canonical_size)))
            .collect();
        items.sort_by(|a, b| {
            let sa = !supporters_for(&a.0).is_empty();
            let sb = !supporters_for(&b.0).is_empty();
            sa.cmp(&sb).then(footprint(b.1).total_cmp(&footprint(a.1)))
        });
        let mut packer = Packer::with_existing(scene, catalog, 0.05);
        let mut mirror = scene.clone();
        let mut all = true;
        for (category, size) in &items {
            let uid = fresh_uid(&mirror, category);
            match packer.place(&uid, category, *size, Some(&mut self.rng)) {
                Some(obj) => mirror.objects.push(obj),
                None => all = false,
            }
        }
        let added = &mirror.objects[scene.objects.len()..];
        let mut plan = Vec::new();
        for (i, (label, floor)) in BUCKETS.iter().enumerate() {
            let ceil = if i == 0 { f64::INFINITY } else { BUCKETS[i - 1].1 };
            let calls: Vec<ToolCall> = added
                .iter()
                .filter(|o| o.volume() >= *floor && o.volume() < ceil)
                .enumerate()
                .map(|(k, o)| {
                    ToolCall::new(
                        format!("tool_{}", k + 1),
                        Action::AddObject {
                            description: o.description.clone(),
                            position: o.position,
                            rotation: o.rotation,
                            size: o.size,
                            uid: Some(o.uid.clone()),
                        },
                    )
                })
                .collect();
            if !calls.is_empty() {
                plan.push((label.to_string(), calls));
            }
        }
        (plan, all)
    }
}

impl Policy for GreedyBuilderPolicy<'_> {
    fn act(&mut self, obs: &Observation) -> Result<String, EnvError> {
        let room_type = self.room_type(&obs.instruction);
        if obs.phase == Phase::Init {
            let mut best: Option<(Scene, Vec<(String, Vec<ToolCall>)>, usize)> = None;
            for _ in 0..ROOM_ATTEMPTS {
                let room = Scene::empty(self.draw_room(&room_type));
                let (plan, all) = self.pack(&room, &room_type, &obs.instruction);
                let placed: usize = plan.iter().map(|p| p.1.len()).sum();
                if best.as_ref().is_none_or(|b| placed > b.2) {
                    best = Some((room, plan, placed));
                }
                if all {
                    break;
                }
            }
            let (room, plan, _) = best.expect("at least one attempt");
            self.plan = Some(plan);
            return Ok(create_text(&room));
        }
        if self.plan.is_none() {
            let scene = parse_scene_json(&obs.scene_json)
                .map_err(|e| EnvError::PolicyTransport(format!("greedy policy got an unreadable scene: {e}")))?;
            self.plan = Some(self.pack(&scene, &room_type, &obs.instruction).0);
        }
        let plan = self.plan.as_ref().expect("planned above");
        let Some((label, calls)) = plan.get(self.next) else {
            return Ok(edit_text("Diagnosis: nothing left to place. Plan: stop.", &[terminate("complete")]));
        };
        let mut calls = calls.clone();
        let names: Vec<&str> = calls
            .iter()
            .filter_map(|c| match &c.action {
                Action::AddObject { description, .. } => Some(description.as_str()),
                _ => None,
            })
            .collect();
        let think = format!(
            "Diagnosis: the room lacks its {label} furniture. Plan: place {} without overlaps.",
            names.join(", ")
        );
        self.next += 1;
        if self.next == plan.len() {
            calls.push(terminate("all mandatory objects placed"));
        }
        Ok(edit_text(&think, &calls))
    }
}

/// A policy description that can be instantiated per episode, including
/// inside parallel batches.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Replay(Box<EditChain>),
    Random { seed: u64 },
    Greedy { seed: u64 },
    Http { url: String, timeout: Duration },
}

impl PolicySpec {
    pub fn build<'a>(&self, catalog: &'a AssetCatalog) -> Result<Box<dyn Policy + 'a>, EnvError> {
        Ok(match self {
            PolicySpec::Replay(chain) => Box::new(ReplayPolicy::new((**chain).clone())),
            PolicySpec::Random { seed } => Box::new(RandomPolicy::new(*seed, catalog)),
            PolicySpec::Greedy { seed } => Box::new(GreedyBuilderPolicy::new(*seed, catalog)),
            PolicySpec::Http { url, timeout } => Box::new(HttpPolicy::new(url, *timeout)),
        })
    }
}
