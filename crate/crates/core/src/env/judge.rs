use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::assets::AssetCatalog;
use crate::metrics::{check_physics, PhysicsConfig};
use crate::rewards::{key_presence, Consolidated};
use crate::scene::{room_area, serialize_scene, Scene};

/// Episode-level facts every judge call may need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeContext {
    pub instruction: String,
    pub room_type: String,
    pub mandatory: Vec<String>,
    pub essential: Option<String>,
}

pub trait Judge: Sync {
    /// `+1` improved, `0` no clear change, `-1` unchanged or worse.
    fn improvement(&self, prev: &Scene, cur: &Scene, ctx: &JudgeContext) -> Result<i8, EnvError>;
    fn mandatory_objects(&self, room_type: &str, instruction: &str) -> Result<Vec<String>, EnvError>;
    fn consolidated(&self, scene: &Scene, ctx: &JudgeContext) -> Result<Consolidated, EnvError>;
}

/// Deterministic rule-based judge.
#[derive(Debug, Clone, Copy)]
pub struct MockJudge<'a> {
    pub catalog: &'a AssetCatalog,
    pub physics: PhysicsConfig,
}

impl<'a> MockJudge<'a> {
    pub fn new(catalog: &'a AssetCatalog) -> Self {
        Self { catalog, physics: PhysicsConfig::default() }
    }

    fn coverage(&self, scene: &Scene, ctx: &JudgeContext) -> usize {
        key_presence(scene, &ctx.mandatory, ctx.essential.as_deref(), self.catalog).found
    }
}

/// Plausible floor area for a room type, in m².
fn area_band(room_type: &str) -> (f64, f64) {
    match room_type {
        "bedroom" | "dining room" | "study room" => (10.0, 25.0),
        "living room" => (15.0, 35.0),
        _ => (10.0, 30.0),
    }
}

impl Judge for MockJudge<'_> {
    fn improvement(&self, prev: &Scene, cur: &Scene, ctx: &JudgeContext) -> Result<i8, EnvError> {
        if serialize_scene(prev) == serialize_scene(cur) {
            return Ok(-1);
        }
        let v0 = check_physics(prev, &self.physics).violation_count();
        let v1 = check_physics(cur, &self.physics).violation_count();
        let (c0, c1) = (self.coverage(prev, ctx), self.coverage(cur, ctx));
        Ok(if v1 < v0 || (c1 > c0 && v1 <= v0) {
            1
        } else if v1 > v0 || c1 < c0 {
            -1
        } else {
            0
        })
    }

    fn mandatory_objects(&self, room_type: &str, instruction: &str) -> Result<Vec<String>, EnvError> {
        Ok(self
            .catalog
            .mandatory_objects(room_type, instruction)
            .unwrap_or_else(|_| self.catalog.categories_in_text(instruction)))
    }

    fn consolidated(&self, scene: &Scene, ctx: &JudgeContext) -> Result<Consolidated, EnvError> {
        let n = scene.objects.len();
        if n == 0 {
            return Ok(Consolidated { rationality: -1.0, requirement_match: -1.0, scene_graph: -1.0 });
        }
        let report = check_physics(scene, &self.physics);
        let bad = report.violation_count() as f64 / n as f64;
        let rationality = match bad {
            0.0 => 1.0,
            b if b <= 0.1 => 0.5,
            b if b <= 0.25 => 0.0,
            b if b <= 0.5 => -0.5,
            _ => -1.0,
        };
        let key = key_presence(scene, &ctx.mandatory, ctx.essential.as_deref(), self.catalog);
        let cov = if key.total == 0 { 0.0 } else { key.found as f64 / key.total as f64 };
        let mut requirement_match = match cov {
            c if c >= 0.99 => 1.0,
            c if c >= 0.75 => 0.5,
            c if c >= 0.5 => 0.0,
            c if c >= 0.25 => -0.5,
            _ => -1.0,
        };
        if key.essential_missing {
            requirement_match = f64::min(requirement_match, -0.5);
        }
        let (lo, hi) = area_band(&ctx.room_type);
        let area_ok = room_area(&scene.room).is_ok_and(|a| (lo..=hi).contains(&a));
        let mut scene_graph = if area_ok { 1.0 } else { 0.0 };
        if !report.unsupported.is_empty() {
            scene_graph -= 0.5;
        }
        Ok(Consolidated { rationality, requirement_match, scene_graph })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{RoomGeometry, SceneObject, Vec3};

    fn ctx() -> JudgeContext {
        JudgeContext {
            instruction: "a bedroom".into(),
            room_type: "bedroom".into(),
            mandatory: vec!["double bed".into(), "nightstand".into()],
            essential: Some("double bed".into()),
        }
    }

    fn cube(uid: &str, x: f64) -> SceneObject {
        SceneObject::new(uid, "box", Vec3::new(x, 0.25, 2.0), 0.0, Vec3::new(0.5, 0.5, 0.5))
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene { room: RoomGeometry::rectangle(5.0, 4.0, 2.8, "bedroom", "r"), objects }
    }

    #[test]
    fn identical_scenes_score_minus_one() {
        let j = MockJudge::new(AssetCatalog::builtin());
        let s = scene(vec![cube("a", 1.0)]);
        assert_eq!(j.improvement(&s, &s.clone(), &ctx()).unwrap(), -1);
    }

    #[test]
    fn fewer_collisions_improve() {
        let j = MockJudge::new(AssetCatalog::builtin());
        // Three colliding pairs' worth of members down to one pair.
        let before = scene(vec![cube("a", 1.0), cube("b", 1.2), cube("c", 1.4), cube("d", 3.0), cube("e", 3.2)]);
        let after = scene(vec![cube("a", 1.0), cube("b", 1.2), cube("c", 2.2), cube("d", 3.0), cube("e", 4.0)]);
        let (v0, v1) = (
            check_physics(&before, &j.physics).colliding.len(),
            check_physics(&after, &j.physics).colliding.len(),
        );
        assert!(v1 < v0);
        assert_eq!(j.improvement(&before, &after, &ctx()).unwrap(), 1);
    }

    #[test]
    fn neutral_move_is_zero() {
        let j = MockJudge::new(AssetCatalog::builtin());
        let before = scene(vec![cube("a", 1.0)]);
        let after = scene(vec![cube("a", 2.0)]);
        assert_eq!(j.improvement(&before, &after, &ctx()).unwrap(), 0);
        let worse = scene(vec![cube("a", 4.9)]);
        assert_eq!(j.improvement(&before, &worse, &ctx()).unwrap(), -1);
    }

    #[test]
    fn consolidated_scores_are_on_grid() {
        let j = MockJudge::new(AssetCatalog::builtin());
        for objs in [vec![], vec![cube("a", 1.0)], vec![cube("a", 1.0), cube("b", 1.1)]] {
            assert!(j.consolidated(&scene(objs), &ctx()).unwrap().is_conforming());
        }
    }
}
