//! Rule-based physics repair.
//!
//! Each iteration pulls out-of-bounds objects 0.2 m toward the room
//! centroid, then pushes the smaller member of every colliding pair out of
//! the way, deleting it when no candidate spot is free.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{horizontal_mtv, obb_from_object, oob_excess, pair_penetration, Point};
use crate::metrics::{check_physics, PhysicsConfig, ViolationReport};
use crate::scene::{Scene, SceneObject, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub max_steps: usize,
    /// Length of one center-ward step for out-of-bounds objects.
    pub oob_step: f64,
    /// Extra clearance added to the separating translation.
    pub margin: f64,
    pub physics: PhysicsConfig,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self { max_steps: 5, oob_step: 0.2, margin: 0.02, physics: PhysicsConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveReason {
    OutOfBounds,
    Collision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub iteration: usize,
    pub uid: String,
    pub from: Vec3,
    pub to: Vec3,
    pub reason: MoveReason,
}

/// One collision handled in phase 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionAttempt {
    pub iteration: usize,
    pub pair: (String, String),
    pub volumes: (f64, f64),
    pub target: String,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    pub steps_run: usize,
    pub moved: Vec<MoveRecord>,
    pub deleted: Vec<String>,
    pub attempts: Vec<CollisionAttempt>,
    /// `|C| + |U|` at the head of every iteration.
    pub violation_counts: Vec<usize>,
    pub residual: ViolationReport,
}

/// Position after one center-ward step in the XZ plane.
pub fn step_toward(position: Vec3, center: Point, step: f64) -> Vec3 {
    let (dx, dz) = (center.0 - position.x, center.1 - position.z);
    let len = (dx * dx + dz * dz).sqrt();
    if len < 1e-12 {
        return position;
    }
    Vec3::new(position.x + step * dx / len, position.y, position.z + step * dz / len).quantized()
}

fn placement_ok(obj: &SceneObject, scene: &Scene, ignore: &BTreeSet<String>, cfg: &PhysicsConfig) -> bool {
    if oob_excess(obj, &scene.room).0 > cfg.eps_oob {
        return false;
    }
    let me = obb_from_object(obj);
    scene
        .objects
        .iter()
        .filter(|o| o.uid != obj.uid && !ignore.contains(&o.uid))
        .all(|o| pair_penetration(&me, &obb_from_object(o)) <= cfg.eps_col)
}

/// Try to translate `target` off everything it overlaps.
///
/// Candidates: both directions along the separating axis of the deepest
/// overlap, then six compass directions 60° apart (random phase), all at
/// `overlap + margin`; the whole set is retried once at twice the length.
/// Objects in `ignore` (already slated for deletion) do not block.
pub fn resolve_collision(
    scene: &Scene,
    target: &str,
    ignore: &BTreeSet<String>,
    cfg: &OptConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Vec3> {
    let obj = scene.object(target)?;
    let me = obb_from_object(obj);
    let overlaps: Vec<(Point, f64)> = scene
        .objects
        .iter()
        .filter(|o| o.uid != target && !ignore.contains(&o.uid))
        .map(obb_from_object)
        .filter(|o| pair_penetration(&me, o) > cfg.physics.eps_col)
        .filter_map(|o| horizontal_mtv(&me, &o))
        .collect();
    let worst = overlaps.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1))?;
    let base = worst.1 + cfg.margin;
    let (ax, az) = worst.0;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut dirs = vec![(-ax, -az), (ax, az)];
    dirs.extend((0..6).map(|k| {
        let a = phase + k as f64 * std::f64::consts::FRAC_PI_3;
        (a.cos(), a.sin())
    }));
    for scale in [1.0, 2.0] {
        for &(dx, dz) in &dirs {
            let m = base * scale;
            let p = obj.position;
            let mut moved = obj.clone();
            moved.position = Vec3::new(p.x + dx * m, p.y, p.z + dz * m).quantized();
            if placement_ok(&moved, scene, ignore, &cfg.physics) {
                return Some(moved.position);
            }
        }
    }
    None
}

pub fn optimize(scene: &Scene, cfg: &OptConfig, rng: &mut ChaCha8Rng) -> (Scene, OptReport) {
    let mut scene = scene.clone();
    let center = scene.room.centroid();
    let mut report = OptReport {
        steps_run: 0,
        moved: Vec::new(),
        deleted: Vec::new(),
        attempts: Vec::new(),
        violation_counts: Vec::new(),
        residual: ViolationReport::default(),
    };
    let mut converged = false;
    for it in 0..cfg.max_steps {
        report.steps_run = it + 1;
        let head = check_physics(&scene, &cfg.physics);
        report.violation_counts.push(head.violation_count());
        if head.colliding.is_empty() && head.oob.is_empty() {
            report.residual = head;
            converged = true;
            break;
        }

        for uid in &head.oob {
            let obj = scene.object_mut(uid).expect("reported uid");
            let from = obj.position;
            obj.position = step_toward(from, center, cfg.oob_step);
            report.moved.push(MoveRecord {
                iteration: it,
                uid: uid.clone(),
                from,
                to: obj.position,
                reason: MoveReason::OutOfBounds,
            });
        }

        // Pairs are re-detected after the center-ward moves so that phase 2
        // also sees collisions those moves created.
        let pairs = check_physics(&scene, &cfg.physics).pair_matrix;
        let mut doomed: BTreeSet<String> = BTreeSet::new();
        for pair in &pairs {
            if doomed.contains(&pair.a) || doomed.contains(&pair.b) {
                continue;
            }
            let (oa, ob) = (scene.object(&pair.a).expect("live"), scene.object(&pair.b).expect("live"));
            // An earlier resolution may already have separated this pair.
            if pair_penetration(&obb_from_object(oa), &obb_from_object(ob)) <= cfg.physics.eps_col {
                continue;
            }
            let volumes = (oa.volume(), ob.volume());
            let target = if volumes.1 < volumes.0 { &pair.b } else { &pair.a };
            let resolved = match resolve_collision(&scene, target, &doomed, cfg, rng) {
                Some(to) => {
                    let obj = scene.object_mut(target).expect("live");
                    report.moved.push(MoveRecord {
                        iteration: it,
                        uid: target.clone(),
                        from: obj.position,
                        to,
                        reason: MoveReason::Collision,
                    });
                    obj.position = to;
                    true
                }
                None => {
                    doomed.insert(target.clone());
                    false
                }
            };
            report.attempts.push(CollisionAttempt {
                iteration: it,
                pair: (pair.a.clone(), pair.b.clone()),
                volumes,
                target: target.clone(),
                resolved,
            });
        }

        for uid in doomed {
            scene.remove(&uid);
            report.deleted.push(uid);
        }
    }
    if !converged {
        report.residual = check_physics(&scene, &cfg.physics);
    }
    (scene, report)
}
