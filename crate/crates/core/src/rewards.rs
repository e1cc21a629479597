//! Hierarchical reward system: initialization, per-step, terminal and
//! trajectory rewards.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetCatalog;
use crate::metrics::{scene_ratios, SceneRatios, ViolationReport};
use crate::scene::{room_area, FormatPenalty, Scene};

pub const MAX_ROOM_AREA: f64 = 30.0;
pub const MIN_FINAL_OBJECTS: usize = 4;
pub const MIN_VALID_OBJECTS: usize = 3;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
    #[error("reading weights: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalWeights {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitWeights {
    pub r_init: f64,
}

/// `r_phy` is shared equally by its four curves, `r_sem` by its two judges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterativeWeights {
    pub r_fmt: f64,
    pub r_phy: f64,
    pub r_sem: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalWeights {
    pub fmt: f64,
    pub obj: f64,
    pub scene_physics: f64,
    pub scene_vlm: f64,
}

/// Weight table; the config file mirrors these sections key for key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub global: GlobalWeights,
    pub init: InitWeights,
    pub iterative: IterativeWeights,
    pub terminal: TerminalWeights,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            global: GlobalWeights { alpha: 0.4, beta: 0.6 },
            init: InitWeights { r_init: 1.0 },
            iterative: IterativeWeights { r_fmt: 0.10, r_phy: 0.40, r_sem: 0.50 },
            terminal: TerminalWeights { fmt: 0.10, obj: 0.30, scene_physics: 0.30, scene_vlm: 0.30 },
        }
    }
}

impl RewardWeights {
    pub fn phy_each(&self) -> f64 {
        self.iterative.r_phy / 4.0
    }

    pub fn sem_each(&self) -> f64 {
        self.iterative.r_sem / 2.0
    }

    /// Non-negative weights whose groups sum to at most one keep every
    /// composite inside `[-1, 1]`.
    pub fn validate(&self) -> Result<(), RewardError> {
        let all = [
            self.global.alpha,
            self.global.beta,
            self.init.r_init,
            self.iterative.r_fmt,
            self.iterative.r_phy,
            self.iterative.r_sem,
            self.terminal.fmt,
            self.terminal.obj,
            self.terminal.scene_physics,
            self.terminal.scene_vlm,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RewardError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let groups = [
            ("global", self.global.alpha + self.global.beta),
            ("init", self.init.r_init),
            ("iterative", self.iterative.r_fmt + self.iterative.r_phy + self.iterative.r_sem),
            (
                "terminal",
                self.terminal.fmt + self.terminal.obj + self.terminal.scene_physics + self.terminal.scene_vlm,
            ),
        ];
        for (name, sum) in groups {
            if sum > 1.0 + 1e-9 {
                return Err(RewardError::InvalidWeights(format!("{name} weights sum to {sum} > 1")));
            }
        }
        Ok(())
    }

    /// Load from `.toml` or `.json`, then validate.
    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let text = std::fs::read_to_string(path)?;
        let weights: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| RewardError::InvalidWeights(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| RewardError::InvalidWeights(e.to_string()))?
        };
        weights.validate()?;
        Ok(weights)
    }
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn normalize_label(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// `+1` for a usable initial room, `-1` for any structural defect.
pub fn init_reward(scene: Option<&Scene>, requested_room_type: &str) -> f64 {
    let Some(scene) = scene else { return -1.0 };
    if scene.room.bounds_bottom.len() < 4 {
        return -1.0;
    }
    match room_area(&scene.room) {
        Ok(area) if area > 0.0 && area <= MAX_ROOM_AREA => {}
        _ => return -1.0,
    }
    let requested = normalize_label(requested_room_type);
    if !requested.is_empty() && normalize_label(&scene.room.room_type) != requested {
        return -1.0;
    }
    1.0
}

/// `max(1 - Σ penalties, -1)`.
pub fn format_reward(penalties: &[FormatPenalty]) -> f64 {
    let p: f64 = penalties.iter().map(FormatPenalty::weight).sum();
    (1.0 - p).max(-1.0)
}

/// Collision-rate curve; `r_col` in percent.
pub fn collision_rate_reward(r_col: f64) -> f64 {
    let r = if r_col <= 20.0 {
        1.0 - 0.5 * (r_col / 20.0)
    } else if r_col <= 45.0 {
        0.5 - 0.5 * (r_col - 20.0) / 25.0
    } else {
        -(r_col - 45.0) / 55.0
    };
    clamp_unit(r)
}

/// Out-of-bounds-rate curve; `r_oob` in percent.
pub fn oob_rate_reward(r_oob: f64) -> f64 {
    let r = if r_oob <= 10.0 {
        1.0 - 0.5 * (r_oob / 10.0)
    } else if r_oob <= 30.0 {
        0.5 - 0.5 * (r_oob - 10.0) / 20.0
    } else {
        -(r_oob - 30.0) / 70.0
    };
    clamp_unit(r)
}

/// Total penetration depth curve (meters). The published curve has no
/// branch on (0.3, 0.6]; it is bridged linearly from 0 to -0.5.
pub fn penetration_reward(d_pen: f64) -> f64 {
    let r = if d_pen <= 0.1 {
        1.0 - 5.0 * d_pen
    } else if d_pen <= 0.3 {
        0.5 - 2.5 * (d_pen - 0.1)
    } else if d_pen <= 0.6 {
        -0.5 * (d_pen - 0.3) / 0.3
    } else if d_pen <= 1.0 {
        -0.5 - 1.25 * (d_pen - 0.6)
    } else {
        -1.0
    };
    clamp_unit(r)
}

/// Value of the second out-of-bounds-volume branch at its right end.
const OOB_VOL_KNEE: f64 = 0.5 - 1.67 * 0.3;

/// Out-of-bounds volume curve (m³). The published curve has no branch on
/// (0.5, 1.0]; it is bridged linearly from the second branch's endpoint
/// value (-0.001) to -0.5.
pub fn oob_volume_reward(v_oob: f64) -> f64 {
    let r = if v_oob <= 0.2 {
        1.0 - 2.5 * v_oob
    } else if v_oob <= 0.5 {
        0.5 - 1.67 * (v_oob - 0.2)
    } else if v_oob <= 1.0 {
        let t = (v_oob - 0.5) / 0.5;
        OOB_VOL_KNEE * (1.0 - t) - 0.5 * t
    } else if v_oob <= 2.0 {
        -0.5 - 0.5 * (v_oob - 1.0)
    } else {
        -1.0
    };
    clamp_unit(r)
}

/// `1 - max(0, r_unsup / 10)`, clamped to `[-1, 1]`.
pub fn support_reward(r_unsup: f64) -> f64 {
    clamp_unit(1.0 - (r_unsup / 10.0).max(0.0))
}

/// Mandatory-object presence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCheck {
    pub found: usize,
    pub total: usize,
    pub essential_missing: bool,
}

pub fn key_objects_score(found: usize, total: usize, essential_missing: bool) -> f64 {
    if essential_missing || total == 0 {
        return -1.0;
    }
    let r = found as f64 / total as f64;
    if r >= 0.99 {
        1.0
    } else if r > 0.5 {
        0.0
    } else {
        -1.0
    }
}

/// Match scene objects against a mandatory list, one object per entry.
pub fn key_presence(
    scene: &Scene,
    mandatory: &[String],
    essential: Option<&str>,
    catalog: &AssetCatalog,
) -> KeyCheck {
    let mut available: Vec<&str> = scene.objects.iter().map(|o| catalog.category_of(&o.description)).collect();
    let mut found = 0;
    for want in mandatory {
        if let Some(i) = available.iter().position(|c| c == want) {
            available.swap_remove(i);
            found += 1;
        }
    }
    let essential_missing = essential.is_some_and(|e| {
        !scene.objects.iter().any(|o| catalog.category_of(&o.description) == e)
    });
    KeyCheck { found, total: mandatory.len(), essential_missing }
}

/// Relevance of newly added objects: all relevant `1`, none `-1`,
/// otherwise `±0.5` by majority with ties counted against.
pub fn relevance_score(relevant: usize, irrelevant: usize) -> f64 {
    if irrelevant == 0 {
        1.0
    } else if relevant == 0 {
        -1.0
    } else if relevant > irrelevant {
        0.5
    } else {
        -0.5
    }
}

/// Objects whose size is plausible for their category.
pub fn size_valid_count(scene: &Scene, catalog: &AssetCatalog) -> usize {
    scene
        .objects
        .iter()
        .filter(|o| catalog.size_valid(catalog.category_of(&o.description), o.size))
        .count()
}

/// `clamp(1 - 2·invalid/total)`; an empty scene scores 1.
pub fn size_proportion_score(scene: &Scene, catalog: &AssetCatalog) -> f64 {
    let total = scene.objects.len();
    if total == 0 {
        return 1.0;
    }
    let invalid = total - size_valid_count(scene, catalog);
    clamp_unit(1.0 - 2.0 * invalid as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReward {
    pub r_fmt: f64,
    pub r_col: f64,
    pub r_oob: f64,
    pub r_pen: f64,
    pub r_oob_vol: f64,
    pub r_imp: f64,
    pub r_key: f64,
    pub r_t: f64,
}

/// Physical curves evaluated on a scene's ratios: `[col, oob, pen, oob_vol]`.
pub fn physical_components(ratios: &SceneRatios) -> [f64; 4] {
    [
        collision_rate_reward(ratios.r_col),
        oob_rate_reward(ratios.r_oob),
        penetration_reward(ratios.d_pen),
        oob_volume_reward(ratios.v_oob),
    ]
}

pub fn step_reward(r_fmt: f64, physical: [f64; 4], r_imp: f64, r_key: f64, w: &RewardWeights) -> StepReward {
    let [r_col, r_oob, r_pen, r_oob_vol] = physical;
    let r_t = w.iterative.r_fmt * r_fmt
        + w.phy_each() * (r_col + r_oob + r_pen + r_oob_vol)
        + w.sem_each() * (r_imp + r_key);
    StepReward { r_fmt, r_col, r_oob, r_pen, r_oob_vol, r_imp, r_key, r_t: clamp_unit(r_t) }
}

/// Judge's consolidated scene scores, each on the half-point grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consolidated {
    pub rationality: f64,
    pub requirement_match: f64,
    pub scene_graph: f64,
}

impl Consolidated {
    pub const GRID: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

    pub fn is_conforming(&self) -> bool {
        [self.rationality, self.requirement_match, self.scene_graph]
            .iter()
            .all(|v| Self::GRID.contains(v))
    }

    pub fn mean(&self) -> f64 {
        (self.rationality + self.requirement_match + self.scene_graph) / 3.0
    }
}

/// Everything the judge contributes to one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub improvement: i8,
    pub mandatory_objects: Vec<String>,
    pub relevance: (usize, usize),
    pub consolidated: Consolidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Overrides {
    pub too_few_objects: bool,
    pub physics_skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalReward {
    pub r_fmt: f64,
    pub r_key: f64,
    pub r_size: f64,
    pub r_obj: f64,
    pub r_support: f64,
    pub r_col: f64,
    pub r_oob: f64,
    pub r_pen: f64,
    pub r_oob_vol: f64,
    pub r_scene_phys: f64,
    pub r_scene_vlm: f64,
    pub overrides: Overrides,
    pub r_final: f64,
}

/// Inputs to the terminal assessment that do not come from the geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalInputs {
    pub r_fmt: f64,
    pub key: KeyCheck,
    pub r_size: f64,
    pub valid_objects: usize,
    pub consolidated: Consolidated,
}

/// Terminal scene, its diagnosis, and the non-geometric inputs.
pub fn final_reward(scene: &Scene, report: &ViolationReport, inputs: &FinalInputs, w: &RewardWeights) -> FinalReward {
    let ratios = scene_ratios(report, scene);
    let [r_col, r_oob, r_pen, r_oob_vol] = physical_components(&ratios);
    let r_support = support_reward(ratios.r_unsup);
    let r_key = key_objects_score(inputs.key.found, inputs.key.total, inputs.key.essential_missing);
    let r_obj = (r_key + inputs.r_size) / 2.0;
    let overrides = Overrides {
        too_few_objects: scene.objects.len() < MIN_FINAL_OBJECTS,
        physics_skipped: inputs.valid_objects < MIN_VALID_OBJECTS,
    };
    let r_scene_phys = if overrides.physics_skipped {
        -1.0
    } else {
        (r_support + r_col + r_oob + r_pen + r_oob_vol) / 5.0
    };
    let r_scene_vlm = inputs.consolidated.mean();
    let r_final = if overrides.too_few_objects {
        -1.0
    } else {
        clamp_unit(
            w.terminal.fmt * inputs.r_fmt
                + w.terminal.obj * r_obj
                + w.terminal.scene_physics * r_scene_phys
                + w.terminal.scene_vlm * r_scene_vlm,
        )
    };
    FinalReward {
        r_fmt: inputs.r_fmt,
        r_key,
        r_size: inputs.r_size,
        r_obj,
        r_support,
        r_col,
        r_oob,
        r_pen,
        r_oob_vol,
        r_scene_phys,
        r_scene_vlm,
        overrides,
        r_final,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub mean_step: f64,
    pub r_final: f64,
    pub j_tau: f64,
}

/// `J = α·mean(steps) + β·final`.
pub fn trajectory_score(steps: &[f64], r_final: f64, w: &RewardWeights) -> Result<TrajectoryScore, RewardError> {
    if steps.is_empty() {
        return Err(RewardError::EmptyTrajectory);
    }
    let mean_step = steps.iter().sum::<f64>() / steps.len() as f64;
    let j_tau = clamp_unit(w.global.alpha * mean_step + w.global.beta * r_final);
    Ok(TrajectoryScore { mean_step, r_final, j_tau })
}
