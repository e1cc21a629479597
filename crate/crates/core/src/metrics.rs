//! Scene-level violation diagnosis and dataset-level aggregates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::geometry::{
    intersection_volume, obb_from_object, oob_excess, pair_penetration, support_status, Obb,
    EPS_COLLISION, EPS_OOB,
};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsConfig {
    pub eps_col: f64,
    pub eps_oob: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self { eps_col: EPS_COLLISION, eps_oob: EPS_OOB }
    }
}

/// One entry of the pair matrix; `a < b` lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPenetration {
    pub a: String,
    pub b: String,
    pub depth: f64,
    pub overlap_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excess {
    pub max_excursion: f64,
    pub oob_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationReport {
    pub colliding: BTreeSet<String>,
    pub oob: BTreeSet<String>,
    /// Pairs penetrating deeper than the collision tolerance, sorted by `(a, b)`.
    pub pair_matrix: Vec<PairPenetration>,
    pub per_object_excess: BTreeMap<String, Excess>,
    pub unsupported: BTreeSet<String>,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.colliding.is_empty() && self.oob.is_empty()
    }

    /// `|C| + |U|`.
    pub fn violation_count(&self) -> usize {
        self.colliding.len() + self.oob.len()
    }

    pub fn penetration(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.pair_matrix.iter().find(|p| p.a == a && p.b == b).map(|p| p.depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRatios {
    pub r_col: f64,
    pub r_oob: f64,
    pub d_pen: f64,
    pub v_oob: f64,
    pub r_unsup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFractions {
    pub oob: f64,
    pub col: f64,
    /// Σ pair overlap volume + Σ out-of-bounds volume, in liters.
    pub violation_liters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub obr: f64,
    pub cnr: f64,
    pub vbl: f64,
    pub scene_count: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty scene list")]
    EmptyInput,
}

pub fn check_physics(scene: &Scene, cfg: &PhysicsConfig) -> ViolationReport {
    let mut report = ViolationReport::default();
    let boxes: Vec<Obb> = scene.objects.iter().map(obb_from_object).collect();
    for i in 0..boxes.len() {
        for j in (i + 1)..boxes.len() {
            let depth = pair_penetration(&boxes[i], &boxes[j]);
            if depth > cfg.eps_col {
                let (ui, uj) = (&scene.objects[i].uid, &scene.objects[j].uid);
                let (a, b) = if ui <= uj { (ui, uj) } else { (uj, ui) };
                report.colliding.insert(a.clone());
                report.colliding.insert(b.clone());
                report.pair_matrix.push(PairPenetration {
                    a: a.clone(),
                    b: b.clone(),
                    depth,
                    overlap_volume: intersection_volume(&boxes[i], &boxes[j]),
                });
            }
        }
    }
    report.pair_matrix.sort_by(|p, q| (&p.a, &p.b).cmp(&(&q.a, &q.b)));
    for obj in &scene.objects {
        let (max_excursion, oob_volume) = oob_excess(obj, &scene.room);
        if max_excursion > cfg.eps_oob {
            report.oob.insert(obj.uid.clone());
        }
        report.per_object_excess.insert(obj.uid.clone(), Excess { max_excursion, oob_volume });
        if !support_status(obj, scene).is_supported() {
            report.unsupported.insert(obj.uid.clone());
        }
    }
    report
}

pub fn scene_ratios(report: &ViolationReport, scene: &Scene) -> SceneRatios {
    let n = scene.objects.len().max(1) as f64;
    SceneRatios {
        r_col: 100.0 * report.colliding.len() as f64 / n,
        r_oob: 100.0 * report.oob.len() as f64 / n,
        d_pen: report.pair_matrix.iter().map(|p| p.depth).sum(),
        v_oob: report.per_object_excess.values().map(|e| e.oob_volume).sum(),
        r_unsup: 100.0 * report.unsupported.len() as f64 / n,
    }
}

pub fn scene_fractions(report: &ViolationReport, scene: &Scene) -> SceneFractions {
    let n = scene.objects.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let overlap: f64 = report.pair_matrix.iter().map(|p| p.overlap_volume).sum();
    let outside: f64 = report.per_object_excess.values().map(|e| e.oob_volume).sum();
    SceneFractions {
        oob: frac(report.oob.len()),
        col: frac(report.colliding.len()),
        violation_liters: 1000.0 * (overlap + outside),
    }
}

/// OBR, CNR and VBL as per-scene means.
pub fn aggregate(reports: &[(ViolationReport, Scene)]) -> Result<DatasetMetrics, MetricsError> {
    let fractions: Vec<SceneFractions> =
        reports.iter().map(|(r, s)| scene_fractions(r, s)).collect();
    aggregate_fractions(&fractions)
}

/// Incremental means keep the aggregate of identical scenes exactly equal
/// to the per-scene value.
pub fn aggregate_fractions(fractions: &[SceneFractions]) -> Result<DatasetMetrics, MetricsError> {
    if fractions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut obr, mut cnr, mut vbl) = (0.0, 0.0, 0.0);
    for (k, f) in fractions.iter().enumerate() {
        let k = (k + 1) as f64;
        obr += (f.oob - obr) / k;
        cnr += (f.col - cnr) / k;
        vbl += (f.violation_liters - vbl) / k;
    }
    Ok(DatasetMetrics { obr, cnr, vbl, scene_count: fractions.len() })
}

/// Per-scene diagnosis plus dataset aggregate, mapped over scenes with `exec`.
pub fn evaluate_scenes(
    scenes: &[Scene],
    cfg: &PhysicsConfig,
    exec: Execution,
) -> Result<(Vec<ViolationReport>, DatasetMetrics), MetricsError> {
    let reports = exec.map(scenes, |s| check_physics(s, cfg));
    let fractions: Vec<SceneFractions> =
        reports.iter().zip(scenes).map(|(r, s)| scene_fractions(r, s)).collect();
    let metrics = aggregate_fractions(&fractions)?;
    Ok((reports, metrics))
}
