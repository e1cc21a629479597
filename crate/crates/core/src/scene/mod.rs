//! Scene representation, the wire format, agent-response parsing and the
//! tool-call transition function.
//!
//! Coordinates are y-up with the floor at `y = 0`; object positions are box
//! centers and sizes are full extents. Rotations travel as `[x, y, z, w]`
//! quaternions but are constrained to yaw about +y.

mod json;
mod protocol;
mod transition;

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::quantize;

pub use json::{parse_scene_json, serialize_scene};
pub use protocol::{
    parse_agent_response, parse_tool_call, Action, ActionResponse, FormatPenalty, PenaltyKind,
    Phase, ToolCall,
};
pub use transition::{apply_tool_call, fresh_uid};

/// Tolerance for the room-geometry and quaternion invariants.
pub const GEOMETRY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
}

/// A point or extent in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn quantized(self) -> Self {
        Self::new(quantize(self.x), quantize(self.y), quantize(self.z))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn volume(&self) -> f64 {
        self.x * self.y * self.z
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn min_component(&self) -> f64 {
        self.x.min(self.y).min(self.z)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Serialize for Vec3 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vec3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[f64; 3]>::deserialize(d).map(Vec3::from)
    }
}

/// Wrap an angle into `[-π, π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let wrapped = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Unit quaternion `[x, y, z, w]` restricted to rotations about +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation([f64; 4]);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation([0.0, 0.0, 0.0, 1.0]);

    pub fn from_yaw(yaw: f64) -> Self {
        let half = yaw / 2.0;
        Rotation([0.0, quantize(half.sin()), 0.0, quantize(half.cos())])
    }

    /// Accept an arbitrary quaternion from the wire.
    ///
    /// Yaw-only unit quaternions are kept verbatim (after grid snapping) so
    /// canonical scenes round-trip exactly. Anything else is projected onto
    /// the nearest yaw rotation; the boolean reports whether that happened.
    pub fn from_quaternion(q: [f64; 4]) -> Result<(Self, bool), SceneError> {
        if q.iter().any(|c| !c.is_finite()) {
            return Err(SceneError::InvariantViolation("non-finite quaternion".into()));
        }
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(SceneError::InvariantViolation("zero quaternion".into()));
        }
        let yaw_only = q[0].abs() <= GEOMETRY_TOL && q[2].abs() <= GEOMETRY_TOL;
        if yaw_only && (norm - 1.0).abs() <= GEOMETRY_TOL {
            let snapped = [0.0, quantize(q[1]), 0.0, quantize(q[3])];
            return Ok((Rotation(snapped), false));
        }
        let yaw = 2.0 * q[1].atan2(q[3]);
        Ok((Rotation::from_yaw(normalize_yaw(yaw)), true))
    }

    /// Yaw in `[-π, π)`.
    pub fn yaw(&self) -> f64 {
        normalize_yaw(2.0 * self.0[1].atan2(self.0[3]))
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let q = <[f64; 4]>::deserialize(d)?;
        Rotation::from_quaternion(q)
            .map(|(r, _)| r)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomGeometry {
    pub bounds_top: Vec<Vec3>,
    pub bounds_bottom: Vec<Vec3>,
    pub room_type: String,
    pub room_id: String,
}

impl RoomGeometry {
    /// Axis-aligned rectangular room spanning `[0, width] x [0, depth]`.
    pub fn rectangle(width: f64, depth: f64, height: f64, room_type: &str, room_id: &str) -> Self {
        let corners = [(0.0, 0.0), (width, 0.0), (width, depth), (0.0, depth)];
        Self::from_footprint(&corners, height, room_type, room_id)
    }

    pub fn from_footprint(
        footprint: &[(f64, f64)],
        height: f64,
        room_type: &str,
        room_id: &str,
    ) -> Self {
        let bottom = footprint
            .iter()
            .map(|&(x, z)| Vec3::new(x, 0.0, z).quantized())
            .collect();
        let top = footprint
            .iter()
            .map(|&(x, z)| Vec3::new(x, height, z).quantized())
            .collect();
        Self {
            bounds_top: top,
            bounds_bottom: bottom,
            room_type: room_type.to_string(),
            room_id: room_id.to_string(),
        }
    }

    /// Floor polygon in the XZ plane.
    pub fn footprint(&self) -> Vec<(f64, f64)> {
        self.bounds_bottom.iter().map(|v| (v.x, v.z)).collect()
    }

    pub fn ceiling_height(&self) -> f64 {
        self.bounds_top.first().map_or(0.0, |v| v.y)
    }

    /// Area-weighted centroid of the footprint; vertex mean for degenerate rings.
    pub fn centroid(&self) -> (f64, f64) {
        crate::geometry::polygon_centroid(&self.footprint())
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.bounds_bottom.len();
        if n < 3 {
            return Err(SceneError::InvariantViolation(format!(
                "room polygon needs at least 3 vertices, got {n}"
            )));
        }
        if self.bounds_top.len() != n {
            return Err(SceneError::InvariantViolation(format!(
                "bounds_top has {} vertices but bounds_bottom has {n}",
                self.bounds_top.len()
            )));
        }
        for v in self.bounds_bottom.iter().chain(&self.bounds_top) {
            if !v.is_finite() {
                return Err(SceneError::InvariantViolation("non-finite room vertex".into()));
            }
        }
        if let Some(v) = self.bounds_bottom.iter().find(|v| v.y.abs() > GEOMETRY_TOL) {
            return Err(SceneError::InvariantViolation(format!(
                "bounds_bottom vertex at y = {} (floor must be y = 0)",
                v.y
            )));
        }
        let ceiling = self.ceiling_height();
        if ceiling <= 0.0 {
            return Err(SceneError::InvariantViolation("ceiling height must be positive".into()));
        }
        if self.bounds_top.iter().any(|v| (v.y - ceiling).abs() > GEOMETRY_TOL) {
            return Err(SceneError::InvariantViolation("bounds_top vertices differ in height".into()));
        }
        for (t, b) in self.bounds_top.iter().zip(&self.bounds_bottom) {
            if (t.x - b.x).abs() > GEOMETRY_TOL || (t.z - b.z).abs() > GEOMETRY_TOL {
                return Err(SceneError::InvariantViolation(
                    "bounds_top and bounds_bottom footprints differ".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub uid: String,
    pub description: String,
    pub position: Vec3,
    pub rotation: Rotation,
    pub size: Vec3,
}

impl SceneObject {
    pub fn new(uid: &str, description: &str, position: Vec3, yaw: f64, size: Vec3) -> Self {
        Self {
            uid: uid.to_string(),
            description: description.to_string(),
            position: position.quantized(),
            rotation: Rotation::from_yaw(yaw),
            size: size.quantized(),
        }
    }

    pub fn volume(&self) -> f64 {
        self.size.volume()
    }

    pub fn bottom(&self) -> f64 {
        self.position.y - self.size.y / 2.0
    }

    pub fn top(&self) -> f64 {
        self.position.y + self.size.y / 2.0
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.uid.is_empty() {
            return Err(SceneError::InvariantViolation("empty uid".into()));
        }
        if !self.position.is_finite() {
            return Err(SceneError::InvariantViolation(format!("{}: non-finite position", self.uid)));
        }
        if !self.size.is_finite() || self.size.min_component() <= 0.0 {
            return Err(SceneError::InvariantViolation(format!(
                "{}: size components must be positive",
                self.uid
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(flatten)]
    pub room: RoomGeometry,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn empty(room: RoomGeometry) -> Self {
        Self { room, objects: Vec::new() }
    }

    pub fn object(&self, uid: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.uid == uid)
    }

    pub fn object_mut(&mut self, uid: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.uid == uid)
    }

    pub fn contains(&self, uid: &str) -> bool {
        self.object(uid).is_some()
    }

    pub fn remove(&mut self, uid: &str) -> Option<SceneObject> {
        let idx = self.objects.iter().position(|o| o.uid == uid)?;
        Some(self.objects.remove(idx))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.room.validate()?;
        let mut seen = HashSet::new();
        for obj in &self.objects {
            obj.validate()?;
            if !seen.insert(obj.uid.as_str()) {
                return Err(SceneError::InvariantViolation(format!("duplicate uid `{}`", obj.uid)));
            }
        }
        Ok(())
    }
}

/// Shoelace area of the floor footprint.
///
/// Rejects zero-area and self-intersecting footprints.
pub fn room_area(room: &RoomGeometry) -> Result<f64, SceneError> {
    let ring = room.footprint();
    let area = crate::geometry::signed_area(&ring).abs();
    if area <= 1e-12 {
        return Err(SceneError::DegeneratePolygon("zero area".into()));
    }
    if crate::geometry::is_self_intersecting(&ring) {
        return Err(SceneError::DegeneratePolygon("self-intersecting footprint".into()));
    }
    Ok(area)
}
