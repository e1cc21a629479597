use serde_json::{Map, Value};

use super::{RoomGeometry, Rotation, Scene, SceneError, SceneObject, Vec3};
use crate::canon::to_canonical_json;

/// Parse the scene wire format.
///
/// Keys are matched exactly (`jid` is accepted as an alias for `uid`).
/// Coordinates are snapped to the 1e-6 grid; non-yaw rotations are
/// projected onto yaw with a warning.
pub fn parse_scene_json(text: &str) -> Result<Scene, SceneError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| SceneError::MalformedJson(e.to_string()))?;
    scene_from_value(&value)
}

/// Canonical, byte-stable serialization of a scene.
pub fn serialize_scene(scene: &Scene) -> String {
    to_canonical_json(scene)
}

pub(crate) fn scene_from_value(value: &Value) -> Result<Scene, SceneError> {
    let obj = value
        .as_object()
        .ok_or_else(|| SceneError::MalformedJson("scene must be a JSON object".into()))?;
    let bounds_top = vec3_list(obj, "bounds_top")?;
    let bounds_bottom = vec3_list(obj, "bounds_bottom")?;
    let room_type = string_field(obj, "room_type")?;
    let room_id = string_field(obj, "room_id")?;
    let raw_objects = obj
        .get("objects")
        .ok_or_else(|| SceneError::MissingField("objects".into()))?
        .as_array()
        .ok_or_else(|| SceneError::InvariantViolation("`objects` must be an array".into()))?;
    let objects = raw_objects
        .iter()
        .map(object_from_value)
        .collect::<Result<Vec<_>, _>>()?;
    let scene = Scene {
        room: RoomGeometry { bounds_top, bounds_bottom, room_type, room_id },
        objects,
    };
    scene.validate()?;
    Ok(scene)
}

fn object_from_value(value: &Value) -> Result<SceneObject, SceneError> {
    let obj = value
        .as_object()
        .ok_or_else(|| SceneError::InvariantViolation("object entry must be a JSON object".into()))?;
    let uid = match obj.get("uid").or_else(|| obj.get("jid")) {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(SceneError::InvariantViolation("`uid` must be a string".into())),
        None => return Err(SceneError::MissingField("uid".into())),
    };
    let description = string_field(obj, "description")?;
    let position = vec3_field(obj, "position")?;
    let size = vec3_field(obj, "size")?;
    let q = number_array::<4>(
        obj.get("rotation").ok_or_else(|| SceneError::MissingField("rotation".into()))?,
        "rotation",
    )?;
    let (rotation, projected) = Rotation::from_quaternion(q)?;
    if projected {
        log::warn!("object {uid}: non-yaw rotation {q:?} projected to yaw {:.6}", rotation.yaw());
    }
    Ok(SceneObject { uid, description, position, rotation, size })
}

fn string_field(obj: &Map<String, Value>, key: &str) -> Result<String, SceneError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(SceneError::InvariantViolation(format!("`{key}` must be a string"))),
        None => Err(SceneError::MissingField(key.into())),
    }
}

fn vec3_field(obj: &Map<String, Value>, key: &str) -> Result<Vec3, SceneError> {
    let v = obj.get(key).ok_or_else(|| SceneError::MissingField(key.into()))?;
    Ok(Vec3::from(number_array::<3>(v, key)?).quantized())
}

fn vec3_list(obj: &Map<String, Value>, key: &str) -> Result<Vec<Vec3>, SceneError> {
    let arr = obj
        .get(key)
        .ok_or_else(|| SceneError::MissingField(key.into()))?
        .as_array()
        .ok_or_else(|| SceneError::InvariantViolation(format!("`{key}` must be an array")))?;
    arr.iter()
        .map(|v| number_array::<3>(v, key).map(|a| Vec3::from(a).quantized()))
        .collect()
}

pub(crate) fn number_array<const N: usize>(v: &Value, key: &str) -> Result<[f64; N], SceneError> {
    let bad = || SceneError::InvariantViolation(format!("`{key}` must be an array of {N} numbers"));
    let arr = v.as_array().ok_or_else(bad)?;
    if arr.len() != N {
        return Err(bad());
    }
    let mut out = [0.0; N];
    for (slot, item) in out.iter_mut().zip(arr) {
        *slot = item.as_f64().filter(|x| x.is_finite()).ok_or_else(bad)?;
    }
    Ok(out)
}
