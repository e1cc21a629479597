//! Agent text protocol.
//!
//! At t = 0 the agent answers with `<create_scene>{json}</create_scene>`;
//! afterwards with `<think>…</think>` followed by
//! `<tool_calls>[{"id", "name", "arguments"}, …]</tool_calls>`.
//! Defects never abort parsing: each one is recorded as a [`FormatPenalty`]
//! and whatever could be recovered is returned.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::json::{number_array, scene_from_value};
use super::{Rotation, Scene, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Edit,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    MissingParams,
    InvalidId,
    TagOrder,
    JsonParse,
}

impl PenaltyKind {
    pub const fn weight(self) -> f64 {
        match self {
            PenaltyKind::MissingParams => 0.1,
            PenaltyKind::InvalidId => 0.2,
            PenaltyKind::TagOrder => 0.8,
            PenaltyKind::JsonParse => 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatPenalty {
    pub kind: PenaltyKind,
    pub detail: String,
}

impl FormatPenalty {
    pub fn new(kind: PenaltyKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }

    pub fn weight(&self) -> f64 {
        self.kind.weight()
    }
}

/// One primitive from the tool space.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// `uid` is an optional extension used by replayed datasets to pin the
    /// identifier; agents normally omit it and get a fresh one.
    AddObject {
        description: String,
        position: Vec3,
        rotation: Rotation,
        size: Vec3,
        uid: Option<String>,
    },
    RemoveObject { uid: String },
    MoveObject { uid: String, new_position: Vec3 },
    RotateObject { uid: String, new_rotation: Rotation },
    ScaleObject { uid: String, new_size: Vec3 },
    ReplaceObject { uid: String, new_description: String },
    Terminate { reason: String },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::AddObject { .. } => "add_object",
            Action::RemoveObject { .. } => "remove_object",
            Action::MoveObject { .. } => "move_object",
            Action::RotateObject { .. } => "rotate_object",
            Action::ScaleObject { .. } => "scale_object",
            Action::ReplaceObject { .. } => "replace_object",
            Action::Terminate { .. } => "terminate",
        }
    }

    /// The uid an edit targets, if any.
    pub fn target(&self) -> Option<&str> {
        match self {
            Action::AddObject { .. } | Action::Terminate { .. } => None,
            Action::RemoveObject { uid }
            | Action::MoveObject { uid, .. }
            | Action::RotateObject { uid, .. }
            | Action::ScaleObject { uid, .. }
            | Action::ReplaceObject { uid, .. } => Some(uid),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub id: String,
    pub action: Action,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, action: Action) -> Self {
        Self { id: id.into(), action }
    }

    pub fn is_terminate(&self) -> bool {
        matches!(self.action, Action::Terminate { .. })
    }

    pub fn to_value(&self) -> Value {
        let arguments = match &self.action {
            Action::AddObject { description, position, rotation, size, uid } => {
                let mut m = Map::new();
                m.insert("object_description".into(), json!(description));
                m.insert("position".into(), json!(position.to_array()));
                m.insert("rotation".into(), json!(rotation.as_array()));
                m.insert("size".into(), json!(size.to_array()));
                if let Some(uid) = uid {
                    m.insert("uid".into(), json!(uid));
                }
                Value::Object(m)
            }
            Action::RemoveObject { uid } => json!({ "uid": uid }),
            Action::MoveObject { uid, new_position } => {
                json!({ "uid": uid, "new_position": new_position.to_array() })
            }
            Action::RotateObject { uid, new_rotation } => {
                json!({ "uid": uid, "new_rotation": new_rotation.as_array() })
            }
            Action::ScaleObject { uid, new_size } => {
                json!({ "uid": uid, "new_size": new_size.to_array() })
            }
            Action::ReplaceObject { uid, new_description } => {
                json!({ "uid_to_replace": uid, "new_object_description": new_description })
            }
            Action::Terminate { reason } => json!({ "reason": reason }),
        };
        let mut m = Map::new();
        m.insert("id".into(), json!(self.id));
        m.insert("name".into(), json!(self.action.name()));
        m.insert("arguments".into(), arguments);
        Value::Object(m)
    }
}

impl Serialize for ToolCall {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ToolCall {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        parse_tool_call(&v, 0).map_err(|p| serde::de::Error::custom(p.detail))
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::canon::to_canonical_json(self))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionResponse {
    pub think: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    pub create_scene: Option<Scene>,
    pub raw_text: String,
}

/// Parse a raw agent reply for the given phase.
pub fn parse_agent_response(text: &str, phase: Phase) -> (ActionResponse, Vec<FormatPenalty>) {
    let mut response = ActionResponse { raw_text: text.to_string(), ..Default::default() };
    let mut penalties = Vec::new();
    match phase {
        Phase::Init => match tag_body(text, "create_scene") {
            None => penalties.push(FormatPenalty::new(
                PenaltyKind::JsonParse,
                "missing <create_scene> block",
            )),
            Some((_, body)) => match serde_json::from_str::<Value>(strip_fences(body)) {
                Err(e) => penalties.push(FormatPenalty::new(PenaltyKind::JsonParse, e.to_string())),
                Ok(v) => match scene_from_value(&v) {
                    Ok(scene) => response.create_scene = Some(scene),
                    Err(e) => penalties.push(FormatPenalty::new(PenaltyKind::JsonParse, e.to_string())),
                },
            },
        },
        Phase::Edit | Phase::Terminal => {
            let think = tag_body(text, "think");
            let calls = tag_body(text, "tool_calls");
            response.think = think.map(|(_, body)| body.trim().to_string());
            // A missing <think> is tolerated; only a misplaced one is a sequence error.
            if let (Some((think_at, _)), Some((calls_at, _))) = (think, calls) {
                if calls_at < think_at {
                    penalties.push(FormatPenalty::new(
                        PenaltyKind::TagOrder,
                        "<tool_calls> placed before <think>",
                    ));
                }
            }
            match calls {
                None => penalties.push(FormatPenalty::new(
                    PenaltyKind::JsonParse,
                    "missing <tool_calls> block",
                )),
                Some((_, body)) => parse_call_list(body, &mut response.tool_calls, &mut penalties),
            }
        }
    }
    (response, penalties)
}

fn parse_call_list(body: &str, out: &mut Vec<ToolCall>, penalties: &mut Vec<FormatPenalty>) {
    let value = match serde_json::from_str::<Value>(strip_fences(body)) {
        Ok(v) => v,
        Err(e) => {
            penalties.push(FormatPenalty::new(PenaltyKind::JsonParse, e.to_string()));
            return;
        }
    };
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        _ => {
            penalties.push(FormatPenalty::new(PenaltyKind::JsonParse, "tool_calls must be a JSON array"));
            return;
        }
    };
    for (i, item) in items.iter().enumerate() {
        match parse_tool_call(item, i) {
            Ok(call) => out.push(call),
            Err(p) => penalties.push(p),
        }
    }
}

/// Parse one `{"id", "name", "arguments"}` entry; `index` seeds a default id.
pub fn parse_tool_call(item: &Value, index: usize) -> Result<ToolCall, FormatPenalty> {
    let missing = |what: String| FormatPenalty::new(PenaltyKind::MissingParams, what);
    let obj = item
        .as_object()
        .ok_or_else(|| missing(format!("tool call {index} is not an object")))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("tool_{}", index + 1));
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| missing(format!("{id}: missing tool name")))?;
    let owned_args;
    let args = match obj.get("arguments") {
        Some(Value::Object(m)) => m,
        // Some clients send arguments as a JSON-encoded string.
        Some(Value::String(s)) => match serde_json::from_str::<Value>(s) {
            Ok(Value::Object(m)) => {
                owned_args = m;
                &owned_args
            }
            _ => return Err(missing(format!("{id}: arguments are not an object"))),
        },
        _ if name == "terminate" => {
            owned_args = Map::new();
            &owned_args
        }
        _ => return Err(missing(format!("{id}: missing arguments"))),
    };
    let p = Params { id: &id, args };
    let action = match name {
        "add_object" => Action::AddObject {
            description: p.string(&["object_description", "description"])?,
            position: p.vec3("position")?,
            rotation: p.rotation("rotation")?,
            size: p.size("size")?,
            uid: p.opt_string(&["uid", "jid"]),
        },
        "remove_object" => Action::RemoveObject { uid: p.string(&["uid", "jid"])? },
        "move_object" => Action::MoveObject {
            uid: p.string(&["uid", "jid"])?,
            new_position: p.vec3("new_position")?,
        },
        "rotate_object" => Action::RotateObject {
            uid: p.string(&["uid", "jid"])?,
            new_rotation: p.rotation("new_rotation")?,
        },
        "scale_object" => Action::ScaleObject {
            uid: p.string(&["uid", "jid"])?,
            new_size: p.size("new_size")?,
        },
        "replace_object" => Action::ReplaceObject {
            uid: p.string(&["uid_to_replace", "jid_to_replace", "uid", "jid"])?,
            new_description: p.string(&["new_object_description", "object_description"])?,
        },
        "terminate" => Action::Terminate {
            reason: p.opt_string(&["reason"]).unwrap_or_default(),
        },
        other => {
            return Err(FormatPenalty::new(
                PenaltyKind::InvalidId,
                format!("{id}: unknown tool `{other}`"),
            ))
        }
    };
    Ok(ToolCall { id, action })
}

struct Params<'a> {
    id: &'a str,
    args: &'a Map<String, Value>,
}

impl Params<'_> {
    fn missing(&self, key: &str) -> FormatPenalty {
        FormatPenalty::new(PenaltyKind::MissingParams, format!("{}: missing or malformed `{key}`", self.id))
    }

    fn opt_string(&self, keys: &[&str]) -> Option<String> {
        keys.iter()
            .find_map(|k| self.args.get(*k).and_then(Value::as_str))
            .map(str::to_string)
    }

    fn string(&self, keys: &[&str]) -> Result<String, FormatPenalty> {
        self.opt_string(keys).ok_or_else(|| self.missing(keys[0]))
    }

    fn vec3(&self, key: &str) -> Result<Vec3, FormatPenalty> {
        let v = self.args.get(key).ok_or_else(|| self.missing(key))?;
        number_array::<3>(v, key)
            .map(|a| Vec3::from(a).quantized())
            .map_err(|_| self.missing(key))
    }

    fn size(&self, key: &str) -> Result<Vec3, FormatPenalty> {
        let v = self.vec3(key)?;
        if v.min_component() > 0.0 {
            Ok(v)
        } else {
            Err(self.missing(key))
        }
    }

    fn rotation(&self, key: &str) -> Result<Rotation, FormatPenalty> {
        let v = self.args.get(key).ok_or_else(|| self.missing(key))?;
        let q = number_array::<4>(v, key).map_err(|_| self.missing(key))?;
        Rotation::from_quaternion(q)
            .map(|(r, _)| r)
            .map_err(|_| self.missing(key))
    }
}

/// Byte offset of the opening tag and the text between the tags.
fn tag_body<'a>(text: &'a str, tag: &str) -> Option<(usize, &'a str)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)?;
    let body_start = start + open.len();
    let end = text[body_start..].find(&close)? + body_start;
    Some((start, &text[body_start..end]))
}

fn strip_fences(body: &str) -> &str {
    let t = body.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}
