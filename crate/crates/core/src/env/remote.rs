//! HTTP stand-ins for an external policy model and judge model.

use std::time::Duration;

use serde_json::{json, Value};

use super::{EnvError, Judge, JudgeContext, Observation, Policy};
use crate::assets::{MANDATORY_MAX, MANDATORY_MIN};
use crate::rewards::Consolidated;
use crate::scene::{serialize_scene, Scene};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POST JSON, retrying once on transport failure or a 5xx status.
fn post(agent: &ureq::Agent, url: &str, body: &Value) -> Result<String, String> {
    let payload = body.to_string();
    let attempt = || -> Result<String, String> {
        let mut resp = agent
            .post(url)
            .header("content-type", "application/json")
            .send(payload.as_bytes())
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if status.is_success() {
            Ok(text)
        } else {
            Err(format!("{url}: HTTP {status}: {text}"))
        }
    };
    attempt().or_else(|first| {
        log::warn!("retrying {url} after: {first}");
        attempt()
    })
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

/// Remove a surrounding Markdown code fence, if any.
fn unfence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

fn non_conforming(endpoint: &str, body: &str) -> EnvError {
    log::error!("non-conforming response from {endpoint}: {body}");
    EnvError::NonConforming { endpoint: endpoint.to_string(), body: body.to_string() }
}

/// `POST {base}/act` with the observation; the reply is `{"text": …}`.
pub struct HttpPolicy {
    base: String,
    agent: ureq::Agent,
}

impl HttpPolicy {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self { base: base.to_string(), agent: agent(timeout) }
    }
}

impl Policy for HttpPolicy {
    fn act(&mut self, obs: &Observation) -> Result<String, EnvError> {
        let url = join(&self.base, "act");
        let body = post(&self.agent, &url, &obs.to_wire()).map_err(EnvError::PolicyTransport)?;
        serde_json::from_str::<Value>(&body)
            .ok()
            .and_then(|v| v.get("text").and_then(Value::as_str).map(str::to_string))
            .ok_or_else(|| non_conforming("/act", &body))
    }
}

/// Judge endpoints `/improve`, `/mandatory` and `/consolidate`.
pub struct HttpJudge {
    base: String,
    agent: ureq::Agent,
}

impl HttpJudge {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self { base: base.to_string(), agent: agent(timeout) }
    }

    fn call(&self, path: &str, body: Value) -> Result<String, EnvError> {
        post(&self.agent, &join(&self.base, path), &body).map_err(EnvError::JudgeTransport)
    }
}

pub(crate) fn parse_improvement(body: &str) -> Result<i8, EnvError> {
    match unfence(body) {
        "-1" => Ok(-1),
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(non_conforming("/improve", body)),
    }
}

pub(crate) fn parse_mandatory(body: &str) -> Result<Vec<String>, EnvError> {
    let v: Value = serde_json::from_str(unfence(body)).map_err(|_| non_conforming("/mandatory", body))?;
    let list: Vec<String> = v
        .get("mandatory_objects")
        .and_then(Value::as_array)
        .and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect::<Option<_>>())
        .ok_or_else(|| non_conforming("/mandatory", body))?;
    if !(MANDATORY_MIN..=MANDATORY_MAX).contains(&list.len()) {
        return Err(non_conforming("/mandatory", body));
    }
    Ok(list)
}

pub(crate) fn parse_consolidated(body: &str) -> Result<Consolidated, EnvError> {
    let v: Value = serde_json::from_str(unfence(body)).map_err(|_| non_conforming("/consolidate", body))?;
    let field = |k: &str| v.get(k).and_then(Value::as_f64);
    let c = match (field("rationality"), field("requirement_match"), field("scene_graph")) {
        (Some(rationality), Some(requirement_match), Some(scene_graph)) => {
            Consolidated { rationality, requirement_match, scene_graph }
        }
        _ => return Err(non_conforming("/consolidate", body)),
    };
    if !c.is_conforming() {
        return Err(non_conforming("/consolidate", body));
    }
    Ok(c)
}

impl Judge for HttpJudge {
    fn improvement(&self, prev: &Scene, cur: &Scene, ctx: &JudgeContext) -> Result<i8, EnvError> {
        let body = self.call(
            "improve",
            json!({
                "instruction": ctx.instruction,
                "room_type": ctx.room_type,
                "previous_scene": serialize_scene(prev),
                "current_scene": serialize_scene(cur),
            }),
        )?;
        parse_improvement(&body)
    }

    fn mandatory_objects(&self, room_type: &str, instruction: &str) -> Result<Vec<String>, EnvError> {
        let body = self.call("mandatory", json!({ "room_type": room_type, "instruction": instruction }))?;
        parse_mandatory(&body)
    }

    fn consolidated(&self, scene: &Scene, ctx: &JudgeContext) -> Result<Consolidated, EnvError> {
        let body = self.call(
            "consolidate",
            json!({
                "instruction": ctx.instruction,
                "room_type": ctx.room_type,
                "mandatory_objects": ctx.mandatory,
                "scene": serialize_scene(scene),
            }),
        )?;
        parse_consolidated(&body)
    }
}
