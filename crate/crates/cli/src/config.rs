//! Optional TOML config. Every key is optional; flags override it and
//! library defaults fill the rest.
//!
//! ```toml
//! seed = 7
//! [weights.global]
//! alpha = 0.4
//! beta = 0.6
//! # … the other weight sections, all four required when [weights] is given
//! [synth]
//! candidates = 10
//! keep = 3
//! [episode]
//! max_turns = 15
//! history_depth = 4
//! ```

use std::path::Path;

use scenechain::rewards::RewardWeights;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub weights: Option<RewardWeights>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub episode: EpisodeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub candidates: Option<usize>,
    pub keep: Option<usize>,
    pub max_attempts: Option<usize>,
    pub turns_min: Option<usize>,
    pub turns_max: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSection {
    pub max_turns: Option<usize>,
    pub history_depth: Option<usize>,
    pub render: Option<bool>,
    pub optimize: Option<bool>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, String> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg: FileConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(w) = &cfg.weights {
        w.validate().map_err(|e| e.to_string())?;
    }
    Ok(cfg)
}
