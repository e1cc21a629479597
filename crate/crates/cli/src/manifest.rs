use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

/// Audit record written next to every output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_time_ms: u128,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_ms: 0,
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.display().to_string());
        self
    }

    /// `dir/manifest.json` for directory outputs, `<file>.manifest.json`
    /// next to a file output.
    pub fn location(out: &Path, is_dir: bool) -> PathBuf {
        if is_dir {
            out.join("manifest.json")
        } else {
            let mut name = out.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            out.with_file_name(name)
        }
    }

    pub fn write(mut self, path: &Path, started: Instant) -> std::io::Result<()> {
        self.wall_time_ms = started.elapsed().as_millis();
        write_atomic(path, (serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n").as_bytes())
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}
