mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(name = "scenechain", version, about = "Indoor scene layout engine and editing environment")]
pub struct Cli {
    /// Asset catalog JSON; the builtin catalog is used when absent.
    #[arg(long, global = true, env = "SCENECHAIN_CATALOG")]
    catalog: Option<PathBuf>,
    /// TOML config file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for scene/episode parallelism (1 = sequential).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Machine-readable errors on stderr.
    #[arg(long, global = true)]
    json: bool,
    /// Human-readable table instead of JSON on stdout.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize edit chains from clean scenes.
    SynthChains(SynthArgs),
    /// Replay every chain of a dataset against its final scene.
    VerifyChains {
        dataset: PathBuf,
    },
    /// Run one or more episodes and record them.
    RunEpisode(EpisodeArgs),
    /// Recompute all rewards of a recorded episode.
    ScoreEpisode {
        record: PathBuf,
    },
    /// Rule-based physics repair of one scene.
    Optimize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Physical-fidelity metrics over a directory of scenes.
    Metrics {
        #[arg(long)]
        scenes: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene to SVG (top-down) or PNG.
    Render {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Top-down plus isometric panels (PNG only).
        #[arg(long)]
        merged: bool,
        #[arg(long, default_value_t = 80.0)]
        px_per_meter: f64,
        #[arg(long, default_value_t = 1.0)]
        grid_step: f64,
        #[arg(long)]
        no_labels: bool,
    },
    /// Generate clean fixture scenes plus degraded variants.
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', default_values = ["chaotic", "missing"])]
        modes: Vec<Mode>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Chaotic,
    Missing,
    Both,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    keep: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EpisodeArgs {
    /// replay | random | greedy | http:URL
    #[arg(long)]
    policy: String,
    /// Chain file for the replay policy.
    #[arg(long)]
    chain: Option<PathBuf>,
    /// mock | http:URL
    #[arg(long, default_value = "mock")]
    judge: String,
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_turns: Option<usize>,
    /// Attach renders to observations.
    #[arg(long)]
    render: bool,
    /// Run the physics optimizer on the final scene.
    #[arg(long)]
    optimize: bool,
    /// Run this many episodes with seeds `seed, seed+1, …`.
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Timeout for remote endpoints, seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

/// A failed run: exit code 1 for domain errors, 2 for usage errors.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
    /// Partial result still worth printing, e.g. verification counts.
    pub output: Option<Value>,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { code: 1, kind, message: message.into(), output: None }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, ..Self::new("usage", message) }
    }
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::new("error", e.to_string())
    }
}

fn pretty(value: &Value) -> String {
    fn cell(v: &Value) -> String {
        match v {
            Value::Array(a) => format!("[{} items]", a.len()),
            Value::Object(o) => format!("{{{} keys}}", o.len()),
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
    match value {
        Value::Object(map) => {
            let width = map.keys().map(String::len).max().unwrap_or(0);
            map.iter().map(|(k, v)| format!("{k:<width$}  {}\n", cell(v))).collect()
        }
        other => format!("{}\n", cell(other)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let print = |v: &Value| {
        if cli.pretty {
            print!("{}", pretty(v));
        } else {
            println!("{}", serde_json::to_string_pretty(v).expect("json value"));
        }
    };
    match commands::run(&cli) {
        Ok(v) => {
            print(&v);
            ExitCode::SUCCESS
        }
        Err(f) => {
            if let Some(v) = &f.output {
                print(v);
            }
            if cli.json {
                eprintln!("{}", serde_json::json!({ "error": f.kind, "message": f.message }));
            } else {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
