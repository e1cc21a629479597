//! Deterministic indoor-scene layout engine and multi-turn editing
//! environment.

pub mod assets;
pub mod canon;
pub mod geometry;
pub mod scene;
pub mod exec;
pub mod metrics;
pub mod rewards;
pub mod layout;
pub mod chain_synth;
pub mod fixtures;
pub mod phys_opt;
pub mod render;
pub mod env;
