//! Shared fixtures for the benchmarks.

use mrt_core::data::{generate_synthetic, Scene, SyntheticParams};
use mrt_core::model::ModelConfig;

/// Width used by the small-scale training runs.
pub fn desk_config() -> ModelConfig {
    ModelConfig {
        d_model: 64,
        d_ff: 128,
        ..ModelConfig::default()
    }
}

pub fn scene(persons: usize, steps: usize, seed: u64) -> Scene {
    generate_synthetic(persons, steps, 15, seed, &SyntheticParams::default())
        .expect("synthetic scene")
}
