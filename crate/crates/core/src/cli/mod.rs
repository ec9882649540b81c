//! Experiment configuration, figure presets and result files.
//!
//! The `qlink` binary is a thin clap front end over this module.

pub mod config;
pub mod output;
pub mod presets;

pub use config::{ConfigError, ExperimentConfig, Protocol};
pub use output::{emit_results, Format, Metadata, OutputError};
pub use presets::{preset_points, run_point, PresetError, ResultRow, SweepPoint};

use sha2::{Digest, Sha256};

/// Hash over the canonical configs of every point, in order.
pub fn sweep_hash(points: &[SweepPoint]) -> String {
    let mut h = Sha256::new();
    for p in points {
        h.update(p.config.canonical_text().as_bytes());
    }
    h.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
