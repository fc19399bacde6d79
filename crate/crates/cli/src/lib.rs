//! Command implementations behind the `spngp` binary: training, prediction,
//! repeated-split evaluation against baselines, and expert-size sweeps.

pub mod config;
pub mod evaluate;
pub mod predict;
pub mod sweep;
pub mod train;

use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

pub use config::ExperimentConfig;

/// Attach the pipeline phase to a library error.
pub(crate) fn phase<T>(name: &str, r: spngp::Result<T>) -> anyhow::Result<T> {
    r.with_context(|| format!("phase {name} failed"))
}

/// First line of every text output file.
pub fn header_line(config_fingerprint: &str) -> String {
    format!("# spngp {} config {}", spngp::VERSION, config_fingerprint)
}

/// Wall-clock seconds per phase. Kept out of reports so reports stay
/// byte-identical across reruns.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, name: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.phases.push((name.into(), t.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.phases.iter().map(|p| p.1).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timings serialize") + "\n"
    }
}
