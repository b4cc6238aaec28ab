//! Experiment orchestration, configuration and persistence.

mod bundle;
mod config;
mod experiments;

use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use bundle::{emit_plot_data, fmt_f64, Curve, Manifest, ResultBundle, CODE_VERSION};
pub use config::{
    AnalysisSpec, ExperimentConfig, ExperimentKind, HyperGrid, KappaGrid, SamplerSpec, ScoreKind, ScoreSpec, DESK_TRAJECTORIES,
    FULL_TRAJECTORIES,
};
pub use experiments::*;

use crate::error::Result;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MIXDIFF_OUT";

/// Hex SHA-256 of the canonical JSON encoding.
pub fn hash_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("serializable");
    let d = Sha256::digest(&bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory: `out_dir`, else `$MIXDIFF_OUT/<experiment>-<hash prefix>`, else `results/...`.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    if let Some(d) = &cfg.out_dir {
        return d.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"));
    root.join(format!("{}-{}", cfg.experiment.name(), &cfg.result_hash()[..12]))
}

/// Runs the configured experiment into [`output_dir`].
pub fn run(cfg: &ExperimentConfig) -> Result<ResultBundle> {
    run_in(cfg, &output_dir(cfg))
}
