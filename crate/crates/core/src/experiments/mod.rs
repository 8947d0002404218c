//! Scripted studies: toy alignment, moment ablation grid, learning-rate study and the
//! runtime benchmark. Each writes a manifest describing its config and inputs.

mod bench;
mod studies;
mod toy;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

pub use bench::{hardware_descriptor, run_benchmark, BenchmarkConfig, BenchmarkReport};
pub use studies::{run_lr_study, run_moment_ablation, AblationGrid, AblationRun, LrOutcome, STUDY_LEARNING_RATES};
pub use toy::{family_label, run_toy_experiment, ToyConfig, ToyReport, ToyRow, HISTOGRAM_BINS};

/// Runs `f` over `items` on at most `workers` threads. Results keep the input order.
pub fn run_pool<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Worker count used when none is given: the available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// SHA-256 over the pixel data of an image (shape then little-endian `f64` values).
pub fn image_digest(image: &Image) -> String {
    let mut h = Sha256::new();
    let (rows, cols, ch) = image.pixels().dim();
    for d in [rows, cols, ch] {
        h.update((d as u64).to_le_bytes());
    }
    for v in image.pixels().iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

/// Written next to every experiment's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub experiment: String,
    pub crate_version: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Digest over the config JSON and every input digest, in order.
    pub content_hash: String,
}

impl ExperimentManifest {
    pub fn new(experiment: &str, config: &impl Serialize, inputs: Vec<InputDigest>) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&config)?);
        for i in &inputs {
            h.update(i.name.as_bytes());
            h.update(i.sha256.as_bytes());
        }
        Ok(ExperimentManifest {
            experiment: experiment.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            inputs,
            content_hash: hex::encode(h.finalize()),
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
