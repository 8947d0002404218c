use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::image::{Image, Pattern};
use crate::losses::{FamilyKind, StyleFamily, StyleLossConfig};
use crate::optimizer::{OptimizationConfig, Stylizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub methods: Vec<String>,
    pub image_size: usize,
    pub iterations: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            methods: vec!["cmd".into(), "mmd_gram".into()],
            image_size: 128,
            iterations: 100,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: String,
    pub image_size: usize,
    pub iterations: usize,
    pub repeats: usize,
    pub mean_seconds: f64,
    /// Population standard deviation over repeats.
    pub std_seconds: f64,
    pub hardware: String,
}

/// Architecture, OS, logical CPU count and, where `/proc/cpuinfo` exists, the CPU model.
pub fn hardware_descriptor() -> String {
    let cpus = super::default_workers();
    let model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("model name"))
            .and_then(|l| l.split(':').nth(1))
            .map(|m| m.trim().to_string())
    });
    let mut d = format!(
        "{}-{}, {cpus} logical cpu(s)",
        std::env::consts::ARCH,
        std::env::consts::OS
    );
    if let Some(m) = model {
        d.push_str(", ");
        d.push_str(&m);
    }
    d
}

/// Times the optimization loop only (stopping disabled) for each method on synthetic
/// `image_size` square content/style images. Runs are sequential so timings do not interfere.
/// Method ids are parsed like `--loss` values; reports use the canonical id.
pub fn run_benchmark(cfg: &BenchmarkConfig, encoder: &Encoder) -> Result<Vec<BenchmarkReport>> {
    if cfg.repeats == 0 {
        return Err(Error::invalid("benchmark needs repeats >= 1"));
    }
    if cfg.iterations == 0 {
        return Err(Error::invalid("benchmark needs iterations >= 1"));
    }
    let families = cfg
        .methods
        .iter()
        .map(|m| FamilyKind::from_str(m).map(StyleFamily::default_for))
        .collect::<Result<Vec<_>>>()?;
    let content = Image::synthetic(Pattern::Scene, cfg.image_size, cfg.image_size, cfg.seed);
    let style = Image::synthetic(Pattern::Stripes, cfg.image_size, cfg.image_size, cfg.seed + 1);
    let spec = encoder.spec();
    let opt = OptimizationConfig {
        max_iterations: cfg.iterations,
        min_iterations: 0,
        stopping: false,
        seed: cfg.seed,
        ..Default::default()
    };
    let stylizers = families
        .iter()
        .map(|family| {
            let loss_cfg =
                StyleLossConfig::equal_weights(family.clone(), &spec.style_layers, spec.content_layer.clone())?;
            Stylizer::new(&content, &style, encoder, &loss_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    // repeats are interleaved across methods so slow drifts in machine load hit all of them
    let mut times = vec![Vec::with_capacity(cfg.repeats); families.len()];
    for _ in 0..cfg.repeats {
        for (stylizer, t) in stylizers.iter().zip(times.iter_mut()) {
            let t0 = Instant::now();
            let run = stylizer.run(&opt)?;
            t.push(t0.elapsed().as_secs_f64());
            debug_assert_eq!(run.iterations_executed, cfg.iterations);
        }
    }
    let hardware = hardware_descriptor();
    let reports = families
        .iter()
        .zip(times)
        .map(|(family, t)| {
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            let var = t.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t.len() as f64;
            log::info!("benchmark {}: {mean:.3}s", family.kind());
            BenchmarkReport {
                method: family.kind().id().to_string(),
                image_size: cfg.image_size,
                iterations: cfg.iterations,
                repeats: cfg.repeats,
                mean_seconds: mean,
                std_seconds: if cfg.repeats == 1 { 0.0 } else { var.sqrt() },
                hardware: hardware.clone(),
            }
        })
        .collect();
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{load_encoder, EncoderSpec};

    #[test]
    fn single_repeat_has_zero_std() {
        let enc = load_encoder(&EncoderSpec::tiny(0)).unwrap();
        let cfg = BenchmarkConfig {
            methods: vec!["cmd".into()],
            image_size: 32,
            iterations: 2,
            repeats: 1,
            seed: 0,
        };
        let r = run_benchmark(&cfg, &enc).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].std_seconds, 0.0);
        assert!(r[0].mean_seconds > 0.0);
    }

    #[test]
    fn unknown_method_is_a_config_error() {
        let enc = load_encoder(&EncoderSpec::tiny(0)).unwrap();
        let cfg = BenchmarkConfig {
            methods: vec!["adain".into()],
            ..Default::default()
        };
        assert!(matches!(run_benchmark(&cfg, &enc), Err(Error::Config(_))));
    }
}
