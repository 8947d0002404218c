use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::StyleFamily;
use crate::measures::EmpiricalMeasure;
use crate::optimizer::{align_samples, csv_err, AlignConfig, GAP_ORDERS};

use super::run_pool;

pub const HISTOGRAM_BINS: usize = 50;
const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub families: Vec<StyleFamily>,
    pub n_samples: usize,
    pub align: AlignConfig,
    pub seed: u64,
    /// `(a, b)` of the source Beta distribution.
    pub source_beta: (f64, f64),
    pub target_beta: (f64, f64),
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            families: vec![StyleFamily::cmd(5).expect("valid order"), StyleFamily::MomentMatch],
            n_samples: 10_000,
            align: AlignConfig::default(),
            seed: 0,
            source_beta: (2.0, 3.0),
            target_beta: (0.5, 0.45),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyRow {
    pub family: StyleFamily,
    pub label: String,
    /// Gaps for orders `1..=6`.
    pub gaps: Vec<f64>,
    pub steps_taken: usize,
    pub final_loss: f64,
    pub final_samples: EmpiricalMeasure,
}

impl ToyRow {
    pub fn total_gap(&self) -> f64 {
        self.gaps.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub source: EmpiricalMeasure,
    pub target: EmpiricalMeasure,
    pub rows: Vec<ToyRow>,
}

/// Short label such as `cmd_k5`, `cmd[0,1,1,1,0]` or `mm`.
pub fn family_label(family: &StyleFamily) -> String {
    match family {
        StyleFamily::Cmd { moment_weights } => {
            let w = moment_weights.as_slice();
            if w.iter().all(|a| *a == 1.0) {
                format!("cmd_k{}", w.len())
            } else {
                let parts: Vec<String> = w.iter().map(|a| format!("{a}")).collect();
                format!("cmd[{}]", parts.join(","))
            }
        }
        other => other.kind().id().to_string(),
    }
}

fn beta_samples(rng: &mut ChaCha8Rng, (a, b): (f64, f64), n: usize) -> Result<Vec<f64>> {
    let d = Beta::new(a, b).map_err(|e| Error::invalid(format!("Beta({a}, {b}): {e}")))?;
    Ok((0..n).map(|_| d.sample(rng)).collect())
}

/// Aligns Beta source samples to Beta target samples once per family.
/// Source samples are drawn before target samples from one seeded stream.
pub fn run_toy_experiment(cfg: &ToyConfig, workers: usize) -> Result<ToyReport> {
    if cfg.n_samples < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "toy experiment needs at least {MIN_SAMPLES} samples, got {}",
            cfg.n_samples
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let source = EmpiricalMeasure::from_scalars(&beta_samples(&mut rng, cfg.source_beta, cfg.n_samples)?)?;
    let target = EmpiricalMeasure::from_scalars(&beta_samples(&mut rng, cfg.target_beta, cfg.n_samples)?)?;

    let results = run_pool(&cfg.families, workers, |fam| {
        align_samples(&source, &target, fam, &cfg.align)
    })?;
    let mut rows = Vec::with_capacity(results.len());
    for (family, res) in cfg.families.iter().zip(results) {
        let r = res?;
        rows.push(ToyRow {
            family: family.clone(),
            label: family_label(family),
            gaps: r.gaps,
            steps_taken: r.steps_taken,
            final_loss: r.final_loss,
            final_samples: r.measure,
        });
    }
    Ok(ToyReport { source, target, rows })
}

impl ToyReport {
    /// Columns: `family,gap_1..gap_6,total_gap,steps,final_loss`.
    pub fn write_gap_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
        let mut header = vec!["family".to_string()];
        header.extend((1..=GAP_ORDERS).map(|i| format!("gap_{i}")));
        header.extend(["total_gap", "steps", "final_loss"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone()];
            rec.extend(row.gaps.iter().map(|g| format!("{g:e}")));
            rec.push(format!("{:e}", row.total_gap()));
            rec.push(row.steps_taken.to_string());
            rec.push(format!("{:e}", row.final_loss));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Histogram densities on `[0, 1]`: one column for source, target and each aligned family.
    pub fn write_histogram_csv(&self, path: impl AsRef<Path>, bins: usize) -> Result<()> {
        if bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        let mut cols = vec![histogram(&self.source, bins), histogram(&self.target, bins)];
        cols.extend(self.rows.iter().map(|r| histogram(&r.final_samples, bins)));
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
        let mut header = vec!["bin_lo".to_string(), "bin_hi".into(), "source".into(), "target".into()];
        header.extend(self.rows.iter().map(|r| r.label.clone()));
        w.write_record(&header).map_err(csv_err)?;
        for b in 0..bins {
            let mut rec = vec![
                format!("{}", b as f64 / bins as f64),
                format!("{}", (b + 1) as f64 / bins as f64),
            ];
            rec.extend(cols.iter().map(|c| format!("{}", c[b])));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Density estimate in the first coordinate; values outside `[0, 1]` go to the edge bins.
fn histogram(m: &EmpiricalMeasure, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let row = m.columns().row(0);
    for &v in row.iter() {
        let b = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let scale = bins as f64 / row.len() as f64;
    counts.iter_mut().for_each(|c| *c *= scale);
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_samples() {
        let cfg = ToyConfig {
            n_samples: 0,
            ..Default::default()
        };
        assert!(matches!(run_toy_experiment(&cfg, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn labels() {
        assert_eq!(family_label(&StyleFamily::cmd(5).unwrap()), "cmd_k5");
        let w = crate::losses::MomentWeights::new(vec![0.0, 1.0, 1.0]).unwrap();
        assert_eq!(family_label(&StyleFamily::Cmd { moment_weights: w }), "cmd[0,1,1]");
        assert_eq!(family_label(&StyleFamily::MomentMatch), "mm");
    }

    #[test]
    fn histogram_integrates_to_one() {
        let m = EmpiricalMeasure::from_scalars(&[0.0, 0.3, 0.31, 1.0]).unwrap();
        let h = histogram(&m, 10);
        assert!((h.iter().sum::<f64>() / 10.0 - 1.0).abs() < 1e-12);
        assert_eq!(h[3], 5.0);
        assert_eq!(h[9], 2.5);
    }

    #[test]
    fn small_run_writes_outputs() {
        let cfg = ToyConfig {
            n_samples: 200,
            align: AlignConfig {
                steps: 50,
                ..Default::default()
            },
            ..Default::default()
        };
        let rep = run_toy_experiment(&cfg, 2).unwrap();
        assert_eq!(rep.rows.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        rep.write_gap_csv(dir.path().join("gaps.csv")).unwrap();
        rep.write_histogram_csv(dir.path().join("hist.csv"), HISTOGRAM_BINS)
            .unwrap();
        let gaps = std::fs::read_to_string(dir.path().join("gaps.csv")).unwrap();
        let lines: Vec<&str> = gaps.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("cmd_k5,") && lines[2].starts_with("mm,"));
        let hist = std::fs::read_to_string(dir.path().join("hist.csv")).unwrap();
        assert_eq!(hist.lines().count(), HISTOGRAM_BINS + 1);
    }
}
