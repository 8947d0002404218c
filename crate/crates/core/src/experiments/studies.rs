use serde::Serialize;

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{MomentWeights, StyleFamily, StyleLossConfig};
use crate::optimizer::{OptimizationConfig, OptimizationRun, Stylizer, TraceRow};

use super::run_pool;

pub const STUDY_LEARNING_RATES: [f64; 4] = [0.01, 0.1, 0.2, 0.3];

/// Binary moment-weight vectors, each optionally tagged with its grid cell `(i, j)`
/// meaning "moments i through j" (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub entries: Vec<(Option<(usize, usize)>, MomentWeights)>,
}

impl AblationGrid {
    /// Every `i <= j <= k`: row `i`, column `j` switches on moments `i..=j`.
    pub fn upper_triangular(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("ablation grid needs K >= 1"));
        }
        let mut entries = Vec::new();
        for i in 1..=k {
            for j in i..=k {
                let w = (1..=k).map(|o| if (i..=j).contains(&o) { 1.0 } else { 0.0 }).collect();
                entries.push((Some((i, j)), MomentWeights::new(w)?));
            }
        }
        Ok(AblationGrid { entries })
    }

    /// Explicit vectors. Exact duplicates are dropped with a warning; the first copy stays.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let mut entries: Vec<(Option<(usize, usize)>, MomentWeights)> = Vec::new();
        for v in vectors {
            let w = MomentWeights::new(v)?;
            if entries.iter().any(|(_, e)| *e == w) {
                log::warn!("duplicate moment-weight vector {:?} dropped", w.as_slice());
                continue;
            }
            entries.push((None, w));
        }
        Ok(AblationGrid { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub cell: Option<(usize, usize)>,
    pub weights: MomentWeights,
    pub run: OptimizationRun,
}

/// One CMD stylization per weight vector, using the layers of `base`.
pub fn run_moment_ablation(
    content: &Image,
    style: &Image,
    encoder: &Encoder,
    base: &StyleLossConfig,
    opt: &OptimizationConfig,
    grid: &AblationGrid,
    workers: usize,
) -> Result<Vec<AblationRun>> {
    opt.validate()?;
    let runs = run_pool(&grid.entries, workers, |(_, w)| {
        let cfg = StyleLossConfig {
            family: StyleFamily::Cmd {
                moment_weights: w.clone(),
            },
            ..base.clone()
        };
        Stylizer::new(content, style, encoder, &cfg)?.run(opt)
    })?;
    grid.entries
        .iter()
        .zip(runs)
        .map(|((cell, weights), run)| {
            Ok(AblationRun {
                cell: *cell,
                weights: weights.clone(),
                run: run?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LrOutcome {
    pub learning_rate: f64,
    #[serde(skip)]
    pub run: Option<OptimizationRun>,
    /// Why the run was aborted, if it diverged.
    pub aborted: Option<String>,
    /// Trace up to the abort, or the full trace.
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl LrOutcome {
    pub fn final_content(&self) -> Option<f64> {
        self.run.as_ref().map(|r| r.last().content)
    }
}

/// One stylization per learning rate with shared targets. A diverging run is recorded
/// as aborted; other errors are returned.
pub fn run_lr_study(
    content: &Image,
    style: &Image,
    encoder: &Encoder,
    loss_cfg: &StyleLossConfig,
    base: &OptimizationConfig,
    learning_rates: &[f64],
    workers: usize,
) -> Result<Vec<LrOutcome>> {
    if let Some(bad) = learning_rates.iter().find(|lr| !(lr.is_finite() && **lr > 0.0)) {
        return Err(Error::invalid(format!("learning rates must be positive, got {bad}")));
    }
    let stylizer = Stylizer::new(content, style, encoder, loss_cfg)?;
    let results = run_pool(learning_rates, workers, |&lr| {
        stylizer.run(&OptimizationConfig {
            learning_rate: lr,
            ..base.clone()
        })
    })?;
    learning_rates
        .iter()
        .zip(results)
        .map(|(&learning_rate, res)| match res {
            Ok(run) => Ok(LrOutcome {
                learning_rate,
                trace: run.trace.clone(),
                run: Some(run),
                aborted: None,
            }),
            Err(Error::Diverged {
                iteration,
                detail,
                trace,
            }) => Ok(LrOutcome {
                learning_rate,
                run: None,
                aborted: Some(format!("iteration {iteration}: {detail}")),
                trace,
            }),
            Err(e) => Err(e),
        })
        .collect()
}
