use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{cmd_against, gram_against, gram_matrix, moment_match_against, ChannelStats, LossGrad};
use crate::losses::{GaussianTarget, StyleFamily};
use crate::measures::{moments_of_matrix, EmpiricalMeasure};

/// Moment orders covered by the gap report.
pub const GAP_ORDERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// The rate at step `t` is `learning_rate / (1 + t / decay_steps)`.
    pub decay_steps: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            steps: 2000,
            learning_rate: 0.05,
            decay_steps: 100.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentReport {
    pub measure: EmpiricalMeasure,
    /// `gaps[i - 1]` is `||c_i(final) - c_i(target)||_2` (the absolute gap in 1D).
    pub gaps: Vec<f64>,
    pub steps_taken: usize,
    pub final_loss: f64,
}

enum Target {
    Cmd(crate::measures::MomentSummary, crate::losses::MomentWeights),
    Gram(Array2<f64>),
    Stats(ChannelStats),
    Gaussian(GaussianTarget),
}

impl Target {
    fn eval(&self, x: &Array2<f64>) -> Result<LossGrad> {
        Ok(match self {
            Target::Cmd(m, w) => cmd_against(x, m, w),
            Target::Gram(g) => gram_against(x, g),
            Target::Stats(s) => moment_match_against(x, s),
            Target::Gaussian(t) => crate::losses::gaussian_against(x, t)?,
        })
    }
}

/// Gradient descent on the sample coordinates of `source` towards `target`.
///
/// Each atom moves along `n` times the loss gradient, i.e. the gradient w.r.t. the atom's
/// position under unit mass, so the step size does not shrink with the sample count.
/// The rate decays harmonically, as usual for subgradient methods on the non-smooth CMD
/// norms, and the best iterate seen is returned. CMD iterates are clamped to `[0, 1]`.
/// In one dimension the moment-matching and Gaussian OT losses coincide and share one
/// code path.
pub fn align_samples(
    source: &EmpiricalMeasure,
    target: &EmpiricalMeasure,
    family: &StyleFamily,
    cfg: &AlignConfig,
) -> Result<AlignmentReport> {
    if source.dim() != target.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            source.dim(),
            target.dim()
        )));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if cfg.decay_steps.is_nan() || cfg.decay_steps <= 0.0 {
        return Err(Error::invalid(format!(
            "decay_steps must be positive, got {}",
            cfg.decay_steps
        )));
    }
    let y = target.columns();
    let clamp = matches!(family, StyleFamily::Cmd { .. });
    if clamp && (!source.is_support_bounded() || !target.is_support_bounded()) {
        return Err(Error::Contract("CMD alignment needs samples in [0, 1]".into()));
    }
    let tgt = match family {
        StyleFamily::Cmd { moment_weights } => {
            Target::Cmd(moments_of_matrix(y, moment_weights.order()), moment_weights.clone())
        }
        StyleFamily::MmdGram => Target::Gram(gram_matrix(y)),
        StyleFamily::GaussianOt if y.nrows() > 1 => Target::Gaussian(GaussianTarget::new(y)?),
        StyleFamily::MomentMatch | StyleFamily::GaussianOt => Target::Stats(ChannelStats::of(y)),
    };

    let mut x = source.columns().clone();
    let n = x.ncols() as f64;
    let mut current = tgt.eval(&x)?;
    let mut best = (current.value, x.clone());
    let mut steps_taken = 0;
    for step in 0..cfg.steps {
        if current.value == 0.0 {
            break;
        }
        let lr = cfg.learning_rate / (1.0 + step as f64 / cfg.decay_steps);
        x.scaled_add(-lr * n, &current.grad);
        if clamp {
            x.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
        current = tgt.eval(&x)?;
        if !current.value.is_finite() || current.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(format!(
                "alignment diverged at step {step}: loss {}",
                current.value
            )));
        }
        if current.value < best.0 {
            best = (current.value, x.clone());
        }
        steps_taken += 1;
    }
    let x = best.1;
    let value = best.0;

    let own = moments_of_matrix(&x, GAP_ORDERS);
    let reference = moments_of_matrix(y, GAP_ORDERS);
    let gaps = crate::losses::cmd_terms(&own, &reference);
    Ok(AlignmentReport {
        measure: EmpiricalMeasure::from_columns(x)?,
        gaps,
        steps_taken,
        final_loss: value,
    })
}
