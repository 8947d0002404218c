//! Pixel-space optimization of the output image, plus the particle-alignment routine
//! used by the one-dimensional toy study.

mod align;

use std::path::Path;

use ndarray::Array3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{Objective, StyleLossConfig};

pub use align::{align_samples, AlignConfig, AlignmentReport, GAP_ORDERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    ContentCopy,
    /// Uniform `[0, 1]` noise drawn from the run seed.
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Moving-average window `W` of the stopping rule.
    pub stop_window: usize,
    pub stop_rel_tol: f64,
    pub min_iterations: usize,
    /// When false the run always executes `max_iterations` (used for timing).
    pub stopping: bool,
    pub seed: u64,
    pub init: Init,
    pub adam: AdamParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub const DEFAULT_ALPHA: f64 = 0.2;

impl Default for OptimizationConfig {
    fn default() -> Self {
        let stop_window = 50;
        OptimizationConfig {
            alpha: DEFAULT_ALPHA,
            learning_rate: 0.1,
            max_iterations: 500,
            stop_window,
            stop_rel_tol: 1e-4,
            min_iterations: 2 * stop_window,
            stopping: true,
            seed: 0,
            init: Init::ContentCopy,
            adam: AdamParams::default(),
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.stop_window < 1 {
            return Err(Error::config("stop window must be >= 1"));
        }
        if !(self.stop_rel_tol > 0.0 && self.stop_rel_tol < 1.0) {
            return Err(Error::config(format!(
                "stop tolerance must lie in (0, 1), got {}",
                self.stop_rel_tol
            )));
        }
        if self.max_iterations < self.min_iterations {
            return Err(Error::config(format!(
                "max_iterations ({}) must be >= min_iterations ({})",
                self.max_iterations, self.min_iterations
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    pub content: f64,
    pub style: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
}

/// Result of one stylization. The image is the one the last trace row was evaluated on.
#[derive(Debug, Clone)]
pub struct OptimizationRun {
    pub image: Image,
    pub trace: Vec<TraceRow>,
    pub iterations_executed: usize,
    pub stop_reason: StopReason,
    pub config: OptimizationConfig,
}

impl OptimizationRun {
    pub fn initial(&self) -> &TraceRow {
        &self.trace[0]
    }

    pub fn last(&self) -> &TraceRow {
        self.trace.last().expect("trace is never empty")
    }

    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_trace_csv(&self.trace, path)
    }

    pub fn metadata(&self) -> RunMetadata {
        RunMetadata {
            iterations_executed: self.iterations_executed,
            stop_reason: self.stop_reason,
            initial: *self.initial(),
            last: *self.last(),
            config: self.config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub iterations_executed: usize,
    pub stop_reason: StopReason,
    pub initial: TraceRow,
    pub last: TraceRow,
    pub config: OptimizationConfig,
}

/// Columns: `iteration,total,content,style`.
pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    for row in trace {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

/// `|L_t - MA_W| / MA_W < tol` over the last `W` style losses (current one included).
/// A window of exact zeros counts as converged.
pub fn stop_rule_fires(style_losses: &[f64], window: usize, rel_tol: f64) -> bool {
    if style_losses.len() < window || window == 0 {
        return false;
    }
    let recent = &style_losses[style_losses.len() - window..];
    let ma = recent.iter().sum::<f64>() / window as f64;
    let current = *recent.last().expect("window >= 1");
    let diff = (current - ma).abs();
    diff == 0.0 || diff < rel_tol * ma
}

/// Content image, encoder and cached target features for repeated runs.
pub struct Stylizer<'a> {
    encoder: &'a Encoder,
    content: Image,
    objective: Objective,
    layers: Vec<crate::measures::LayerId>,
}

impl<'a> Stylizer<'a> {
    pub fn new(content: &Image, style: &Image, encoder: &'a Encoder, loss_cfg: &StyleLossConfig) -> Result<Self> {
        loss_cfg.validate()?;
        let arch = encoder.architecture();
        for l in loss_cfg.required_layers() {
            if arch.channels(&l).is_none() {
                return Err(Error::config(format!(
                    "loss config uses layer {l}, which {} does not have",
                    arch.id()
                )));
            }
        }
        let content_layers = [loss_cfg.content_layer.clone()];
        let style_layers: Vec<_> = loss_cfg.style_layers().cloned().collect();
        let fc = encoder.extract_features(content, &content_layers)?;
        let fs = encoder.extract_features(style, &style_layers)?;
        // alpha is supplied per run
        let objective = Objective::new(&fc, &fs, loss_cfg, 0.5)?;
        let layers = objective.layers();
        Ok(Stylizer {
            encoder,
            content: content.clone(),
            objective,
            layers,
        })
    }

    pub fn run(&self, cfg: &OptimizationConfig) -> Result<OptimizationRun> {
        cfg.validate()?;
        let objective = self.objective.with_alpha(cfg.alpha)?;
        let mut image = match cfg.init {
            Init::ContentCopy => self.content.clone(),
            Init::Noise => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let (h, w) = (self.content.height(), self.content.width());
                Image::from_raw(Array3::from_shape_fn((h, w, 3), |_| rng.random_range(0.0..1.0)))
            }
        };
        let mut adam = Adam::new(image.pixels().dim(), cfg.adam, cfg.learning_rate);
        let mut trace = Vec::with_capacity(cfg.max_iterations);
        let mut style_hist = Vec::with_capacity(cfg.max_iterations);
        let mut stop_reason = StopReason::MaxIters;

        for it in 1..=cfg.max_iterations {
            let pass = self.encoder.forward(&image, &self.layers)?;
            let (parts, grads) = objective.evaluate_with_grad(&pass.features)?;
            let row = TraceRow {
                iteration: it,
                total: parts.total,
                content: parts.content,
                style: parts.style,
            };
            if ![row.total, row.content, row.style].iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged {
                    iteration: it,
                    detail: format!(
                        "non-finite loss (total {}, content {}, style {})",
                        row.total, row.content, row.style
                    ),
                    trace,
                });
            }
            trace.push(row);
            style_hist.push(row.style);

            if cfg.stopping
                && it >= cfg.min_iterations
                && stop_rule_fires(&style_hist, cfg.stop_window, cfg.stop_rel_tol)
            {
                stop_reason = StopReason::Converged;
                break;
            }
            if it == cfg.max_iterations {
                break;
            }
            let grad = self.encoder.backward(&pass, &grads)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    iteration: it,
                    detail: "non-finite pixel gradient".into(),
                    trace,
                });
            }
            adam.step(image.pixels_mut(), &grad);
            image.pixels_mut().mapv_inplace(|v| v.clamp(0.0, 1.0));
        }

        Ok(OptimizationRun {
            image,
            iterations_executed: trace.len(),
            trace,
            stop_reason,
            config: cfg.clone(),
        })
    }

    /// One run per alpha with shared targets, in input order.
    pub fn alpha_sweep(&self, base: &OptimizationConfig, alphas: &[f64]) -> Result<Vec<OptimizationRun>> {
        alphas
            .iter()
            .map(|&alpha| self.run(&OptimizationConfig { alpha, ..base.clone() }))
            .collect()
    }
}

pub fn stylize(
    content: &Image,
    style: &Image,
    encoder: &Encoder,
    loss_cfg: &StyleLossConfig,
    opt_cfg: &OptimizationConfig,
) -> Result<OptimizationRun> {
    opt_cfg.validate()?;
    Stylizer::new(content, style, encoder, loss_cfg)?.run(opt_cfg)
}

pub fn alpha_sweep(
    content: &Image,
    style: &Image,
    encoder: &Encoder,
    loss_cfg: &StyleLossConfig,
    base: &OptimizationConfig,
    alphas: &[f64],
) -> Result<Vec<OptimizationRun>> {
    if alphas.is_empty() {
        return Ok(Vec::new());
    }
    Stylizer::new(content, style, encoder, loss_cfg)?.alpha_sweep(base, alphas)
}

struct Adam {
    params: AdamParams,
    lr: f64,
    m: Array3<f64>,
    v: Array3<f64>,
    t: i32,
}

impl Adam {
    fn new(dim: (usize, usize, usize), params: AdamParams, lr: f64) -> Self {
        Adam {
            params,
            lr,
            m: Array3::zeros(dim),
            v: Array3::zeros(dim),
            t: 0,
        }
    }

    fn step(&mut self, x: &mut Array3<f64>, g: &Array3<f64>) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let lr = self.lr;
        ndarray::Zip::from(x)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(g)
            .for_each(|x, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            });
    }
}
