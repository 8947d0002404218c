//! Style losses between feature distributions, the content loss, and their combination
//! `L = alpha L_content + (1 - alpha) sum_l w_l L_style^l`.
//!
//! Every loss returns its gradient w.r.t. the output-image features so the encoder can
//! pull it back to pixels.

mod cmd;
mod content;
mod gaussian_ot;
mod gram;
mod moment_match;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{moments_of_matrix, sigmoid_matrix, FeatureMap, LayerId, MomentSummary};

pub use cmd::{cmd_from_summaries, cmd_loss, cmd_loss_with_grad, cmd_terms, MomentWeights};
pub use content::content_loss;
pub use gaussian_ot::{gaussian_w2_loss, GaussianFit, RIDGE};
pub use gram::{gram_matrix, mmd_gram_loss};
pub use moment_match::{moment_match_loss, ChannelStats};

pub(crate) use cmd::cmd_against;
pub(crate) use gaussian_ot::{gaussian_against, GaussianTarget};
pub(crate) use gram::gram_against;
pub(crate) use moment_match::moment_match_against;

/// Features of one image, keyed by layer.
pub type LayerFeatures = BTreeMap<LayerId, FeatureMap>;

/// A loss value with its gradient w.r.t. the features it was evaluated on.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Cmd,
    MmdGram,
    MomentMatch,
    GaussianOt,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 4] = [
        FamilyKind::Cmd,
        FamilyKind::MmdGram,
        FamilyKind::MomentMatch,
        FamilyKind::GaussianOt,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FamilyKind::Cmd => "cmd",
            FamilyKind::MmdGram => "mmd_gram",
            FamilyKind::MomentMatch => "mm",
            FamilyKind::GaussianOt => "ot",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cmd" => Ok(FamilyKind::Cmd),
            "mmd" | "gram" | "mmd_gram" => Ok(FamilyKind::MmdGram),
            "mm" | "moment_match" | "moments" => Ok(FamilyKind::MomentMatch),
            "ot" | "w2" | "gaussian_ot" => Ok(FamilyKind::GaussianOt),
            other => Err(Error::config(format!("unknown loss family or method id '{other}'"))),
        }
    }
}

/// Which style loss, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StyleFamily {
    Cmd { moment_weights: MomentWeights },
    MmdGram,
    MomentMatch,
    GaussianOt,
}

impl StyleFamily {
    /// CMD with `a_i = 1` up to order `k`.
    pub fn cmd(k: usize) -> Result<Self> {
        Ok(StyleFamily::Cmd {
            moment_weights: MomentWeights::uniform(k)?,
        })
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            StyleFamily::Cmd { .. } => FamilyKind::Cmd,
            StyleFamily::MmdGram => FamilyKind::MmdGram,
            StyleFamily::MomentMatch => FamilyKind::MomentMatch,
            StyleFamily::GaussianOt => FamilyKind::GaussianOt,
        }
    }

    /// Default parameters for a family; CMD uses `K = 5`.
    pub fn default_for(kind: FamilyKind) -> Self {
        match kind {
            FamilyKind::Cmd => StyleFamily::cmd(DEFAULT_CMD_ORDER).expect("valid order"),
            FamilyKind::MmdGram => StyleFamily::MmdGram,
            FamilyKind::MomentMatch => StyleFamily::MomentMatch,
            FamilyKind::GaussianOt => StyleFamily::GaussianOt,
        }
    }
}

pub const DEFAULT_CMD_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleLossConfig {
    pub family: StyleFamily,
    /// `w_l` per style layer.
    pub layer_weights: BTreeMap<LayerId, f64>,
    pub content_layer: LayerId,
}

impl StyleLossConfig {
    /// Equal weights `1 / |layers|` over the given style layers.
    pub fn equal_weights(family: StyleFamily, style_layers: &[LayerId], content_layer: LayerId) -> Result<Self> {
        let w = 1.0 / style_layers.len().max(1) as f64;
        let cfg = StyleLossConfig {
            family,
            layer_weights: style_layers.iter().map(|l| (l.clone(), w)).collect(),
            content_layer,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_weights.is_empty() {
            return Err(Error::config("style layer weights are empty"));
        }
        if let Some((l, w)) = self.layer_weights.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::config(format!(
                "layer weight for {l} must be finite and >= 0, got {w}"
            )));
        }
        if let StyleFamily::Cmd { moment_weights } = &self.family {
            MomentWeights::new(moment_weights.as_slice().to_vec())?;
        }
        Ok(())
    }

    pub fn style_layers(&self) -> impl Iterator<Item = &LayerId> {
        self.layer_weights.keys()
    }

    /// Content layer plus style layers, deduplicated and sorted.
    pub fn required_layers(&self) -> Vec<LayerId> {
        let mut v: Vec<LayerId> = self.layer_weights.keys().cloned().collect();
        if !v.contains(&self.content_layer) {
            v.push(self.content_layer.clone());
        }
        v.sort();
        v
    }
}

/// Statistics of one style-image layer, computed once per run.
#[derive(Debug, Clone)]
pub enum StyleTarget {
    Cmd {
        moments: MomentSummary,
        weights: MomentWeights,
    },
    MmdGram {
        gram: Array2<f64>,
    },
    MomentMatch {
        stats: ChannelStats,
    },
    GaussianOt {
        target: gaussian_ot::GaussianTarget,
    },
}

impl StyleTarget {
    pub fn new(family: &StyleFamily, fs: &FeatureMap) -> Result<Self> {
        let x = fs.values();
        Ok(match family {
            StyleFamily::Cmd { moment_weights } => StyleTarget::Cmd {
                moments: moments_of_matrix(&sigmoid_matrix(x), moment_weights.order()),
                weights: moment_weights.clone(),
            },
            StyleFamily::MmdGram => StyleTarget::MmdGram { gram: gram_matrix(x) },
            StyleFamily::MomentMatch => StyleTarget::MomentMatch {
                stats: ChannelStats::of(x),
            },
            StyleFamily::GaussianOt => StyleTarget::GaussianOt {
                target: gaussian_ot::GaussianTarget::new(x)?,
            },
        })
    }

    fn channels(&self) -> usize {
        match self {
            StyleTarget::Cmd { moments, .. } => moments.mean.len(),
            StyleTarget::MmdGram { gram } => gram.nrows(),
            StyleTarget::MomentMatch { stats } => stats.mean.len(),
            StyleTarget::GaussianOt { target } => target.channels(),
        }
    }

    /// Layer loss and its gradient w.r.t. the raw output features. For CMD the
    /// features pass through the logistic map first.
    pub fn loss_and_grad(&self, fo: &Array2<f64>) -> Result<LossGrad> {
        if fo.nrows() != self.channels() {
            return Err(Error::invalid(format!(
                "style target has {} channels, output features have {}",
                self.channels(),
                fo.nrows()
            )));
        }
        match self {
            StyleTarget::Cmd { moments, weights } => Ok(cmd::cmd_sigmoid_against(fo, moments, weights)),
            StyleTarget::MmdGram { gram } => Ok(gram::gram_against(fo, gram)),
            StyleTarget::MomentMatch { stats } => Ok(moment_match_against(fo, stats)),
            StyleTarget::GaussianOt { target } => gaussian_ot::gaussian_against(fo, target),
        }
    }
}

/// Per-evaluation loss parts. `content` and `style` are unscaled by `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub content: f64,
    pub style: f64,
    pub per_layer: BTreeMap<LayerId, f64>,
}

/// The combined objective with cached content and style targets.
#[derive(Debug, Clone)]
pub struct Objective {
    alpha: f64,
    content_layer: LayerId,
    content_target: Array2<f64>,
    style: Vec<(LayerId, f64, StyleTarget)>,
}

impl Objective {
    pub fn new(fc: &LayerFeatures, fs: &LayerFeatures, cfg: &StyleLossConfig, alpha: f64) -> Result<Self> {
        cfg.validate()?;
        check_alpha(alpha)?;
        let content_target = fc
            .get(&cfg.content_layer)
            .ok_or_else(|| Error::invalid(format!("content features lack layer {}", cfg.content_layer)))?
            .values()
            .clone();
        let style = cfg
            .layer_weights
            .iter()
            .map(|(layer, w)| {
                let f = fs
                    .get(layer)
                    .ok_or_else(|| Error::invalid(format!("style features lack layer {layer}")))?;
                Ok((layer.clone(), *w, StyleTarget::new(&cfg.family, f)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective {
            alpha,
            content_layer: cfg.content_layer.clone(),
            content_target,
            style,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Same cached targets under a different mixing weight.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Objective { alpha, ..self.clone() })
    }

    pub fn layers(&self) -> Vec<LayerId> {
        let mut v: Vec<LayerId> = self.style.iter().map(|(l, _, _)| l.clone()).collect();
        if !v.contains(&self.content_layer) {
            v.push(self.content_layer.clone());
        }
        v.sort();
        v
    }

    pub fn evaluate(&self, fo: &LayerFeatures) -> Result<LossBreakdown> {
        self.evaluate_with_grad(fo).map(|(b, _)| b)
    }

    /// Loss parts and `dL/dF_o` for every layer that contributes.
    pub fn evaluate_with_grad(&self, fo: &LayerFeatures) -> Result<(LossBreakdown, BTreeMap<LayerId, Array2<f64>>)> {
        let lookup = |layer: &LayerId| {
            fo.get(layer)
                .map(FeatureMap::values)
                .ok_or_else(|| Error::invalid(format!("output features lack layer {layer}")))
        };
        let mut grads: BTreeMap<LayerId, Array2<f64>> = BTreeMap::new();

        let content = content::content_loss_grad(lookup(&self.content_layer)?, &self.content_target)?;
        if self.alpha > 0.0 {
            grads.insert(self.content_layer.clone(), content.grad * self.alpha);
        }

        let beta = 1.0 - self.alpha;
        let mut style = 0.0;
        let mut per_layer = BTreeMap::new();
        for (layer, w, target) in &self.style {
            let lg = target.loss_and_grad(lookup(layer)?)?;
            style += w * lg.value;
            per_layer.insert(layer.clone(), lg.value);
            let scale = beta * w;
            if scale > 0.0 {
                let g = lg.grad * scale;
                match grads.get_mut(layer) {
                    Some(acc) => *acc += &g,
                    None => {
                        grads.insert(layer.clone(), g);
                    }
                }
            }
        }
        let total = self.alpha * content.value + beta * style;
        Ok((
            LossBreakdown {
                total,
                content: content.value,
                style,
                per_layer,
            },
            grads,
        ))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// `alpha L_content + (1 - alpha) sum_l w_l L_style^l`.
pub fn total_loss(
    fo: &LayerFeatures,
    fc: &LayerFeatures,
    fs: &LayerFeatures,
    cfg: &StyleLossConfig,
    alpha: f64,
) -> Result<LossBreakdown> {
    Objective::new(fc, fs, cfg, alpha)?.evaluate(fo)
}
