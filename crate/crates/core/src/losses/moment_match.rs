//! Mean / standard-deviation matching, as used by batch-normalization style losses.

use ndarray::{Array1, Array2, Axis};

use super::LossGrad;
use crate::error::{Error, Result};
use crate::measures::FeatureMap;

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl ChannelStats {
    pub fn of(f: &Array2<f64>) -> Self {
        let mean = f.mean_axis(Axis(1)).expect("non-empty");
        let n = f.ncols() as f64;
        let std = Array1::from_iter(
            f.axis_iter(Axis(0))
                .zip(mean.iter())
                .map(|(row, &mu)| (row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt()),
        );
        ChannelStats { mean, std }
    }
}

pub fn moment_match_loss(fo: &FeatureMap, fs: &FeatureMap) -> Result<f64> {
    if fo.channels() != fs.channels() {
        return Err(Error::invalid(format!(
            "moment matching needs equal channel counts, got {} and {}",
            fo.channels(),
            fs.channels()
        )));
    }
    Ok(moment_match_against(fo.values(), &ChannelStats::of(fs.values())).value)
}

/// `sum_c (mu_o - mu_s)^2 + (sigma_o - sigma_s)^2`. A channel with zero spread
/// gets a zero subgradient from its sigma term.
pub(crate) fn moment_match_against(fo: &Array2<f64>, target: &ChannelStats) -> LossGrad {
    let own = ChannelStats::of(fo);
    let n = fo.ncols() as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(fo.dim());
    for (ch, (row, mut grow)) in fo.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))).enumerate() {
        let dmu = own.mean[ch] - target.mean[ch];
        let dsd = own.std[ch] - target.std[ch];
        value += dmu * dmu + dsd * dsd;
        let mean_part = 2.0 * dmu / n;
        let sd_part = if own.std[ch] > 0.0 {
            2.0 * dsd / (n * own.std[ch])
        } else {
            0.0
        };
        let mu = own.mean[ch];
        for (g, &v) in grow.iter_mut().zip(row.iter()) {
            *g = mean_part + sd_part * (v - mu);
        }
    }
    LossGrad { value, grad }
}
