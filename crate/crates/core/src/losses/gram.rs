//! Gram-matrix style loss, i.e. squared MMD under the quadratic kernel `k(x, y) = (x^T y)^2`.
//!
//! With `G = F F^T / n`, the biased (V-statistic) estimate of `mmd^2` equals
//! `||G_o - G_s||_F^2` exactly. The loss divides that by `4 C^2`.

use ndarray::Array2;

use super::LossGrad;
use crate::error::{Error, Result};
use crate::measures::FeatureMap;

/// `F F^T / n`, normalized by the map's own sample count.
pub fn gram_matrix(f: &Array2<f64>) -> Array2<f64> {
    f.dot(&f.t()) / f.ncols() as f64
}

pub fn mmd_gram_loss(fo: &FeatureMap, fs: &FeatureMap) -> Result<f64> {
    if fo.channels() != fs.channels() {
        return Err(Error::invalid(format!(
            "gram loss needs equal channel counts, got {} and {}",
            fo.channels(),
            fs.channels()
        )));
    }
    Ok(gram_against(fo.values(), &gram_matrix(fs.values())).value)
}

/// `d/dF_o = (G_o - G_s) F_o / (C^2 n)`.
pub(crate) fn gram_against(fo: &Array2<f64>, target: &Array2<f64>) -> LossGrad {
    let (c, n) = fo.dim();
    let diff = gram_matrix(fo) - target;
    let cc = (c * c) as f64;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / (4.0 * cc);
    let grad = diff.dot(fo) / (cc * n as f64);
    LossGrad { value, grad }
}
