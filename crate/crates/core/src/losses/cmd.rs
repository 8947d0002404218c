//! Central moment discrepancy over marginal moments.
//!
//! `cmd_K(P, Q) = sum_i a_i ||c_i(P) - c_i(Q)||_2`, where `c_1` is the mean and
//! `c_i` (i >= 2) the per-channel central moment of order `i`. Both measures must
//! be supported on `[0, 1]`.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::LossGrad;
use crate::error::{Error, Result};
use crate::measures::{moments_of_matrix, sigmoid_matrix, EmpiricalMeasure, MomentSummary};

/// Non-negative weights `a_1..a_K`; the vector length is the moment order `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MomentWeights(Vec<f64>);

impl MomentWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("moment weight vector is empty"));
        }
        if weights.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::config(format!(
                "moment weights must be finite and >= 0, got {weights:?}"
            )));
        }
        if weights.iter().all(|a| *a == 0.0) {
            return Err(Error::config("at least one moment weight must be positive"));
        }
        Ok(MomentWeights(weights))
    }

    /// `a_i = 1` for every `i <= order`.
    pub fn uniform(order: usize) -> Result<Self> {
        Self::new(vec![1.0; order])
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for MomentWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        MomentWeights::new(v)
    }
}

impl From<MomentWeights> for Vec<f64> {
    fn from(w: MomentWeights) -> Self {
        w.0
    }
}

fn check_pair(p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    if !p.is_support_bounded() || !q.is_support_bounded() {
        return Err(Error::Contract(
            "CMD needs both measures supported on [0, 1]; apply sigmoid_transform first".into(),
        ));
    }
    Ok(())
}

pub fn cmd_loss(p: &EmpiricalMeasure, q: &EmpiricalMeasure, weights: &MomentWeights) -> Result<f64> {
    check_pair(p, q)?;
    let k = weights.order();
    let mp = moments_of_matrix(p.columns(), k);
    let mq = moments_of_matrix(q.columns(), k);
    Ok(cmd_from_summaries(&mp, &mq, weights))
}

/// Loss and its gradient w.r.t. the coordinates of `p`'s samples.
pub fn cmd_loss_with_grad(
    p: &EmpiricalMeasure,
    q: &EmpiricalMeasure,
    weights: &MomentWeights,
) -> Result<(f64, Array2<f64>)> {
    check_pair(p, q)?;
    let target = moments_of_matrix(q.columns(), weights.order());
    let lg = cmd_against(p.columns(), &target, weights);
    Ok((lg.value, lg.grad))
}

/// Per-order terms `||c_i(P) - c_i(Q)||_2`, unweighted.
pub fn cmd_terms(p: &MomentSummary, q: &MomentSummary) -> Vec<f64> {
    let k = p.order().min(q.order());
    (1..=k)
        .map(|i| {
            p.moment(i)
                .iter()
                .zip(q.moment(i).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

pub fn cmd_from_summaries(p: &MomentSummary, q: &MomentSummary, weights: &MomentWeights) -> f64 {
    cmd_terms(p, q).iter().zip(weights.as_slice()).map(|(t, a)| a * t).sum()
}

/// Evaluates against precomputed target moments. `x` is `C × n` with entries in `[0, 1]`.
///
/// With `d = x - mu` and `m_r` the mean of `d^r` (so `m_1 = 0`),
/// `dc_i/dx_k = (i / n) (d_k^{i-1} - m_{i-1})` for `i >= 2` and `1 / n` for `i = 1`.
/// A term whose norm is zero contributes a zero subgradient.
pub(crate) fn cmd_against(x: &Array2<f64>, target: &MomentSummary, weights: &MomentWeights) -> LossGrad {
    cmd_in_place(x.clone(), target, weights, false)
}

/// CMD on `sigmoid(fo)`, with the gradient taken w.r.t. the raw features `fo`.
pub(crate) fn cmd_sigmoid_against(fo: &Array2<f64>, target: &MomentSummary, weights: &MomentWeights) -> LossGrad {
    cmd_in_place(sigmoid_matrix(fo), target, weights, true)
}

/// Overwrites `work` (values in `[0, 1]`) with the gradient. With `chain` set, `work`
/// holds logistic outputs `s` and the gradient is multiplied by `s (1 - s)`.
fn cmd_in_place(mut work: Array2<f64>, target: &MomentSummary, weights: &MomentWeights, chain: bool) -> LossGrad {
    let k = weights.order();
    let a = weights.as_slice();
    let (c, n) = work.dim();
    let inv_n = 1.0 / n as f64;
    let own = moments_of_matrix(&work, k);

    // unit directions of each order's moment difference
    let mut value = 0.0;
    let mut dirs = Array2::<f64>::zeros((k, c));
    for i in 1..=k {
        let diff = &own.moment(i) - &target.moment(i);
        let norm = diff.dot(&diff).sqrt();
        value += a[i - 1] * norm;
        if norm > 0.0 {
            dirs.row_mut(i - 1).assign(&(diff / norm));
        }
    }

    let mut beta = vec![0.0; k + 1];
    for (ch, mut row) in work.axis_iter_mut(Axis(0)).enumerate() {
        let mu = own.mean[ch];
        // polynomial coefficients in d: g(d) = constant + sum_{i>=2} beta_i d^{i-1}
        let mut constant = a[0] * dirs[[0, ch]] * inv_n;
        for i in 2..=k {
            beta[i] = a[i - 1] * dirs[[i - 1, ch]] * i as f64 * inv_n;
            if i >= 3 {
                constant -= beta[i] * own.moment(i - 1)[ch];
            }
        }
        let horner = |v: f64| {
            let d = v - mu;
            // beta_k d^{k-1} + ... + beta_2 d
            let mut acc = 0.0;
            for b in beta[2..].iter().rev() {
                acc = acc * d + b;
            }
            constant + acc * d
        };
        if chain {
            row.mapv_inplace(|s| horner(s) * s * (1.0 - s));
        } else {
            row.mapv_inplace(horner);
        }
    }
    LossGrad { value, grad: work }
}
