//! Feature maps viewed as empirical measures, and their marginal central moments.
//!
//! A feature map of one encoder layer is a `C × n` matrix: one row per channel,
//! one column per spatial position. Dropping the spatial layout turns it into an
//! equal-weight atomic measure over `n` points in `R^C`.

use std::cmp::Ordering;
use std::fmt;

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of an encoder layer, e.g. `conv4_1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerId(String);

impl LayerId {
    pub fn new(name: impl Into<String>) -> Self {
        LayerId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LayerId {
    fn from(s: &str) -> Self {
        LayerId(s.to_string())
    }
}

/// Activations of one layer, reshaped to `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    layer: LayerId,
    values: Array2<f64>,
}

impl FeatureMap {
    pub fn new(layer: impl Into<LayerId>, values: Array2<f64>) -> Result<Self> {
        let layer = layer.into();
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid(format!(
                "feature map {layer} is empty ({}x{})",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature map {layer} has non-finite entries")));
        }
        Ok(FeatureMap { layer, values })
    }

    /// Builds a map from an `H × W × C` activation block, scanning positions row-major.
    pub fn from_hwc(layer: impl Into<LayerId>, block: &Array3<f64>) -> Result<Self> {
        let (h, w, c) = block.dim();
        let mut values = Array2::zeros((c, h * w));
        for ((y, x, ch), v) in block.indexed_iter() {
            values[[ch, y * w + x]] = *v;
        }
        Self::new(layer, values)
    }

    pub fn layer(&self) -> &LayerId {
        &self.layer
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn samples(&self) -> usize {
        self.values.ncols()
    }
}

impl From<String> for LayerId {
    fn from(s: String) -> Self {
        LayerId(s)
    }
}

impl From<&LayerId> for LayerId {
    fn from(id: &LayerId) -> Self {
        id.clone()
    }
}

/// Equal-weight atomic measure. Samples are stored as the columns of a `C × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    samples: Array2<f64>,
    support_bounded: bool,
}

impl EmpiricalMeasure {
    /// Wraps a `C × n` matrix whose columns are the atoms.
    pub fn from_columns(samples: Array2<f64>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::invalid(
                "empirical measure needs at least one sample of dimension >= 1",
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("empirical measure has non-finite coordinates"));
        }
        let support_bounded = samples.iter().all(|v| (0.0..=1.0).contains(v));
        Ok(EmpiricalMeasure {
            samples,
            support_bounded,
        })
    }

    /// Builds a measure from a list of points; all points must share one dimension.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("all samples must have identical dimension"));
        }
        let mut samples = Array2::zeros((dim, points.len()));
        for (j, p) in points.iter().enumerate() {
            for (c, v) in p.iter().enumerate() {
                samples[[c, j]] = *v;
            }
        }
        Self::from_columns(samples)
    }

    /// One-dimensional measure over the given scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let samples =
            Array2::from_shape_vec((1, values.len()), values.to_vec()).map_err(|e| Error::invalid(e.to_string()))?;
        Self::from_columns(samples)
    }

    pub fn dim(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// Mass carried by each atom.
    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn is_support_bounded(&self) -> bool {
        self.support_bounded
    }

    pub fn columns(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn sample(&self, j: usize) -> ArrayView1<'_, f64> {
        self.samples.column(j)
    }

    /// Points in a canonical (lexicographic) order. Two measures are equal iff these agree.
    pub fn sorted_points(&self) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = self.samples.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
        pts.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        });
        pts
    }

    pub fn eq_as_multiset(&self, other: &EmpiricalMeasure) -> bool {
        self.dim() == other.dim() && self.len() == other.len() && self.sorted_points() == other.sorted_points()
    }
}

/// Per-channel mean (`c_1`) plus marginal central moments `c_2..c_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: Array1<f64>,
    /// `central[i - 2]` holds `c_i`.
    pub central: Vec<Array1<f64>>,
}

impl MomentSummary {
    /// Highest order `K` held by the summary.
    pub fn order(&self) -> usize {
        self.central.len() + 1
    }

    /// `c_i` for `1 <= i <= K`.
    pub fn moment(&self, i: usize) -> ArrayView1<'_, f64> {
        assert!(
            i >= 1 && i <= self.order(),
            "moment order {i} out of range 1..={}",
            self.order()
        );
        if i == 1 {
            self.mean.view()
        } else {
            self.central[i - 2].view()
        }
    }
}

/// Each atom is the column of `F` at one spatial position.
pub fn feature_map_to_measure(map: &FeatureMap) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::from_columns(map.values().clone())
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Coordinatewise logistic map; the result always lies in `(0, 1)`.
pub fn sigmoid_transform(m: &EmpiricalMeasure) -> EmpiricalMeasure {
    EmpiricalMeasure {
        samples: sigmoid_matrix(m.columns()),
        support_bounded: true,
    }
}

pub(crate) fn sigmoid_matrix(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.as_standard_layout().into_owned();
    match out.as_slice_mut() {
        Some(flat) => flat.iter_mut().for_each(|v| *v = logistic_fast(*v)),
        None => out.mapv_inplace(logistic_fast),
    }
    out
}

/// Branch-free logistic for the hot loss path, `1 / (1 + exp(-x))` with a polynomial `exp`.
/// Agrees with [`logistic`] to a few ulps.
#[inline]
fn logistic_fast(x: f64) -> f64 {
    1.0 / (1.0 + exp_poly((-x).clamp(-700.0, 700.0)))
}

/// `exp` on `[-700, 700]`: `2^k e^r` with `|r| <= ln2 / 2` and a degree-12 Taylor polynomial.
#[inline]
fn exp_poly(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // round to nearest through the 2^52 + 2^51 shifter; |x log2 e| < 2^51
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let k = (x * std::f64::consts::LOG2_E + SHIFT) - SHIFT;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    p * f64::from_bits(((k as i64 + 1023) as u64) << 52)
}

/// Pulls a gradient taken w.r.t. sigmoid outputs back to the inputs.
#[cfg(test)]
pub(crate) fn sigmoid_backward(outputs: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
    let mut g = upstream.clone();
    ndarray::Zip::from(&mut g)
        .and(outputs)
        .for_each(|g, &s| *g *= s * (1.0 - s));
    g
}

/// Two passes over each channel: mean first, then the centered powers.
pub fn marginal_central_moments(m: &EmpiricalMeasure, order: usize) -> Result<MomentSummary> {
    if order < 1 {
        return Err(Error::invalid("moment order K must be >= 1"));
    }
    Ok(moments_of_matrix(m.columns(), order))
}

pub(crate) fn moments_of_matrix(x: &Array2<f64>, order: usize) -> MomentSummary {
    let (c, n) = x.dim();
    let inv_n = 1.0 / n as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty");
    let mut central = vec![Array1::zeros(c); order.saturating_sub(1)];
    let mut acc = vec![0.0; order + 1];
    for (ch, row) in x.axis_iter(Axis(0)).enumerate() {
        let mu = mean[ch];
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &v in row.iter() {
            let d = v - mu;
            let mut p = d;
            for a in acc.iter_mut().take(order + 1).skip(2) {
                p *= d;
                *a += p;
            }
        }
        for i in 2..=order {
            central[i - 2][ch] = acc[i] * inv_n;
        }
    }
    MomentSummary { mean, central }
}

/// Per-channel `E|x - mu|^i` for `i = 2..=order`; entry `i - 2` of the result.
pub fn absolute_central_moments(m: &EmpiricalMeasure, order: usize) -> Vec<Array1<f64>> {
    let x = m.columns();
    let (c, n) = x.dim();
    let mean = x.mean_axis(Axis(1)).expect("non-empty");
    let mut out = vec![Array1::zeros(c); order.saturating_sub(1)];
    for (ch, row) in x.axis_iter(Axis(0)).enumerate() {
        for &v in row.iter() {
            let d = (v - mean[ch]).abs();
            let mut p = d;
            for slot in out.iter_mut() {
                p *= d;
                slot[ch] += p;
            }
        }
    }
    for slot in out.iter_mut() {
        slot.mapv_inplace(|s| s / n as f64);
    }
    out
}
