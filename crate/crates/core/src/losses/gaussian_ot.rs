//! Squared 2-Wasserstein distance between the Gaussian fits of two feature maps.
//!
//! `W2^2 = ||mu_o - mu_s||^2 + Tr(S_o + S_s - 2 (S_o^{1/2} S_s S_o^{1/2})^{1/2})`.
//! The cross term is evaluated as `Tr((S_s^{1/2} S_o S_s^{1/2})^{1/2})`; both products
//! share their spectrum with `S_o S_s`, and this form only needs the target's square root.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use super::LossGrad;
use crate::error::{Error, Result};
use crate::measures::FeatureMap;

/// Eigenvalue floor used when inverting a rank-deficient square root.
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: Array1<f64>,
    /// Population covariance (divide by n).
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    pub fn of(f: &Array2<f64>) -> Result<Self> {
        let (c, n) = f.dim();
        if n < 2 {
            return Err(Error::invalid(format!("Gaussian fit needs n >= 2 samples, got {n}")));
        }
        let mean = f.mean_axis(Axis(1)).expect("non-empty");
        let centered = f - &mean.view().insert_axis(Axis(1));
        let cov_nd = centered.dot(&centered.t()) / n as f64;
        if cov_nd.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("covariance has non-finite entries"));
        }
        let cov = DMatrix::from_fn(c, c, |i, j| 0.5 * (cov_nd[[i, j]] + cov_nd[[j, i]]));
        Ok(GaussianFit { mean, cov })
    }
}

/// Cached target side: Gaussian fit plus `S_s^{1/2}`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    fit: GaussianFit,
    cov_sqrt: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(fs: &Array2<f64>) -> Result<Self> {
        let fit = GaussianFit::of(fs)?;
        let cov_sqrt = sym_pow(&fit.cov, 0.5, 0.0)?;
        Ok(GaussianTarget { fit, cov_sqrt })
    }

    pub fn channels(&self) -> usize {
        self.fit.mean.len()
    }
}

fn sym_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("symmetric eigendecomposition of a non-finite matrix"));
    }
    Ok(SymmetricEigen::new(m.clone()))
}

/// `V diag(max(lambda, floor)^p) V^T`, negative eigenvalues clamped to the floor.
fn sym_pow(m: &DMatrix<f64>, p: f64, floor: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    let vals = eig.eigenvalues.map(|l| l.max(floor).powf(p));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&vals) * v.transpose())
}

pub fn gaussian_w2_loss(fo: &FeatureMap, fs: &FeatureMap) -> Result<f64> {
    if fo.channels() != fs.channels() {
        return Err(Error::invalid(format!(
            "Gaussian W2 needs equal channel counts, got {} and {}",
            fo.channels(),
            fs.channels()
        )));
    }
    Ok(gaussian_against(fo.values(), &GaussianTarget::new(fs.values())?)?.value)
}

/// With `M = S_s^{1/2} S_o S_s^{1/2}`, `dW2^2/dS_o = I - S_s^{1/2} M^{-1/2} S_s^{1/2}`,
/// and through `S_o = D D^T / n` each centered column `d_k` receives `(2/n) G d_k`.
pub(crate) fn gaussian_against(fo: &Array2<f64>, target: &GaussianTarget) -> Result<LossGrad> {
    let own = GaussianFit::of(fo)?;
    let (c, n) = fo.dim();
    let root = &target.cov_sqrt;
    let m = root * &own.cov * root;
    let m = (&m + m.transpose()) * 0.5;
    let eig = sym_eigen(&m)?;
    let cross: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();

    let dmu = &own.mean - &target.fit.mean;
    let value = dmu.dot(&dmu) + own.cov.trace() + target.fit.cov.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::numeric("Gaussian W2 evaluated to a non-finite value"));
    }

    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(RIDGE).sqrt());
    let v = &eig.eigenvectors;
    let m_inv_sqrt = v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose();
    let g_cov = DMatrix::identity(c, c) - root * m_inv_sqrt * root;
    let g = Array2::from_shape_fn((c, c), |(i, j)| 0.5 * (g_cov[(i, j)] + g_cov[(j, i)]));

    let centered = fo - &own.mean.view().insert_axis(Axis(1));
    let mut grad = g.dot(&centered) * (2.0 / n as f64);
    grad += &(dmu * (2.0 / n as f64)).insert_axis(Axis(1));
    Ok(LossGrad {
        value: value.max(0.0),
        grad,
    })
}
