use ndarray::Array2;

use super::LossGrad;
use crate::error::{Error, Result};
use crate::measures::FeatureMap;

/// Mean squared difference over all `C·n` entries.
pub fn content_loss(fo: &FeatureMap, fc: &FeatureMap) -> Result<f64> {
    content_loss_grad(fo.values(), fc.values()).map(|lg| lg.value)
}

pub(crate) fn content_loss_grad(fo: &Array2<f64>, fc: &Array2<f64>) -> Result<LossGrad> {
    if fo.dim() != fc.dim() {
        return Err(Error::invalid(format!(
            "content loss needs identical shapes, got {:?} and {:?}",
            fo.dim(),
            fc.dim()
        )));
    }
    let scale = 1.0 / fo.len() as f64;
    let diff = fo - fc;
    let value = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    let grad = diff * (2.0 * scale);
    Ok(LossGrad { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::testutil::{check_gradient, random_map};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_maps_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = FeatureMap::new("c", random_map(&mut rng, 3, 9)).unwrap();
        assert_eq!(content_loss(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn unit_difference_gives_one() {
        let a = FeatureMap::new("c", Array2::ones((5, 7))).unwrap();
        let b = FeatureMap::new("c", Array2::zeros((5, 7))).unwrap();
        assert_eq!(content_loss(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_map(&mut rng, 4, 13);
        let b = random_map(&mut rng, 4, 13);
        let mut s = 0.0;
        for c in 0..4 {
            for j in 0..13 {
                s += (a[[c, j]] - b[[c, j]]).powi(2);
            }
        }
        let want = s / (4.0 * 13.0);
        let got = content_loss_grad(&a, &b).unwrap().value;
        assert!((got - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = FeatureMap::new("c", Array2::ones((2, 3))).unwrap();
        let b = FeatureMap::new("c", Array2::ones((2, 4))).unwrap();
        assert!(matches!(content_loss(&a, &b), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fc = random_map(&mut rng, 3, 20);
        let fo = random_map(&mut rng, 3, 20);
        let err = check_gradient(&fo, |x| content_loss_grad(x, &fc).unwrap());
        assert!(err <= 1e-4, "relative error {err}");
    }
}
