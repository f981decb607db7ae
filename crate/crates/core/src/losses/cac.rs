//! Class anchored clustering loss.
//!
//! With `d_j = |z - c_j|`, the tuplet term is `log sum_j exp(d_y - d_j)` and
//! the anchor term is `d_y`; the loss is `tuplet + lambda * anchor`.

use super::{check_label, LossGrad};
use crate::error::{Error, Result};
use crate::linalg::euclidean;
use crate::metric_heads::cac::softmin;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CacLossParams<'a> {
    pub anchor_weight: f64,
    /// One center per class, each of dimension `N`.
    pub centers: &'a [Vec<f64>],
}

impl<'a> CacLossParams<'a> {
    pub fn new(anchor_weight: f64, centers: &'a [Vec<f64>]) -> Result<Self> {
        if !(anchor_weight >= 0.0 && anchor_weight.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "anchor weight must be nonnegative, got {anchor_weight}"
            )));
        }
        Ok(Self {
            anchor_weight,
            centers,
        })
    }
}

/// The two loss terms evaluated on a distance vector, with the gradient of
/// `tuplet + anchor_weight * anchor` with respect to the distances.
#[derive(Clone, Debug, PartialEq)]
pub struct CacTerms {
    pub tuplet: f64,
    pub anchor: f64,
    pub grad_distances: Vec<f64>,
}

pub fn cac_terms(distances: &[f64], label: usize, anchor_weight: f64) -> Result<CacTerms> {
    check_label(label, distances.len())?;
    let dy = distances[label];
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    // log sum_j exp(d_y - d_j) = d_y - min + log sum_j exp(min - d_j)
    let tail: f64 = distances.iter().map(|d| (min - d).exp()).sum();
    let tuplet = (dy - min + tail.ln()).max(0.0);
    let mut grad_distances: Vec<f64> = softmin(distances).into_iter().map(|s| -s).collect();
    grad_distances[label] += 1.0 + anchor_weight;
    Ok(CacTerms {
        tuplet,
        anchor: dy,
        grad_distances,
    })
}

pub fn cac_loss(embedding: &[f64], label: usize, params: &CacLossParams<'_>) -> Result<LossGrad> {
    let n = params.centers.len();
    check_label(label, n)?;
    if embedding.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: embedding.len(),
        });
    }
    if let Some(bad) = params.centers.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: bad.len(),
        });
    }
    let distances: Vec<f64> = params
        .centers
        .iter()
        .map(|c| euclidean(embedding, c))
        .collect();
    let terms = cac_terms(&distances, label, params.anchor_weight)?;
    let mut grad = vec![0.0; n];
    for ((center, d), gd) in params
        .centers
        .iter()
        .zip(&distances)
        .zip(&terms.grad_distances)
    {
        if *d == 0.0 {
            continue;
        }
        for ((g, z), c) in grad.iter_mut().zip(embedding).zip(center) {
            *g += gd * (z - c) / d;
        }
    }
    Ok(LossGrad {
        loss: terms.tuplet + params.anchor_weight * terms.anchor,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{finite_difference, max_relative_error};
    use crate::metric_heads::CacModel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anchors(n: usize, magnitude: f64) -> Vec<Vec<f64>> {
        let labels = (0..n).map(|i| format!("c{i}")).collect();
        CacModel::anchored(labels, magnitude).unwrap().centers
    }

    #[test]
    fn equal_distances_give_log_n() {
        let centers = anchors(4, 10.0);
        let params = CacLossParams::new(0.0, &centers).unwrap();
        let r = cac_loss(&[0.0; 4], 2, &params).unwrap();
        assert!((r.loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_placement_limit() {
        let centers = anchors(3, 1000.0);
        let params = CacLossParams::new(0.1, &centers).unwrap();
        let r = cac_loss(&centers[1].clone(), 1, &params).unwrap();
        assert!(r.loss < 1e-12, "{}", r.loss);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let n = rng.random_range(2..=5);
            let centers: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let params = CacLossParams::new(rng.random_range(0.0..1.0), &centers).unwrap();
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y = rng.random_range(0..n);
            let analytic = cac_loss(&z, y, &params).unwrap().grad;
            let numeric = finite_difference(&z, 1e-4, |x| cac_loss(x, y, &params).unwrap().loss);
            assert!(max_relative_error(&analytic, &numeric) < 1e-4);
        }
    }

    #[test]
    fn dimension_must_match_class_count() {
        let centers = anchors(3, 10.0);
        let params = CacLossParams::new(0.1, &centers).unwrap();
        assert!(matches!(
            cac_loss(&[0.0; 4], 0, &params),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 4
            })
        ));
    }

    #[test]
    fn negative_anchor_weight_rejected() {
        let centers = anchors(3, 10.0);
        assert!(CacLossParams::new(-0.1, &centers).is_err());
    }

    proptest! {
        #[test]
        fn tuplet_depends_on_differences_only(
            d in prop::collection::vec(0.0..50.0f64, 2..6),
            shift in -20.0..20.0f64,
            pick in 0usize..6,
        ) {
            let y = pick % d.len();
            let shifted: Vec<f64> = d.iter().map(|v| v + shift).collect();
            let a = cac_terms(&d, y, 0.0).unwrap();
            let b = cac_terms(&shifted, y, 0.0).unwrap();
            prop_assert!((a.tuplet - b.tuplet).abs() < 1e-9);
            prop_assert!((b.anchor - a.anchor - shift).abs() < 1e-12);
            prop_assert!(a.tuplet >= 0.0);
        }
    }
}
