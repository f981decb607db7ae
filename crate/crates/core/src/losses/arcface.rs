//! Additive angular margin loss.
//!
//! With `z_hat = z / |z|` and unit class weights `w_j`, the logits are
//! `s cos(theta_y + m)` for the true class and `s cos(theta_j)` otherwise;
//! the loss is cross-entropy over those logits. Past `theta_y + m > pi` the
//! true-class logit switches to `s (cos(theta_y) - m sin(m))`.

use serde::{Deserialize, Serialize};

use super::{check_label, softmax_ce_loss, LossGrad};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

const COS_GUARD: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcFaceParams {
    pub scale: f64,
    pub margin: f64,
    /// One unit-norm row per class.
    pub class_weights: Vec<Vec<f64>>,
}

impl ArcFaceParams {
    /// Normalizes `class_weights` rows to unit length.
    pub fn new(scale: f64, margin: f64, class_weights: Vec<Vec<f64>>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !(0.0..std::f64::consts::PI).contains(&margin) {
            return Err(Error::InvalidInput(format!(
                "margin must be in [0, pi), got {margin}"
            )));
        }
        let mut params = Self {
            scale,
            margin,
            class_weights,
        };
        params.normalize_weights()?;
        Ok(params)
    }

    pub fn normalize_weights(&mut self) -> Result<()> {
        for row in &mut self.class_weights {
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::ZeroVector);
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_weights.len()
    }
}

/// Loss plus gradients with respect to the embedding and each class weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcFaceGrad {
    pub loss: f64,
    pub grad_embedding: Vec<f64>,
    pub grad_weights: Vec<Vec<f64>>,
}

pub fn arcface_loss(embedding: &[f64], label: usize, params: &ArcFaceParams) -> Result<LossGrad> {
    let full = arcface_loss_full(embedding, label, params)?;
    Ok(LossGrad {
        loss: full.loss,
        grad: full.grad_embedding,
    })
}

pub fn arcface_loss_full(
    embedding: &[f64],
    label: usize,
    params: &ArcFaceParams,
) -> Result<ArcFaceGrad> {
    let n = params.n_classes();
    check_label(label, n)?;
    let dim = embedding.len();
    if let Some(bad) = params.class_weights.iter().find(|w| w.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: bad.len(),
            actual: dim,
        });
    }
    let r = norm(embedding);
    if r == 0.0 {
        return Err(Error::ZeroVector);
    }
    let unit: Vec<f64> = embedding.iter().map(|v| v / r).collect();
    let (s, m) = (params.scale, params.margin);

    let mut logits = vec![0.0; n];
    // d logit_j / d cos_j, zero where the clamp is active.
    let mut slope = vec![0.0; n];
    for (j, w) in params.class_weights.iter().enumerate() {
        let raw = dot(w, &unit);
        let c = raw.clamp(-1.0 + COS_GUARD, 1.0 - COS_GUARD);
        let inside = if raw == c { 1.0 } else { 0.0 };
        if j == label {
            let theta = c.acos();
            if theta + m <= std::f64::consts::PI {
                logits[j] = s * (theta + m).cos();
                slope[j] = inside * s * (theta + m).sin() / theta.sin();
            } else {
                logits[j] = s * (c - m * m.sin());
                slope[j] = inside * s;
            }
        } else {
            logits[j] = s * c;
            slope[j] = inside * s;
        }
    }

    let ce = softmax_ce_loss(&logits, label)?;
    let grad_cos: Vec<f64> = ce.grad.iter().zip(&slope).map(|(g, k)| g * k).collect();

    let mut grad_unit = vec![0.0; dim];
    for (gc, w) in grad_cos.iter().zip(&params.class_weights) {
        for (g, wv) in grad_unit.iter_mut().zip(w) {
            *g += gc * wv;
        }
    }
    // Through the normalization: (I - u u^T) / r.
    let radial = dot(&unit, &grad_unit);
    let grad_embedding = grad_unit
        .iter()
        .zip(&unit)
        .map(|(g, u)| (g - u * radial) / r)
        .collect();
    let grad_weights = grad_cos
        .iter()
        .map(|gc| unit.iter().map(|u| gc * u).collect())
        .collect();
    Ok(ArcFaceGrad {
        loss: ce.loss,
        grad_embedding,
        grad_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{finite_difference, max_relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(
        rng: &mut ChaCha8Rng,
        n: usize,
        d: usize,
        scale: f64,
        margin: f64,
    ) -> ArcFaceParams {
        let weights = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        ArcFaceParams::new(scale, margin, weights).unwrap()
    }

    #[test]
    fn margin_free_is_normalized_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = random_params(&mut rng, 5, 8, 3.0, 0.0);
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = norm(&z);
            let logits: Vec<f64> = p
                .class_weights
                .iter()
                .map(|w| 3.0 * dot(w, &z) / r)
                .collect();
            let expected = softmax_ce_loss(&logits, 1).unwrap().loss;
            let got = arcface_loss(&z, 1, &p).unwrap().loss;
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluation_at_zero_angle() {
        let p = ArcFaceParams::new(1.0, 0.0, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let got = arcface_loss(&[2.5, 0.0], 0, &p).unwrap().loss;
        let e = std::f64::consts::E;
        let expected = -(e / (e + 1.0)).ln();
        assert!((got - expected).abs() < 1e-6);
        assert!((got - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let n = rng.random_range(2..=5);
            let d = rng.random_range(2..=8);
            let (s, m) = (rng.random_range(1.0..8.0), rng.random_range(0.0..1.0));
            let p = random_params(&mut rng, n, d, s, m);
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..n);
            let analytic = arcface_loss(&z, y, &p).unwrap().grad;
            let numeric = finite_difference(&z, 1e-4, |x| arcface_loss(x, y, &p).unwrap().loss);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let p = random_params(&mut rng, 4, 6, 4.0, 0.5);
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let full = arcface_loss_full(&z, 2, &p).unwrap();
            for j in 0..4 {
                // Perturb raw weights without renormalizing.
                let numeric = finite_difference(&p.class_weights[j], 1e-5, |w| {
                    let mut q = p.clone();
                    q.class_weights[j] = w.to_vec();
                    arcface_loss_full(&z, 2, &q).unwrap().loss
                });
                assert!(max_relative_error(&full.grad_weights[j], &numeric) < 1e-4);
            }
        }
    }

    #[test]
    fn wraparound_uses_surrogate() {
        // theta_y = pi/2 + 0.8 with m = 1.0 exceeds pi.
        let p = ArcFaceParams::new(2.0, 1.0, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let theta: f64 = std::f64::consts::FRAC_PI_2 + 0.8;
        let z = [theta.cos(), theta.sin()];
        let got = arcface_loss(&z, 0, &p).unwrap().loss;
        let logits = [2.0 * (theta.cos() - 1.0 * 1f64.sin()), 2.0 * theta.sin()];
        let expected = softmax_ce_loss(&logits, 0).unwrap().loss;
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_embedding_is_an_error() {
        let p = ArcFaceParams::new(1.0, 0.2, vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            arcface_loss(&[0.0, 0.0], 0, &p),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn rows_are_unit_norm() {
        let p = ArcFaceParams::new(2.39, 0.95, vec![vec![3.0, 4.0], vec![-1.0, 1.0]]).unwrap();
        for w in &p.class_weights {
            assert!((norm(w) - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn invariant_to_positive_rescaling(
            z in prop::collection::vec(-3.0..3.0f64, 5),
            c in 0.01..100.0f64,
            seed in 0u64..100,
        ) {
            prop_assume!(norm(&z) > 1e-3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, 4, 5, 2.39, 0.95);
            let scaled: Vec<f64> = z.iter().map(|v| v * c).collect();
            let a = arcface_loss(&z, 0, &p).unwrap().loss;
            let b = arcface_loss(&scaled, 0, &p).unwrap().loss;
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 0.0);
        }
    }
}
