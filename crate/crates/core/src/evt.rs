//! Shifted Weibull fits on the largest class-to-center distances.
//!
//! `fit_tail` keeps the `tail_size` largest distances, shifts them by a
//! location `tau` just below the smallest tail value, and estimates shape and
//! scale by maximum likelihood. The scale has a closed form given the shape,
//! so only the one-dimensional profile equation in the shape is solved:
//!
//! ```text
//! g(k) = 1/k + mean(ln x) - sum(x^k ln x) / sum(x^k) = 0
//! lambda = (mean(x^k))^(1/k)
//! ```
//!
//! `g` is strictly decreasing, so the root is bracketed and refined by Newton
//! steps that fall back to bisection whenever they leave the bracket.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const SHAPE_TOLERANCE: f64 = 1e-9;
const SHIFT_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeibullModel {
    pub tau: f64,
    pub kappa: f64,
    #[serde(rename = "lambda")]
    pub lambda_scale: f64,
    pub tail_size: usize,
}

impl WeibullModel {
    /// `1 - exp(-((t - tau) / lambda)^kappa)` above `tau`, zero at or below it.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.tau {
            return 0.0;
        }
        let z = (t - self.tau) / self.lambda_scale;
        -(-z.powf(self.kappa)).exp_m1()
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        let (k, l) = (self.kappa, self.lambda_scale);
        values
            .iter()
            .map(|&t| {
                let x = (t - self.tau) / l;
                k.ln() - l.ln() + (k - 1.0) * x.ln() - x.powf(k)
            })
            .sum()
    }
}

/// Fits a shifted Weibull to the `tail_size` largest `distances`.
pub fn fit_tail(distances: &[f64], tail_size: usize) -> Result<WeibullModel> {
    if tail_size < 2 {
        return Err(Error::InvalidInput(format!(
            "tail size must be at least 2, got {tail_size}"
        )));
    }
    if distances.len() < tail_size {
        return Err(Error::InsufficientTail {
            needed: tail_size,
            available: distances.len(),
        });
    }
    if let Some(bad) = distances.iter().find(|d| !d.is_finite() || **d < 0.0) {
        return Err(Error::InvalidInput(format!(
            "distance {bad} is not a finite nonnegative value"
        )));
    }

    // Largest first; equal values keep their input order.
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]).then(a.cmp(&b)));
    let tail: Vec<f64> = order[..tail_size].iter().map(|&i| distances[i]).collect();

    let max = tail[0];
    let min = tail[tail_size - 1];
    if max == min {
        return Err(Error::DegenerateTail);
    }
    let tau = if min > 0.0 {
        min * (1.0 - SHIFT_MARGIN)
    } else {
        -SHIFT_MARGIN * max
    };
    let shifted: Vec<f64> = tail.iter().map(|t| t - tau).collect();
    let (kappa, lambda_scale) = fit_weibull_mle(&shifted)?;
    Ok(WeibullModel {
        tau,
        kappa,
        lambda_scale,
        tail_size,
    })
}

struct Profile {
    mean_log: f64,
    logs: Vec<f64>,
}

impl Profile {
    /// Returns g(k), g'(k) and mean(x^k) for the normalized sample.
    fn eval(&self, k: f64) -> (f64, f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &lx in &self.logs {
            let w = (k * lx).exp();
            s0 += w;
            s1 += w * lx;
            s2 += w * lx * lx;
        }
        let ratio = s1 / s0;
        let g = 1.0 / k + self.mean_log - ratio;
        let dg = -1.0 / (k * k) - (s2 / s0 - ratio * ratio);
        (g, dg, s0 / self.logs.len() as f64)
    }
}

/// Two-parameter Weibull MLE on strictly positive values; returns (shape, scale).
pub fn fit_weibull_mle(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientTail {
            needed: 2,
            available: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::InvalidInput(
            "weibull values must be finite and positive".into(),
        ));
    }
    // Normalizing by the maximum makes the fit exactly scale-equivariant and
    // keeps x^k in (0, 1].
    let scale = values.iter().copied().fold(f64::MIN, f64::max);
    let logs: Vec<f64> = values.iter().map(|v| (v / scale).ln()).collect();
    if logs.iter().all(|l| *l == logs[0]) {
        return Err(Error::DegenerateTail);
    }
    let profile = Profile {
        mean_log: logs.iter().sum::<f64>() / logs.len() as f64,
        logs,
    };

    let (mut lo, mut hi) = (1.0, 1.0);
    if profile.eval(1.0).0 > 0.0 {
        while profile.eval(hi).0 > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::NotConverged { iterations: 0 });
            }
        }
    } else {
        while profile.eval(lo).0 <= 0.0 {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-12 {
                return Err(Error::NotConverged { iterations: 0 });
            }
        }
    }

    let mut k = 0.5 * (lo + hi);
    for _ in 0..MAX_ITERATIONS {
        let (g, dg, _) = profile.eval(k);
        if g > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - k).abs();
        k = next;
        if step < SHAPE_TOLERANCE {
            let (_, _, mean_pow) = profile.eval(k);
            return Ok((k, scale * mean_pow.powf(1.0 / k)));
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_ITERATIONS,
    })
}
