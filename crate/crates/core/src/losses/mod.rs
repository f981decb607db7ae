//! Training losses with analytic gradients and a small dense trainer.

pub mod arcface;
pub mod cac;
pub mod network;

pub use arcface::{arcface_loss, ArcFaceParams};
pub use cac::{cac_loss, CacLossParams};
pub use network::{train_toy, Head, ToyNetwork, TrainConfig};

use crate::error::{Error, Result};

/// A loss value and its gradient with respect to the loss input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub(crate) fn check_label(label: usize, n: usize) -> Result<()> {
    if label >= n {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {n} classes"
        )));
    }
    Ok(())
}

/// `log(sum exp(logits)) - logits[label]`, gradient `softmax - one_hot`.
pub fn softmax_ce_loss(logits: &[f64], label: usize) -> Result<LossGrad> {
    check_label(label, logits.len())?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - log_z).exp()).collect();
    grad[label] -= 1.0;
    // For a saturated correct logit the subtraction above cancels; compute
    // the loss as log1p of the off-label mass instead.
    let off: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label)
        .map(|(_, v)| (v - logits[label]).exp())
        .sum();
    let loss = if logits[label] == max {
        off.ln_1p()
    } else {
        log_z - logits[label]
    };
    Ok(LossGrad { loss, grad })
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a|_inf, |b|_inf)`; zero when both vanish.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}
