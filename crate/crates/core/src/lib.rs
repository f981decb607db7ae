//! Open-set recognition over precomputed embedding and activation vectors.
//!
//! The crate covers the decision layer that sits on top of a trained network:
//!
//! - [`evt`]: shifted Weibull tail fitting used by OpenMax calibration.
//! - [`openmax`]: mean activation vectors, Weibull recalibration and the
//!   explicit unknown-class activation.
//! - [`metric_heads`]: cosine gallery matching (ArcFace-style embeddings) and
//!   class anchored clustering (CAC) rejection scores.
//! - [`losses`]: softmax cross-entropy, additive angular margin and CAC losses
//!   with analytic gradients, plus a small dense trainer.
//! - [`calibration`]: fixed threshold sweeps and per-class quantile thresholds.
//! - [`evaluation`]: known/unknown accuracies and the open-set F-score.
//! - [`protocol`]: fold rotation, synthetic data, per-fold runs and aggregation.
//!
//! Everything is deterministic for a fixed seed; see [`seed`].

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod evt;
pub mod losses;
pub mod method;
pub mod metric_heads;
pub mod openmax;
pub mod protocol;
pub mod seed;

mod linalg;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// Token used in files for a rejected prediction or an unknown-class sample.
pub const UNKNOWN_TOKEN: &str = "UNKNOWN";

/// Outcome of an open-set classifier: a known class index or a rejection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Known(usize),
    Unknown,
}

impl Decision {
    pub fn class(self) -> Option<usize> {
        match self {
            Decision::Known(c) => Some(c),
            Decision::Unknown => None,
        }
    }

    pub fn is_unknown(self) -> bool {
        matches!(self, Decision::Unknown)
    }
}
