//! OpenMax recalibration of activation vectors.
//!
//! Calibration builds a mean activation vector (MAV) per class from correctly
//! classified training samples and fits a Weibull model to the largest
//! sample-to-MAV distances. At inference the `alpha_revise` top-ranked classes
//! are scaled down by `1 - ((alpha - i) / alpha) * cdf(distance)` and the
//! removed activation mass becomes the unknown-class activation `z0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evt::{self, WeibullModel};
use crate::linalg::{self, euclidean};
use crate::Decision;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    CosineDistance,
}

impl DistanceMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => euclidean(a, b),
            DistanceMetric::CosineDistance => {
                let denom = linalg::norm(a) * linalg::norm(b);
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - linalg::dot(a, b) / denom
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxConfig {
    pub tail_size: usize,
    pub alpha_revise: usize,
    pub distance_metric: DistanceMetric,
}

impl Default for OpenMaxConfig {
    fn default() -> Self {
        Self {
            tail_size: 20,
            alpha_revise: 5,
            distance_metric: DistanceMetric::Euclidean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OpenMaxFile", into = "OpenMaxFile")]
pub struct OpenMaxModel {
    labels: Vec<String>,
    mavs: Vec<Vec<f64>>,
    weibulls: Vec<WeibullModel>,
    alpha_revise: usize,
    distance_metric: DistanceMetric,
    threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecalibratedActivations {
    pub z_hat: Vec<f64>,
    pub z0: f64,
    pub omega: Vec<f64>,
}

/// Best known class after recalibration and its probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenMaxScore {
    /// The unknown slot is strictly the most probable outcome.
    pub unknown_wins: bool,
    pub class: usize,
    pub probability: f64,
    pub unknown_probability: f64,
}

/// Per-class means over samples whose prediction equals their label.
pub fn compute_mavs(
    activations: &[Vec<f64>],
    labels: &[usize],
    predictions: &[usize],
    class_labels: &[String],
) -> Result<Vec<Vec<f64>>> {
    check_lengths(activations, labels, predictions)?;
    let dim = activations.first().map_or(0, Vec::len);
    (0..class_labels.len())
        .map(|c| {
            let rows = activations
                .iter()
                .zip(labels.iter().zip(predictions))
                .filter(|(_, (l, p))| **l == c && **p == c)
                .map(|(z, _)| z.as_slice());
            linalg::mean_of(rows, dim)
                .ok_or_else(|| Error::NoCorrectSamples(class_labels[c].clone()))
        })
        .collect()
}

fn check_lengths(activations: &[Vec<f64>], labels: &[usize], predictions: &[usize]) -> Result<()> {
    if activations.len() != labels.len() || labels.len() != predictions.len() {
        return Err(Error::InvalidInput(format!(
            "{} activations, {} labels, {} predictions",
            activations.len(),
            labels.len(),
            predictions.len()
        )));
    }
    if let Some(first) = activations.first() {
        if let Some(bad) = activations.iter().find(|z| z.len() != first.len()) {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                actual: bad.len(),
            });
        }
    }
    Ok(())
}

/// Fits MAVs and per-class Weibull tails on training activations.
///
/// Activations are the network's logits, so their dimension must equal the
/// number of classes.
pub fn calibrate(
    activations: &[Vec<f64>],
    labels: &[usize],
    predictions: &[usize],
    class_labels: &[String],
    config: OpenMaxConfig,
) -> Result<OpenMaxModel> {
    let n = class_labels.len();
    if config.alpha_revise == 0 || config.alpha_revise > n {
        return Err(Error::InvalidInput(format!(
            "alpha_revise must be in 1..={n}, got {}",
            config.alpha_revise
        )));
    }
    if let Some(z) = activations.first() {
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: z.len(),
            });
        }
    }
    let mavs = compute_mavs(activations, labels, predictions, class_labels)?;
    let weibulls = (0..n)
        .map(|c| {
            let distances: Vec<f64> = activations
                .iter()
                .zip(labels.iter().zip(predictions))
                .filter(|(_, (l, p))| **l == c && **p == c)
                .map(|(z, _)| config.distance_metric.distance(z, &mavs[c]))
                .collect();
            evt::fit_tail(&distances, config.tail_size).map_err(|e| e.for_class(&class_labels[c]))
        })
        .collect::<Result<Vec<_>>>()?;
    OpenMaxModel::from_parts(
        class_labels.to_vec(),
        mavs,
        weibulls,
        config.alpha_revise,
        config.distance_metric,
    )
}

impl OpenMaxModel {
    pub fn from_parts(
        labels: Vec<String>,
        mavs: Vec<Vec<f64>>,
        weibulls: Vec<WeibullModel>,
        alpha_revise: usize,
        distance_metric: DistanceMetric,
    ) -> Result<Self> {
        let n = labels.len();
        if mavs.len() != n || weibulls.len() != n {
            return Err(Error::InvalidInput(format!(
                "{n} labels but {} MAVs and {} Weibull models",
                mavs.len(),
                weibulls.len()
            )));
        }
        if alpha_revise == 0 || alpha_revise > n {
            return Err(Error::InvalidInput(format!(
                "alpha_revise must be in 1..={n}"
            )));
        }
        if let Some(bad) = mavs.iter().find(|m| m.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        Ok(Self {
            labels,
            mavs,
            weibulls,
            alpha_revise,
            distance_metric,
            threshold: None,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn mavs(&self) -> &[Vec<f64>] {
        &self.mavs
    }

    pub fn weibulls(&self) -> &[WeibullModel] {
        &self.weibulls
    }

    pub fn alpha_revise(&self) -> usize {
        self.alpha_revise
    }

    pub fn distance_metric(&self) -> DistanceMetric {
        self.distance_metric
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn with_threshold(mut self, threshold: Option<f64>) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn recalibrate(&self, z: &[f64]) -> Result<RecalibratedActivations> {
        let n = self.labels.len();
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: z.len(),
            });
        }
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));

        let alpha = self.alpha_revise as f64;
        let mut omega = vec![1.0; n];
        for (pos, &class) in ranked.iter().take(self.alpha_revise).enumerate() {
            let rank = (pos + 1) as f64;
            let distance = self.distance_metric.distance(z, &self.mavs[class]);
            let cdf = self.weibulls[class].cdf(distance);
            omega[class] = 1.0 - ((alpha - rank) / alpha) * cdf;
        }
        let z_hat: Vec<f64> = z.iter().zip(&omega).map(|(v, w)| v * w).collect();
        let z0 = z.iter().zip(&omega).map(|(v, w)| v * (1.0 - w)).sum();
        Ok(RecalibratedActivations { z_hat, z0, omega })
    }

    /// Softmax over `(z0, z_hat_1, ..., z_hat_N)`; index 0 is the unknown slot.
    pub fn probabilities(&self, z: &[f64]) -> Result<Vec<f64>> {
        let r = self.recalibrate(z)?;
        let mut logits = Vec::with_capacity(r.z_hat.len() + 1);
        logits.push(r.z0);
        logits.extend_from_slice(&r.z_hat);
        Ok(linalg::softmax(&logits))
    }

    pub fn score(&self, z: &[f64]) -> Result<OpenMaxScore> {
        let probs = self.probabilities(z)?;
        let class = linalg::argmax(&probs[1..]);
        let z0 = self.recalibrate(z)?.z0;
        // The unknown slot only wins when some activation mass was actually
        // removed; without revision OpenMax must coincide with softmax.
        let unknown_wins = z0 > 0.0 && probs[0] > probs[class + 1];
        Ok(OpenMaxScore {
            unknown_wins,
            class,
            probability: probs[class + 1],
            unknown_probability: probs[0],
        })
    }

    /// Classifies `z`; with `reject` the stored threshold must be set.
    pub fn predict(&self, z: &[f64], reject: bool) -> Result<Decision> {
        let threshold = if reject {
            Some(self.threshold.ok_or(Error::ThresholdUnset)?)
        } else {
            None
        };
        let s = self.score(z)?;
        if s.unknown_wins {
            return Ok(Decision::Unknown);
        }
        match threshold {
            Some(delta) if s.probability < delta => Ok(Decision::Unknown),
            _ => Ok(Decision::Known(s.class)),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct OpenMaxFile {
    distance_metric: DistanceMetric,
    alpha_revise: usize,
    threshold: Option<f64>,
    classes: Vec<OpenMaxClassEntry>,
}

#[derive(Serialize, Deserialize)]
struct OpenMaxClassEntry {
    label: String,
    mav: Vec<f64>,
    weibull: WeibullModel,
}

impl From<OpenMaxModel> for OpenMaxFile {
    fn from(m: OpenMaxModel) -> Self {
        let classes = m
            .labels
            .into_iter()
            .zip(m.mavs)
            .zip(m.weibulls)
            .map(|((label, mav), weibull)| OpenMaxClassEntry {
                label,
                mav,
                weibull,
            })
            .collect();
        OpenMaxFile {
            distance_metric: m.distance_metric,
            alpha_revise: m.alpha_revise,
            threshold: m.threshold,
            classes,
        }
    }
}

impl TryFrom<OpenMaxFile> for OpenMaxModel {
    type Error = Error;

    fn try_from(f: OpenMaxFile) -> Result<Self> {
        let mut labels = Vec::new();
        let mut mavs = Vec::new();
        let mut weibulls = Vec::new();
        for c in f.classes {
            labels.push(c.label);
            mavs.push(c.mav);
            weibulls.push(c.weibull);
        }
        Ok(
            OpenMaxModel::from_parts(labels, mavs, weibulls, f.alpha_revise, f.distance_metric)?
                .with_threshold(f.threshold),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("k{i}")).collect()
    }

    /// Weibull whose CDF is exactly 0 or exactly 1 for every distance.
    fn constant_cdf(p: f64) -> WeibullModel {
        if p == 0.0 {
            WeibullModel {
                tau: f64::MAX,
                kappa: 1.0,
                lambda_scale: 1.0,
                tail_size: 2,
            }
        } else {
            assert_eq!(p, 1.0);
            WeibullModel {
                tau: -1.0,
                kappa: 1.0,
                lambda_scale: 1e-300,
                tail_size: 2,
            }
        }
    }

    fn fixed_model(cdfs: &[f64], alpha: usize) -> OpenMaxModel {
        let n = cdfs.len();
        OpenMaxModel::from_parts(
            names(n),
            vec![vec![0.0; n]; n],
            cdfs.iter().map(|p| constant_cdf(*p)).collect(),
            alpha,
            DistanceMetric::Euclidean,
        )
        .unwrap()
    }

    /// Weibull whose CDF is `p` exactly at distance `d`.
    fn cdf_at(d: f64, p: f64) -> WeibullModel {
        WeibullModel {
            tau: 0.0,
            kappa: 1.0,
            lambda_scale: d / (-(1.0 - p).ln()),
            tail_size: 2,
        }
    }

    #[test]
    fn mav_of_one_and_mean_of_two() {
        let acts = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![3.0, 3.0],
            vec![9.0, 9.0],
        ];
        let labels = [0, 0, 1, 1];
        let preds = [0, 0, 1, 0];
        let mavs = compute_mavs(&acts, &labels, &preds, &names(2)).unwrap();
        assert_eq!(mavs[0], vec![0.5, 0.5]);
        assert_eq!(mavs[1], vec![3.0, 3.0]);
    }

    #[test]
    fn mav_matches_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let acts: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let labels = vec![0usize; 100];
        let mavs = compute_mavs(&acts, &labels, &labels, &names(1)).unwrap();
        for k in 0..3 {
            let mut total = 0.0;
            for row in &acts {
                total += row[k];
            }
            assert!((mavs[0][k] - total / 100.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mav_requires_correct_sample() {
        let err = compute_mavs(&[vec![1.0, 0.0]], &[1], &[0], &names(2)).unwrap_err();
        assert!(matches!(err, Error::NoCorrectSamples(ref c) if c == "k0"));
    }

    #[test]
    fn calibrate_names_short_class() {
        let mut acts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            acts.push(vec![5.0 + i as f64 * 0.01, 0.0]);
            labels.push(0);
        }
        for i in 0..10 {
            acts.push(vec![0.0, 5.0 + i as f64 * 0.01]);
            labels.push(1);
        }
        let err = calibrate(
            &acts,
            &labels,
            &labels,
            &names(2),
            OpenMaxConfig {
                alpha_revise: 2,
                ..Default::default()
            },
        )
        .unwrap_err();
        match err {
            Error::Class { class, source } => {
                assert_eq!(class, "k1");
                assert!(matches!(
                    *source,
                    Error::InsufficientTail {
                        needed: 20,
                        available: 10
                    }
                ));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn calibrate_keeps_paper_defaults() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 6;
        let mut acts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n {
            for _ in 0..60 {
                let mut z: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
                z[c] += 10.0;
                acts.push(z);
                labels.push(c);
            }
        }
        let model =
            calibrate(&acts, &labels, &labels, &names(n), OpenMaxConfig::default()).unwrap();
        assert_eq!(model.alpha_revise(), 5);
        assert!(model.weibulls().iter().all(|w| w.tail_size == 20));
        let json = serde_json::to_string(&model).unwrap();
        let back: OpenMaxModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn cdf_at_median_tail_distance_is_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 3;
        let mut acts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n {
            for _ in 0..200 {
                let mut z: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
                z[c] += 8.0;
                acts.push(z);
                labels.push(c);
            }
        }
        let model = calibrate(
            &acts,
            &labels,
            &labels,
            &names(n),
            OpenMaxConfig {
                alpha_revise: 2,
                ..Default::default()
            },
        )
        .unwrap();
        for c in 0..n {
            let mut d: Vec<f64> = acts
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == c)
                .map(|(z, _)| euclidean(z, &model.mavs()[c]))
                .collect();
            d.sort_by(|a, b| b.total_cmp(a));
            let median_tail = 0.5 * (d[9] + d[10]);
            let p = model.weibulls()[c].cdf(median_tail);
            assert!(p > 0.0 && p < 1.0, "class {c}: {p}");
        }
    }

    #[test]
    fn no_adjustment_when_cdf_is_zero() {
        let model = fixed_model(&[0.0, 0.0, 0.0], 3);
        let r = model.recalibrate(&[2.0, -1.0, 0.5]).unwrap();
        assert_eq!(r.omega, vec![1.0; 3]);
        assert_eq!(r.z_hat, vec![2.0, -1.0, 0.5]);
        assert_eq!(r.z0, 0.0);
    }

    #[test]
    fn last_revised_rank_is_untouched() {
        let model = fixed_model(&[1.0, 1.0, 1.0], 2);
        let r = model.recalibrate(&[1.0, 3.0, 2.0]).unwrap();
        // Rank 1 is class 1, rank 2 is class 0 (alpha - i = 0).
        assert!((r.omega[1] - 0.5).abs() < 1e-12);
        assert_eq!(r.omega[0], 1.0);
        assert_eq!(r.omega[2], 1.0);
    }

    #[test]
    fn two_class_hand_evaluation() {
        // z = (4, 1); MAVs at the origin so distances are 4.123 and 4.123.
        let z = [4.0, 1.0];
        let d = euclidean(&z, &[0.0, 0.0]);
        let model = OpenMaxModel::from_parts(
            names(2),
            vec![vec![0.0, 0.0]; 2],
            vec![cdf_at(d, 0.5), constant_cdf(0.0)],
            2,
            DistanceMetric::Euclidean,
        )
        .unwrap();
        let r = model.recalibrate(&z).unwrap();
        assert!((r.omega[0] - 0.75).abs() < 1e-12);
        assert_eq!(r.omega[1], 1.0);
        assert!((r.z_hat[0] - 3.0).abs() < 1e-12);
        assert_eq!(r.z_hat[1], 1.0);
        assert!((r.z0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduces_to_softmax_argmax() {
        let model = fixed_model(&[0.0; 4], 3).with_threshold(Some(0.0));
        let z = [-3.0, -1.5, -2.0, -7.0];
        assert_eq!(model.predict(&z, true).unwrap(), Decision::Known(1));
        let z = [0.3, 2.0, 2.5, -1.0];
        assert_eq!(model.predict(&z, true).unwrap(), Decision::Known(2));
    }

    #[test]
    fn unknown_slot_wins_regardless_of_threshold() {
        let model = fixed_model(&[1.0, 1.0, 0.0], 3).with_threshold(Some(0.0));
        // Ranks: class 0 (omega 1/3), class 1 (omega 2/3), class 2 untouched.
        let z = [9.0, 6.0, 1.0];
        let r = model.recalibrate(&z).unwrap();
        assert!(r.z0 > r.z_hat.iter().copied().fold(f64::MIN, f64::max));
        assert_eq!(model.predict(&z, true).unwrap(), Decision::Unknown);
        assert_eq!(model.predict(&z, false).unwrap(), Decision::Unknown);
    }

    #[test]
    fn threshold_rule_on_probabilities() {
        // Build logits giving probabilities (unknown 0.1, A 0.55, B 0.35).
        let p = [0.1f64, 0.55, 0.35];
        let za = p[1].ln() - p[0].ln();
        let zb = p[2].ln() - p[0].ln();
        // With rank-1 class A revised by omega we would change logits, so keep
        // CDFs at zero; z0 is then 0 = ln(0.1) - ln(0.1).
        let model = fixed_model(&[0.0, 0.0], 2);
        let probs = model.probabilities(&[za, zb]).unwrap();
        for (a, b) in probs.iter().zip(p) {
            assert!((a - b).abs() < 1e-12);
        }
        let strict = model.clone().with_threshold(Some(0.6));
        assert_eq!(strict.predict(&[za, zb], true).unwrap(), Decision::Unknown);
        let loose = model.clone().with_threshold(Some(0.5));
        assert_eq!(loose.predict(&[za, zb], true).unwrap(), Decision::Known(0));
        assert!(matches!(
            model.predict(&[za, zb], true),
            Err(Error::ThresholdUnset)
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let model = fixed_model(&[0.0, 0.0], 2);
        assert!(matches!(
            model.recalibrate(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 3
            })
        ));
    }

    fn random_model(n: usize, alpha: usize, seed: u64) -> OpenMaxModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mavs = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let weibulls = (0..n)
            .map(|_| WeibullModel {
                tau: rng.random_range(0.0..2.0),
                kappa: rng.random_range(0.5..4.0),
                lambda_scale: rng.random_range(0.5..4.0),
                tail_size: 20,
            })
            .collect();
        OpenMaxModel::from_parts(names(n), mavs, weibulls, alpha, DistanceMetric::Euclidean)
            .unwrap()
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(seed in 0u64..500, z in prop::collection::vec(-20.0..20.0f64, 5)) {
            let model = random_model(5, 3, seed);
            let total: f64 = model.probabilities(&z).unwrap().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nonnegative_activations_give_nonnegative_z0(seed in 0u64..500, z in prop::collection::vec(0.0..20.0f64, 4)) {
            let model = random_model(4, 4, seed);
            let r = model.recalibrate(&z).unwrap();
            prop_assert!(r.z0 >= 0.0);
            let all_kept = r.omega.iter().zip(&z).all(|(w, v)| *v == 0.0 || *w == 1.0);
            prop_assert_eq!(r.z0 == 0.0, all_kept);
        }

        #[test]
        fn omega_stays_in_rank_bounds(seed in 0u64..500, z in prop::collection::vec(-10.0..10.0f64, 6)) {
            let model = random_model(6, 4, seed);
            let r = model.recalibrate(&z).unwrap();
            let alpha = 4.0;
            let mut ranked: Vec<usize> = (0..6).collect();
            ranked.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
            for (pos, &c) in ranked.iter().enumerate() {
                let i = (pos + 1) as f64;
                if pos < 4 {
                    prop_assert!(r.omega[c] >= i / alpha - 1e-12 && r.omega[c] <= 1.0);
                } else {
                    prop_assert_eq!(r.omega[c], 1.0);
                }
            }
        }

        #[test]
        fn farther_top_class_never_lowers_z0(seed in 0u64..300, shift in 0.0..5.0f64) {
            // Two classes with MAVs on the axes; moving z away from the top
            // class's MAV along a direction that keeps ranks fixed.
            let mut model = random_model(2, 2, seed);
            model.mavs = vec![vec![3.0, 0.0], vec![0.0, 3.0]];
            let near = [3.0, 0.5];
            let far = [3.0 + shift, 0.5];
            let a = model.recalibrate(&near).unwrap().z0;
            let b = model.recalibrate(&far).unwrap().z0;
            prop_assert!(b >= a - 1e-12);
        }

        #[test]
        fn permuting_classes_permutes_outputs(seed in 0u64..300, z in prop::collection::vec(-10.0..10.0f64, 4)) {
            // Distinct activations keep the rank order unambiguous.
            let mut z = z;
            for (i, v) in z.iter_mut().enumerate() {
                *v += i as f64 * 1e-6;
            }
            let model = random_model(4, 3, seed);
            let perm = [2usize, 0, 3, 1];
            let permuted = OpenMaxModel::from_parts(
                perm.iter().map(|&p| model.labels[p].clone()).collect(),
                perm.iter().map(|&p| perm.iter().map(|&q| model.mavs[p][q]).collect()).collect(),
                perm.iter().map(|&p| model.weibulls[p].clone()).collect(),
                3,
                DistanceMetric::Euclidean,
            ).unwrap();
            let zp: Vec<f64> = perm.iter().map(|&p| z[p]).collect();
            let a = model.recalibrate(&z).unwrap();
            let b = permuted.recalibrate(&zp).unwrap();
            prop_assert!((a.z0 - b.z0).abs() < 1e-9);
            for (i, &p) in perm.iter().enumerate() {
                prop_assert!((a.z_hat[p] - b.z_hat[i]).abs() < 1e-12);
            }
        }
    }
}
