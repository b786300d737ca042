//! Split-conformal calibration and prediction-set construction.

use crate::error::{Error, Result};
use crate::prob::{softmax_with_temperature, Logits, Probs, Temperature};
use crate::record::{common_class_count, LogitRecord};
use crate::scores::{scores_with_ranking, Score, ScoreMethod, SortedProbs};
use crate::temperature::{fit_temperature, TemperatureFit, TemperatureSearch};

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// `⌈x⌉`, except that values within float noise of an integer round to it.
/// `(n + 1) * (1 - 0.2)` lands a hair above 4.0 for `n = 4`, for example.
pub(crate) fn noisy_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// 1-based order-statistic index `k = ⌈(n + 1)(1 - α)⌉`. May exceed `n`.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let k = noisy_ceil((n as f64 + 1.0) * (1.0 - alpha));
    (k as usize).max(1)
}

/// Conformal threshold: the `k`-th smallest score with
/// `k = ⌈(n + 1)(1 - α)⌉`, or `+∞` when `k > n`.
///
/// Ties are kept as a multiset, so repeated values count separately.
pub fn calibrate_threshold(scores: &[f64], alpha: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::input("no calibration scores"));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::input(format!("calibration score {s} is not finite")));
    }
    let k = quantile_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut work = scores.to_vec();
    let (_, kth, _) = work.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// Labels (0-based) for one input, plus every label's score for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub id: Option<String>,
    /// Ascending, duplicate-free.
    pub labels: Vec<usize>,
    pub scores: Vec<f64>,
}

impl PredictionSet {
    pub fn set_size(&self) -> usize {
        self.labels.len()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }
}

/// Builds the label set from precomputed per-label scores.
///
/// Base rule: `{c : score(c) ≤ q_hat}`. APS/RAPS with the crossing label
/// enabled add the best-ranked label left out of the base set. LAC with
/// `force_nonempty` turns an empty set into `{argmax}`.
pub fn select_labels(
    sorted: &SortedProbs,
    scores: &[f64],
    q_hat: f64,
    method: &ScoreMethod,
) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..scores.len()).filter(|&c| scores[c] <= q_hat).collect();
    match method.score {
        Score::Lac => {
            if labels.is_empty() && method.force_nonempty {
                labels.push(sorted.order[0]);
            }
        }
        Score::Aps | Score::Raps { .. } => {
            if method.include_crossing_label {
                if let Some(&c) = sorted.order.iter().find(|&&c| scores[c] > q_hat) {
                    labels.push(c);
                    labels.sort_unstable();
                }
            }
        }
    }
    labels
}

/// Frozen result of calibration. Immutable; prediction is a pure read.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrator {
    pub method: ScoreMethod,
    pub alpha: f64,
    /// Temperature applied before the softmax, if any.
    pub temperature: Option<Temperature>,
    /// Present when `temperature` was fitted on the calibration set.
    pub temperature_fit: Option<TemperatureFit>,
    /// `+∞` when `α < 1/(n_cal + 1)`.
    pub q_hat: f64,
    pub n_cal: usize,
    pub class_count: usize,
}

impl Calibrator {
    /// Calibrates on labeled records, optionally with a fixed temperature.
    pub fn fit(
        records: &[LogitRecord],
        method: ScoreMethod,
        alpha: f64,
        temperature: Option<Temperature>,
    ) -> Result<Self> {
        Self::fit_inner(records, method, alpha, temperature, None)
    }

    /// Fits a temperature on the same records first, then calibrates.
    pub fn fit_with_temperature_search(
        records: &[LogitRecord],
        method: ScoreMethod,
        alpha: f64,
        search: &TemperatureSearch,
    ) -> Result<Self> {
        let pairs = crate::record::labeled_pairs(records)?;
        common_class_count(records)?;
        let fit = fit_temperature(&pairs, search)?;
        Self::fit_inner(records, method, alpha, Some(fit.temperature), Some(fit))
    }

    fn fit_inner(
        records: &[LogitRecord],
        method: ScoreMethod,
        alpha: f64,
        temperature: Option<Temperature>,
        temperature_fit: Option<TemperatureFit>,
    ) -> Result<Self> {
        validate_alpha(alpha)?;
        let class_count = common_class_count(records)?;
        method.score.validate(class_count)?;
        let t = temperature.unwrap_or(Temperature::ONE);
        let scores = records
            .iter()
            .map(|r| {
                let y = r.require_label()?;
                let probs = softmax_with_temperature(&r.logits, t);
                let sorted = SortedProbs::new(&probs);
                Ok(crate::scores::score_label(&probs, &sorted, method.score, y))
            })
            .collect::<Result<Vec<f64>>>()?;
        let q_hat = calibrate_threshold(&scores, alpha)?;
        Ok(Calibrator {
            method,
            alpha,
            temperature,
            temperature_fit,
            q_hat,
            n_cal: records.len(),
            class_count,
        })
    }

    /// Softmax of `z` at the calibrated temperature.
    pub fn probs(&self, z: &Logits) -> Result<Probs> {
        if z.class_count() != self.class_count {
            return Err(Error::schema(format!(
                "input has {} classes, calibrator expects {}",
                z.class_count(),
                self.class_count
            )));
        }
        Ok(softmax_with_temperature(
            z,
            self.temperature.unwrap_or(Temperature::ONE),
        ))
    }

    pub fn predict(&self, z: &Logits) -> Result<PredictionSet> {
        let probs = self.probs(z)?;
        let sorted = SortedProbs::new(&probs);
        let scores = scores_with_ranking(&probs, &sorted, self.method.score);
        let labels = select_labels(&sorted, &scores, self.q_hat, &self.method);
        Ok(PredictionSet {
            id: None,
            labels,
            scores,
        })
    }

    pub fn predict_record(&self, record: &LogitRecord) -> Result<PredictionSet> {
        let mut set = self.predict(&record.logits)?;
        set.id = Some(record.id.clone());
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::score_all_labels;
    use proptest::prelude::*;

    fn record(z: &[f64], y: usize) -> LogitRecord {
        LogitRecord::labeled("r", Logits::new(z.to_vec()).unwrap(), y)
    }

    fn sorted_k(scores: &[f64], k: usize) -> f64 {
        let mut v = scores.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[k - 1]
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(
            calibrate_threshold(&[0.1, 0.4, 0.2, 0.9], 0.2).unwrap(),
            0.9
        );
        assert_eq!(
            calibrate_threshold(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.1).unwrap(),
            f64::INFINITY
        );
        assert_eq!(calibrate_threshold(&[0.5; 10], 0.3).unwrap(), 0.5);
        assert_eq!(quantile_rank(4, 0.2), 4);
        assert_eq!(quantile_rank(261, 0.1), 236);
        assert_eq!(quantile_rank(261, 0.2), 210);
    }

    #[test]
    fn threshold_errors() {
        assert!(matches!(
            calibrate_threshold(&[], 0.1),
            Err(Error::InvalidInput(_))
        ));
        for a in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(
                calibrate_threshold(&[0.1], a),
                Err(Error::InvalidParameter(_))
            ));
        }
        assert!(calibrate_threshold(&[0.1, f64::NAN], 0.5).is_err());
    }

    #[test]
    fn single_record_calibration() {
        let r = record(&[0.3, 1.0, -0.4], 2);
        for method in [
            ScoreMethod::lac(),
            ScoreMethod::aps(),
            ScoreMethod::raps(0.1, 1),
        ] {
            let cal = Calibrator::fit(std::slice::from_ref(&r), method, 0.5, None).unwrap();
            let probs = crate::prob::softmax(&r.logits);
            let want = score_all_labels(&probs, &method).unwrap()[2];
            assert_eq!(cal.q_hat, want);
            assert_eq!(cal.n_cal, 1);
        }
    }

    #[test]
    fn perfect_classifier_gives_zero_threshold() {
        let recs = vec![record(&[800.0, 0.0, -5.0], 0); 20];
        let cal = Calibrator::fit(&recs, ScoreMethod::lac(), 0.1, None).unwrap();
        assert_eq!(cal.q_hat, 0.0);
    }

    #[test]
    fn fit_errors() {
        let unlabeled = LogitRecord::new("u", Logits::new(vec![0.0, 1.0]).unwrap());
        assert!(matches!(
            Calibrator::fit(&[unlabeled], ScoreMethod::lac(), 0.1, None),
            Err(Error::InvalidInput(_))
        ));
        let mixed = [record(&[0.0, 1.0], 0), record(&[0.0, 1.0, 2.0], 0)];
        assert!(matches!(
            Calibrator::fit(&mixed, ScoreMethod::lac(), 0.1, None),
            Err(Error::Schema(_))
        ));
        let cal =
            Calibrator::fit(&[record(&[0.0, 1.0], 0)], ScoreMethod::lac(), 0.5, None).unwrap();
        assert!(matches!(
            cal.predict(&Logits::new(vec![0.0, 1.0, 2.0]).unwrap()),
            Err(Error::Schema(_))
        ));
    }

    fn calibrator(method: ScoreMethod, q_hat: f64, c: usize) -> Calibrator {
        Calibrator {
            method,
            alpha: 0.1,
            temperature: None,
            temperature_fit: None,
            q_hat,
            n_cal: 100,
            class_count: c,
        }
    }

    /// Logits whose softmax is exactly (up to rounding) the given probabilities.
    fn logits_for(p: &[f64]) -> Logits {
        Logits::new(p.iter().map(|x| x.ln()).collect()).unwrap()
    }

    fn select(p: &[f64], q_hat: f64, method: ScoreMethod) -> Vec<usize> {
        let probs = Probs::new(p.to_vec()).unwrap();
        let sorted = SortedProbs::new(&probs);
        let scores = score_all_labels(&probs, &method).unwrap();
        select_labels(&sorted, &scores, q_hat, &method)
    }

    #[test]
    fn lac_closed_form() {
        assert_eq!(
            select(&[0.5, 0.3, 0.2], 0.7, ScoreMethod::lac()),
            vec![0, 1]
        );
        let z = logits_for(&[0.5, 0.3, 0.2]);
        let full = calibrator(ScoreMethod::lac(), f64::INFINITY, 3)
            .predict(&z)
            .unwrap();
        assert_eq!(full.labels, vec![0, 1, 2]);
    }

    #[test]
    fn lac_empty_and_forced() {
        let z = logits_for(&[0.2, 0.5, 0.3]);
        let set = calibrator(ScoreMethod::lac(), 0.1, 3).predict(&z).unwrap();
        assert!(set.labels.is_empty());
        let forced = calibrator(ScoreMethod::lac().with_force_nonempty(true), 0.1, 3)
            .predict(&z)
            .unwrap();
        assert_eq!(forced.labels, vec![1]);
    }

    #[test]
    fn aps_crossing_label() {
        assert_eq!(
            select(&[0.5, 0.3, 0.2], 0.6, ScoreMethod::aps().strict()),
            vec![0]
        );
        assert_eq!(
            select(&[0.5, 0.3, 0.2], 0.6, ScoreMethod::aps()),
            vec![0, 1]
        );
        let z = logits_for(&[0.5, 0.3, 0.2]);
        let strict = calibrator(ScoreMethod::aps().strict(), 0.6, 3)
            .predict(&z)
            .unwrap();
        assert_eq!(strict.labels, vec![0]);
        let crossing = calibrator(ScoreMethod::aps(), 0.6, 3).predict(&z).unwrap();
        assert_eq!(crossing.labels, vec![0, 1]);
        let below_all = calibrator(ScoreMethod::aps(), 0.1, 3).predict(&z).unwrap();
        assert_eq!(below_all.labels, vec![0]);
    }

    fn prob_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, 2..=7).prop_map(|w| {
            let total: f64 = w.iter().sum();
            w.into_iter().map(|x| x / total).collect()
        })
    }

    proptest! {
        #[test]
        fn quantile_matches_full_sort(
            scores in prop::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5), Just(0.25)], 1..200),
            alpha in 0.01f64..0.99,
        ) {
            let q = calibrate_threshold(&scores, alpha).unwrap();
            let k = ((scores.len() + 1) as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
            if k > scores.len() {
                prop_assert_eq!(q, f64::INFINITY);
            } else {
                prop_assert_eq!(q, sorted_k(&scores, k.max(1)));
            }
        }

        #[test]
        fn aps_and_raps_sets_never_empty(p in prob_vec(), q in 0.0f64..1.5, lambda in 0.0f64..0.3) {
            let z = logits_for(&p);
            let c = p.len();
            for m in [ScoreMethod::aps(), ScoreMethod::raps(lambda, 1)] {
                prop_assert!(!calibrator(m, q, c).predict(&z).unwrap().labels.is_empty());
            }
        }

        #[test]
        fn sets_nested_in_threshold(p in prob_vec(), q1 in 0.0f64..1.2, q2 in 0.0f64..1.2) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let z = logits_for(&p);
            let c = p.len();
            for m in [ScoreMethod::lac(), ScoreMethod::aps(), ScoreMethod::raps(0.05, 2.min(c))] {
                let small = calibrator(m, lo, c).predict(&z).unwrap();
                let big = calibrator(m, hi, c).predict(&z).unwrap();
                prop_assert!(small.labels.iter().all(|l| big.contains(*l)));
            }
        }
    }
}
