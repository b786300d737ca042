//! Synthetic logit datasets with known ground truth.
//!
//! Each example draws clean logits `z = N(0, logit_scale²)` per class, adds
//! `separability` to one uniformly chosen class, samples its label from
//! `softmax(z)`, and stores `z * true_temperature`. The stored logits are
//! therefore miscalibrated by exactly `true_temperature` and every example is
//! i.i.d., so exchangeability holds by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{softmax, Logits};
use crate::record::LogitRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub n: usize,
    pub true_temperature: f64,
    pub logit_scale: f64,
    pub separability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 7,
            n: 759,
            true_temperature: 1.0,
            logit_scale: 1.0,
            separability: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::param(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.n == 0 {
            return Err(Error::param("need at least one example"));
        }
        if !(self.true_temperature.is_finite() && self.true_temperature > 0.0) {
            return Err(Error::param(format!(
                "true temperature must be positive, got {}",
                self.true_temperature
            )));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::param(format!(
                "logit scale must be positive, got {}",
                self.logit_scale
            )));
        }
        if !(self.separability.is_finite() && self.separability >= 0.0) {
            return Err(Error::param(format!(
                "separability must be >= 0, got {}",
                self.separability
            )));
        }
        Ok(())
    }
}

fn draw(config: &SynthConfig, rng: &mut ChaCha8Rng, id: String) -> LogitRecord {
    let noise = Normal::new(0.0, config.logit_scale).expect("validated scale");
    let mut z: Vec<f64> = (0..config.classes).map(|_| noise.sample(rng)).collect();
    let favored = rng.random_range(0..config.classes);
    z[favored] += config.separability;

    let clean = Logits::new(z.clone()).expect("finite draws");
    let probs = softmax(&clean);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut label = config.classes - 1;
    for (c, p) in probs.as_slice().iter().enumerate() {
        acc += p;
        if u < acc {
            label = c;
            break;
        }
    }

    let stored = z.iter().map(|v| v * config.true_temperature).collect();
    LogitRecord::labeled(id, Logits::new(stored).expect("finite draws"), label)
}

/// `config.n` labeled records; identical configs give identical output.
pub fn generate_calibrated(config: &SynthConfig) -> Result<Vec<LogitRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..config.n)
        .map(|i| draw(config, &mut rng, format!("s{i}")))
        .collect())
}

/// Calibration set per [`generate_calibrated`] plus a test set of the same
/// size whose separability is reduced by `shift` (floored at 0).
///
/// The test set uses an independent ChaCha stream of the same seed, so
/// `shift = 0` yields a fresh draw from the calibration distribution.
pub fn generate_shifted(
    config: &SynthConfig,
    shift: f64,
) -> Result<(Vec<LogitRecord>, Vec<LogitRecord>)> {
    if !shift.is_finite() {
        return Err(Error::param(format!("shift must be finite, got {shift}")));
    }
    let cal = generate_calibrated(config)?;
    let test_config = SynthConfig {
        separability: (config.separability - shift).max(0.0),
        ..*config
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let test = (0..config.n)
        .map(|i| draw(&test_config, &mut rng, format!("t{i}")))
        .collect();
    Ok((cal, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::argmax_label;

    #[test]
    fn same_seed_same_records() {
        let cfg = SynthConfig {
            n: 50,
            seed: 9,
            ..Default::default()
        };
        assert_eq!(
            generate_calibrated(&cfg).unwrap(),
            generate_calibrated(&cfg).unwrap()
        );
        let other = SynthConfig { seed: 10, ..cfg };
        assert_ne!(
            generate_calibrated(&cfg).unwrap(),
            generate_calibrated(&other).unwrap()
        );
    }

    #[test]
    fn symmetric_config_gives_uniform_labels() {
        let cfg = SynthConfig {
            classes: 7,
            n: 10_000,
            separability: 0.0,
            seed: 3,
            ..Default::default()
        };
        let mut counts = [0usize; 7];
        for r in generate_calibrated(&cfg).unwrap() {
            counts[r.label.unwrap()] += 1;
        }
        // Binomial(10000, 1/7): sd ≈ 35; allow 4 sd.
        let expected = 10_000.0 / 7.0;
        for c in counts {
            assert!((c as f64 - expected).abs() < 140.0, "{counts:?}");
        }
    }

    #[test]
    fn large_margin_is_nearly_always_right() {
        let cfg = SynthConfig {
            n: 2000,
            separability: 10.0,
            seed: 4,
            ..Default::default()
        };
        let recs = generate_calibrated(&cfg).unwrap();
        let hits = recs
            .iter()
            .filter(|r| argmax_label(&r.logits) == r.label.unwrap())
            .count();
        assert!(hits as f64 / 2000.0 > 0.995, "{hits}");
    }

    #[test]
    fn stored_logits_are_scaled() {
        let base = SynthConfig {
            n: 5,
            seed: 1,
            ..Default::default()
        };
        let hot = SynthConfig {
            true_temperature: 3.0,
            ..base
        };
        let a = generate_calibrated(&base).unwrap();
        let b = generate_calibrated(&hot).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            for (u, v) in x.logits.as_slice().iter().zip(y.logits.as_slice()) {
                assert!((u * 3.0 - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shifted_test_set_loses_margin() {
        let cfg = SynthConfig {
            n: 1000,
            separability: 10.0,
            seed: 2,
            ..Default::default()
        };
        let (cal, test) = generate_shifted(&cfg, 10.0).unwrap();
        let acc = |rs: &[LogitRecord]| {
            rs.iter()
                .filter(|r| argmax_label(&r.logits) == r.label.unwrap())
                .count()
        };
        assert!(acc(&cal) > 990);
        assert!(acc(&test) < 700);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig {
                classes: 1,
                ..Default::default()
            },
            SynthConfig {
                n: 0,
                ..Default::default()
            },
            SynthConfig {
                true_temperature: 0.0,
                ..Default::default()
            },
            SynthConfig {
                separability: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_calibrated(&cfg),
                Err(Error::InvalidParameter(_))
            ));
        }
    }
}
