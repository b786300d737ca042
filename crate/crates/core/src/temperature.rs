//! Post-hoc temperature scaling: pick the scalar `T` minimizing the mean
//! negative log-likelihood of a labeled calibration set, logits held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{nll, softmax_with_temperature, Logits, Temperature};

/// `1/φ`, the golden-section interior-point ratio.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Bracket and stopping rule for the temperature search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSearch {
    pub t_lo: f64,
    pub t_hi: f64,
    /// Stop once the bracket width in `ln T` falls below this.
    pub tol: f64,
}

impl Default for TemperatureSearch {
    fn default() -> Self {
        TemperatureSearch {
            t_lo: 0.05,
            t_hi: 20.0,
            tol: 1e-4,
        }
    }
}

impl TemperatureSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_lo.is_finite() && self.t_hi.is_finite() && self.t_lo > 0.0) {
            return Err(Error::param(format!(
                "temperature bounds must be positive and finite, got ({}, {})",
                self.t_lo, self.t_hi
            )));
        }
        if self.t_lo >= self.t_hi {
            return Err(Error::param(format!(
                "temperature lower bound {} must be below upper bound {}",
                self.t_lo, self.t_hi
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::param(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Outcome of [`fit_temperature`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    pub nll: f64,
    pub iterations: usize,
    pub bounds: (f64, f64),
    /// False when the minimum sits on a bracket endpoint and `temperature`
    /// was clamped to it.
    pub converged: bool,
}

/// Golden-section search over `u = ln T` on `[ln t_lo, ln t_hi]`.
///
/// The mean NLL is convex in `1/T`, hence unimodal in `ln T`. If an endpoint
/// scores no worse than the interior estimate the result is clamped to that
/// endpoint and reported as not converged.
pub fn fit_temperature(
    examples: &[(&Logits, usize)],
    search: &TemperatureSearch,
) -> Result<TemperatureFit> {
    search.validate()?;
    if examples.is_empty() {
        return Err(Error::input(
            "temperature fit needs at least one labeled example",
        ));
    }
    let objective = |u: f64| -> Result<f64> {
        nll(
            examples.iter().map(|&(z, y)| (z, y)),
            Temperature::new(u.exp())?,
        )
    };

    let (lo, hi) = (search.t_lo.ln(), search.t_hi.ln());
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    let mut iterations = 0;
    while b - a >= search.tol {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = objective(d)?;
        }
    }

    let mid = 0.5 * (a + b);
    let f_mid = objective(mid)?;
    let f_lo = objective(lo)?;
    let f_hi = objective(hi)?;
    let (u, value, converged) = if f_lo <= f_mid && f_lo <= f_hi {
        (lo, f_lo, false)
    } else if f_hi <= f_mid {
        (hi, f_hi, false)
    } else {
        (mid, f_mid, true)
    };
    let t = if converged {
        u.exp()
    } else if u == lo {
        search.t_lo
    } else {
        search.t_hi
    };

    Ok(TemperatureFit {
        temperature: Temperature::new(t)?,
        nll: value,
        iterations,
        bounds: (search.t_lo, search.t_hi),
        converged,
    })
}

/// Analytic `d/dT` of the mean NLL: `mean((z_y - E_π[z]) / T²)` with `π`
/// the temperature-scaled softmax.
pub fn nll_gradient_t(examples: &[(&Logits, usize)], t: Temperature) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::input("gradient of an empty set"));
    }
    let mut total = 0.0;
    for &(z, y) in examples {
        if y >= z.class_count() {
            return Err(Error::label(y, z.class_count()));
        }
        let p = softmax_with_temperature(z, t);
        let values = z.as_slice();
        let m = values[y];
        // Centering on z_y keeps the difference exact-ish for large logits.
        let expected: f64 = p
            .as_slice()
            .iter()
            .zip(values)
            .map(|(pc, zc)| pc * (zc - m))
            .sum();
        total += -expected;
    }
    let tv = t.value();
    Ok(total / examples.len() as f64 / (tv * tv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(v: &[f64]) -> Logits {
        Logits::new(v.to_vec()).unwrap()
    }

    fn fd_gradient(examples: &[(&Logits, usize)], t: f64) -> f64 {
        let h = 1e-5 * t;
        let f = |t: f64| nll(examples.iter().copied(), Temperature::new(t).unwrap()).unwrap();
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    #[test]
    fn uniform_logits_have_zero_gradient() {
        let z = logits(&[0.0, 0.0, 0.0]);
        for t in [0.1, 1.0, 7.0] {
            let g = nll_gradient_t(&[(&z, 1)], Temperature::new(t).unwrap()).unwrap();
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn two_class_gradient_matches_finite_difference() {
        let z = logits(&[1.0, 0.0]);
        let g = nll_gradient_t(&[(&z, 0)], Temperature::ONE).unwrap();
        let fd = fd_gradient(&[(&z, 0)], 1.0);
        assert!(((g - fd) / fd).abs() < 1e-5, "{g} vs {fd}");
    }

    #[test]
    fn mirrored_pair_averages() {
        let z = logits(&[1.4, -0.3, 0.2]);
        let mirrored = logits(&[-0.2, 0.3, -1.4]);
        let t = Temperature::new(1.7).unwrap();
        let single = nll_gradient_t(&[(&z, 0)], t).unwrap();
        let mirror = nll_gradient_t(&[(&mirrored, 2)], t).unwrap();
        let pair = nll_gradient_t(&[(&z, 0), (&mirrored, 2)], t).unwrap();
        assert!((pair - (single + mirror) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn single_confident_example_clamps_low() {
        let z = logits(&[2.0, 0.5, -1.0]);
        let fit = fit_temperature(&[(&z, 0)], &TemperatureSearch::default()).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.temperature.value(), 0.05);
    }

    #[test]
    fn single_wrong_example_clamps_high() {
        let z = logits(&[2.0, 0.5, -1.0]);
        let fit = fit_temperature(&[(&z, 2)], &TemperatureSearch::default()).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.temperature.value(), 20.0);
    }

    #[test]
    fn interior_minimum_is_local_optimum() {
        // One right, one wrong: the optimum is interior.
        let a = logits(&[2.0, 0.0]);
        let b = logits(&[2.0, 0.0]);
        let data = [(&a, 0), (&a, 0), (&b, 1)];
        let search = TemperatureSearch::default();
        let fit = fit_temperature(&data, &search).unwrap();
        assert!(fit.converged);
        let t = fit.temperature.value();
        assert!(t > search.t_lo && t < search.t_hi);
        let f = |t: f64| nll(data.iter().copied(), Temperature::new(t).unwrap()).unwrap();
        assert!(fit.nll <= f(t * (1.0 + search.tol)) + 1e-10);
        assert!(fit.nll <= f(t * (1.0 - search.tol)) + 1e-10);
        assert!(fit.nll <= f(1.0) && fit.nll <= f(search.t_lo) && fit.nll <= f(search.t_hi));
        // Gradient vanishes at the optimum (loosely, given the tolerance).
        assert!(nll_gradient_t(&data, fit.temperature).unwrap().abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_search() {
        let z = logits(&[1.0, 0.0]);
        let data = [(&z, 0)];
        for s in [
            TemperatureSearch {
                t_lo: 0.0,
                ..Default::default()
            },
            TemperatureSearch {
                t_lo: 3.0,
                t_hi: 2.0,
                tol: 1e-4,
            },
            TemperatureSearch {
                tol: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                fit_temperature(&data, &s),
                Err(Error::InvalidParameter(_))
            ));
        }
        assert!(matches!(
            fit_temperature(&[], &TemperatureSearch::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn deterministic() {
        let a = logits(&[1.0, 0.2, -0.5]);
        let b = logits(&[0.1, 0.9, 0.4]);
        let data = [(&a, 0), (&b, 2), (&a, 1), (&b, 1)];
        let x = fit_temperature(&data, &TemperatureSearch::default()).unwrap();
        let y = fit_temperature(&data, &TemperatureSearch::default()).unwrap();
        assert_eq!(
            x.temperature.value().to_bits(),
            y.temperature.value().to_bits()
        );
    }
}
