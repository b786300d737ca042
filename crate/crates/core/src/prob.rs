//! Probability primitives: stabilized softmax, temperature scaling,
//! log-probabilities, argmax and mean negative log-likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw classifier scores for one input. At least two classes, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::input(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "logit entry {} is not finite ({})",
                pos + 1,
                values[pos]
            )));
        }
        Ok(Logits(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Probs(Vec<f64>);

impl Probs {
    /// Tolerance on the total mass accepted by [`Probs::new`].
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::input(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::input(format!(
                "probability entry {} out of [0, 1] ({})",
                pos + 1,
                values[pos]
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Probs(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }
}

/// Positive, finite divisor applied to logits before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(Error::param(format!(
                "temperature must be positive and finite, got {t}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(t: f64) -> Result<Self> {
        Temperature::new(t)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn softmax(z: &Logits) -> Probs {
    softmax_with_temperature(z, Temperature::ONE)
}

/// `softmax(z / t)`, evaluated as `exp((z_c - max z) / t)` normalized.
///
/// With `t == 1` the division is exact, so the result is bit-identical to
/// [`softmax`].
pub fn softmax_with_temperature(z: &Logits, t: Temperature) -> Probs {
    let values = z.as_slice();
    let m = max_of(values);
    let mut out: Vec<f64> = values.iter().map(|&v| ((v - m) / t.0).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Probs(out)
}

/// Log-probabilities of `softmax(z / t)`.
///
/// The normalizer is computed as `ln(1 + Σ_{c≠argmax} exp(...))` via `ln_1p`
/// so that near-certain classes keep full relative precision in `-log π`.
pub fn log_softmax_with_temperature(z: &Logits, t: Temperature) -> Vec<f64> {
    let values = z.as_slice();
    let top = argmax_slice(values);
    let m = values[top];
    let shifted: Vec<f64> = values.iter().map(|&v| (v - m) / t.0).collect();
    let rest: f64 = shifted
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != top)
        .map(|(_, s)| s.exp())
        .sum();
    let log_norm = rest.ln_1p();
    shifted.into_iter().map(|s| s - log_norm).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax_slice(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class (0-based): the smallest index attaining the maximum logit.
pub fn argmax_label(z: &Logits) -> usize {
    argmax_slice(z.as_slice())
}

/// Mean of `-log softmax(z / t)[y]` over labeled examples (labels 0-based).
pub fn nll<'a, I>(examples: I, t: Temperature) -> Result<f64>
where
    I: IntoIterator<Item = (&'a Logits, usize)>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (z, y) in examples {
        if y >= z.class_count() {
            return Err(Error::label(y, z.class_count()));
        }
        total -= log_softmax_with_temperature(z, t)[y];
        count += 1;
    }
    if count == 0 {
        return Err(Error::input("negative log-likelihood of an empty set"));
    }
    Ok(total / count as f64)
}
