//! Nonconformity scores: LAC, APS and RAPS.
//!
//! All three are functions of the softmax vector and a hypothesized label.
//! Lower scores mean the label is more typical for the input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::Probs;

/// Default RAPS penalty weight. Arbitrary: there is no canonical value.
pub const DEFAULT_RAPS_LAMBDA: f64 = 0.01;
/// Default RAPS rank cutoff (1-based). Arbitrary: there is no canonical value.
pub const DEFAULT_RAPS_K_REG: usize = 2;

/// Which score function to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Score {
    /// `1 - π_y`.
    Lac,
    /// Probability mass of all classes ranked at or above `y`.
    Aps,
    /// APS plus `lambda * max(0, rank(y) - k_reg)`; `k_reg` is a 1-based rank.
    Raps { lambda: f64, k_reg: usize },
}

impl Score {
    pub fn name(&self) -> &'static str {
        match self {
            Score::Lac => "lac",
            Score::Aps => "aps",
            Score::Raps { .. } => "raps",
        }
    }

    /// Checks parameter ranges against a concrete class count.
    pub fn validate(&self, classes: usize) -> Result<()> {
        if let Score::Raps { lambda, k_reg } = *self {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(Error::param(format!(
                    "RAPS lambda must be >= 0, got {lambda}"
                )));
            }
            if k_reg == 0 || k_reg > classes {
                return Err(Error::param(format!(
                    "RAPS k_reg must be in 1..={classes}, got {k_reg}"
                )));
            }
        }
        Ok(())
    }
}

/// A score function together with the set-construction options that go
/// with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreMethod {
    #[serde(flatten)]
    pub score: Score,
    /// APS/RAPS: also include the first label whose cumulative score crosses
    /// the threshold. Ignored for LAC.
    pub include_crossing_label: bool,
    /// LAC: replace an empty set by the argmax label. Ignored for APS/RAPS.
    pub force_nonempty: bool,
}

impl ScoreMethod {
    pub fn new(score: Score) -> Self {
        ScoreMethod {
            score,
            include_crossing_label: true,
            force_nonempty: false,
        }
    }

    pub fn lac() -> Self {
        Self::new(Score::Lac)
    }

    pub fn aps() -> Self {
        Self::new(Score::Aps)
    }

    pub fn raps(lambda: f64, k_reg: usize) -> Self {
        Self::new(Score::Raps { lambda, k_reg })
    }

    /// Pure threshold rule: no crossing label, no forced non-emptiness.
    pub fn strict(mut self) -> Self {
        self.include_crossing_label = false;
        self.force_nonempty = false;
        self
    }

    pub fn with_crossing_label(mut self, on: bool) -> Self {
        self.include_crossing_label = on;
        self
    }

    pub fn with_force_nonempty(mut self, on: bool) -> Self {
        self.force_nonempty = on;
        self
    }

    /// Short display name, e.g. `raps(λ=0.01,k=2)`.
    pub fn label(&self) -> String {
        match self.score {
            Score::Raps { lambda, k_reg } => format!("raps(λ={lambda},k={k_reg})"),
            other => other.name().to_string(),
        }
    }
}

/// Classes ranked by descending probability, ties broken by ascending index.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedProbs {
    /// `order[r]` is the class at 0-based rank `r`.
    pub order: Vec<usize>,
    /// `rank_of[c]` is the 1-based rank of class `c`.
    pub rank_of: Vec<usize>,
    /// `cumsum[r]` is the total probability of ranks `0..=r`.
    pub cumsum: Vec<f64>,
}

impl SortedProbs {
    pub fn new(probs: &Probs) -> Self {
        let p = probs.as_slice();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut rank_of = vec![0; p.len()];
        let mut cumsum = Vec::with_capacity(p.len());
        let mut acc = 0.0;
        for (r, &c) in order.iter().enumerate() {
            rank_of[c] = r + 1;
            acc += p[c];
            cumsum.push(acc);
        }
        SortedProbs {
            order,
            rank_of,
            cumsum,
        }
    }

    pub fn class_count(&self) -> usize {
        self.order.len()
    }

    fn aps(&self, y: usize) -> f64 {
        self.cumsum[self.rank_of[y] - 1]
    }

    fn raps(&self, y: usize, lambda: f64, k_reg: usize) -> f64 {
        let excess = self.rank_of[y].saturating_sub(k_reg);
        self.aps(y) + lambda * excess as f64
    }
}

fn check_label(probs: &Probs, y: usize) -> Result<()> {
    if y < probs.class_count() {
        Ok(())
    } else {
        Err(Error::label(y, probs.class_count()))
    }
}

pub fn lac_score(probs: &Probs, y: usize) -> Result<f64> {
    check_label(probs, y)?;
    Ok(1.0 - probs.as_slice()[y])
}

pub fn aps_score(probs: &Probs, y: usize) -> Result<f64> {
    check_label(probs, y)?;
    Ok(SortedProbs::new(probs).aps(y))
}

pub fn raps_score(probs: &Probs, y: usize, lambda: f64, k_reg: usize) -> Result<f64> {
    check_label(probs, y)?;
    Score::Raps { lambda, k_reg }.validate(probs.class_count())?;
    Ok(SortedProbs::new(probs).raps(y, lambda, k_reg))
}

/// Score of label `y` given a precomputed ranking. Parameters are assumed
/// validated.
pub fn score_label(probs: &Probs, sorted: &SortedProbs, score: Score, y: usize) -> f64 {
    match score {
        Score::Lac => 1.0 - probs.as_slice()[y],
        Score::Aps => sorted.aps(y),
        Score::Raps { lambda, k_reg } => sorted.raps(y, lambda, k_reg),
    }
}

/// Scores every class as if it were the true label.
pub fn score_all_labels(probs: &Probs, method: &ScoreMethod) -> Result<Vec<f64>> {
    method.score.validate(probs.class_count())?;
    let sorted = SortedProbs::new(probs);
    Ok(scores_with_ranking(probs, &sorted, method.score))
}

pub(crate) fn scores_with_ranking(probs: &Probs, sorted: &SortedProbs, score: Score) -> Vec<f64> {
    (0..probs.class_count())
        .map(|y| score_label(probs, sorted, score, y))
        .collect()
}
