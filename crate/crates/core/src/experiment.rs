//! Repeated random-split experiments: calibrate on one part of a labeled
//! logit dataset, predict on another, and aggregate empirical coverage and
//! average set size across trials.
//!
//! Trial `t` uses seed `spec.seed + t` for its split. Within a trial every
//! (method, α, TS mode) cell sees the same split, and the fitted temperature
//! is shared by all cells with TS enabled.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    calibrate_threshold, noisy_ceil, select_labels, validate_alpha, PredictionSet,
};
use crate::error::{Error, Result};
use crate::prob::{softmax_with_temperature, Probs, Temperature};
use crate::record::{common_class_count, LogitRecord};
use crate::scores::{score_label, scores_with_ranking, ScoreMethod, SortedProbs};
use crate::stats::{Histogram, Summary};
use crate::temperature::{fit_temperature, TemperatureFit, TemperatureSearch};

/// Reference partition sizes (train / calibration / test).
pub const REFERENCE_SPLIT: (usize, usize, usize) = (386, 261, 112);

/// Bins in the fitted-temperature histogram.
pub const TEMPERATURE_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl SplitSpec {
    /// [`REFERENCE_SPLIT`] proportions scaled to `dataset_size`: calibration
    /// and test sizes are rounded down (minimum 1) and training gets the rest.
    pub fn proportional(dataset_size: usize, seed: u64) -> Result<Self> {
        if dataset_size < 2 {
            return Err(Error::input(format!(
                "need at least 2 records to split, got {dataset_size}"
            )));
        }
        let (tr, ca, te) = REFERENCE_SPLIT;
        let total = tr + ca + te;
        let n_cal = (dataset_size * ca / total).max(1);
        let n_test = (dataset_size * te / total).max(1);
        Ok(SplitSpec {
            n_train: dataset_size - n_cal - n_test,
            n_cal,
            n_test,
            stratified: false,
            seed,
        })
    }

    fn validate(&self, dataset_size: usize) -> Result<()> {
        if self.n_cal == 0 || self.n_test == 0 {
            return Err(Error::param(
                "calibration and test sizes must be at least 1",
            ));
        }
        let needed = self.n_train + self.n_cal + self.n_test;
        if needed > dataset_size {
            return Err(Error::input(format!(
                "split needs {needed} records but the dataset has {dataset_size}"
            )));
        }
        Ok(())
    }

    fn for_trial(&self, trial: usize) -> Self {
        SplitSpec {
            seed: self.seed.wrapping_add(trial as u64),
            ..*self
        }
    }
}

/// Record indices of each part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws disjoint calibration, test and training subsets.
pub fn split(records: &[LogitRecord], spec: &SplitSpec) -> Result<Split> {
    spec.validate(records.len())?;
    let labels = records
        .iter()
        .map(LogitRecord::require_label)
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    if !spec.stratified {
        let mut idx: Vec<usize> = (0..records.len()).collect();
        idx.shuffle(&mut rng);
        let cal = idx[..spec.n_cal].to_vec();
        let test = idx[spec.n_cal..spec.n_cal + spec.n_test].to_vec();
        let train = idx[spec.n_cal + spec.n_test..][..spec.n_train].to_vec();
        return Ok(Split { train, cal, test });
    }

    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        groups[y].push(i);
    }
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let mut capacity = sizes.clone();
    let mut parts = Vec::with_capacity(3);
    for want in [spec.n_cal, spec.n_test, spec.n_train] {
        let alloc = allocate(want, &sizes, &capacity);
        for (cap, a) in capacity.iter_mut().zip(&alloc) {
            *cap -= a;
        }
        parts.push(alloc);
    }

    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (c, group) in groups.iter().enumerate() {
        let mut start = 0;
        for (p, part) in parts.iter().enumerate() {
            out[p].extend_from_slice(&group[start..start + part[c]]);
            start += part[c];
        }
    }
    let [cal, test, train] = out;
    Ok(Split { train, cal, test })
}

/// Largest-remainder apportionment of `want` units proportional to `sizes`,
/// never exceeding `capacity`. Ties in remainders go to the lower class.
fn allocate(want: usize, sizes: &[usize], capacity: &[usize]) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut alloc: Vec<usize> = sizes
        .iter()
        .zip(capacity)
        .map(|(&m, &cap)| (want * m / total).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainder of want * m / total, compared exactly in integers.
    order.sort_by(|&a, &b| {
        ((want * sizes[b]) % total)
            .cmp(&((want * sizes[a]) % total))
            .then(a.cmp(&b))
    });
    let mut remaining = want - alloc.iter().sum::<usize>();
    while remaining > 0 {
        let before = remaining;
        for &c in &order {
            if remaining == 0 {
                break;
            }
            if alloc[c] < capacity[c] {
                alloc[c] += 1;
                remaining -= 1;
            }
        }
        assert!(remaining < before, "capacity exhausted during allocation");
    }
    alloc
}

/// With or without temperature scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TsMode {
    Off,
    On,
}

/// Coverage, mean set size and empty-set count over a batch of sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub empty_count: usize,
}

/// Empty sets count as a miss of size 0.
pub fn compute_metrics(sets: &[PredictionSet], truths: &[usize]) -> Result<Metrics> {
    if sets.len() != truths.len() {
        return Err(Error::input(format!(
            "{} prediction sets but {} true labels",
            sets.len(),
            truths.len()
        )));
    }
    if sets.is_empty() {
        return Err(Error::input("no prediction sets to evaluate"));
    }
    let mut hits = 0usize;
    let mut size = 0usize;
    let mut empty = 0usize;
    for (set, &y) in sets.iter().zip(truths) {
        if !set.scores.is_empty() && y >= set.scores.len() {
            return Err(Error::label(y, set.scores.len()));
        }
        hits += usize::from(set.contains(y));
        size += set.set_size();
        empty += usize::from(set.labels.is_empty());
    }
    let n = sets.len();
    Ok(Metrics {
        n,
        coverage: hits as f64 / n as f64,
        avg_set_size: size as f64 / n as f64,
        empty_count: empty,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub method: ScoreMethod,
    pub alpha: f64,
    pub ts_mode: TsMode,
    pub coverage: f64,
    pub avg_set_size: f64,
    pub empty_set_count: usize,
    pub fitted_t: Option<f64>,
}

/// Softmax and ranking of every record in one part, at one temperature.
struct Prepared {
    probs: Vec<Probs>,
    sorted: Vec<SortedProbs>,
    labels: Vec<usize>,
}

impl Prepared {
    fn new(records: &[LogitRecord], idx: &[usize], t: Temperature) -> Self {
        let probs: Vec<Probs> = idx
            .iter()
            .map(|&i| softmax_with_temperature(&records[i].logits, t))
            .collect();
        let sorted = probs.iter().map(SortedProbs::new).collect();
        let labels = idx
            .iter()
            .map(|&i| records[i].label.expect("checked"))
            .collect();
        Prepared {
            probs,
            sorted,
            labels,
        }
    }

    fn true_label_scores(&self, method: &ScoreMethod) -> Vec<f64> {
        self.probs
            .iter()
            .zip(&self.sorted)
            .zip(&self.labels)
            .map(|((p, s), &y)| score_label(p, s, method.score, y))
            .collect()
    }

    fn label_scores(&self, method: &ScoreMethod) -> Vec<Vec<f64>> {
        self.probs
            .iter()
            .zip(&self.sorted)
            .map(|(p, s)| scores_with_ranking(p, s, method.score))
            .collect()
    }
}

struct TrialOutcome {
    /// Indexed `[ts][method][alpha]`.
    cells: Vec<Vec<Vec<Metrics>>>,
    fit: Option<TemperatureFit>,
    baseline_coverage: Vec<f64>,
}

fn evaluate_trial(
    records: &[LogitRecord],
    spec: &SplitSpec,
    methods: &[ScoreMethod],
    alphas: &[f64],
    ts_modes: &[TsMode],
    search: &TemperatureSearch,
    baseline: bool,
) -> Result<TrialOutcome> {
    let parts = split(records, spec)?;
    let fit = if ts_modes.contains(&TsMode::On) {
        let pairs: Vec<_> = parts
            .cal
            .iter()
            .map(|&i| (&records[i].logits, records[i].label.expect("checked")))
            .collect();
        Some(fit_temperature(&pairs, search)?)
    } else {
        None
    };

    let mut cells = Vec::with_capacity(ts_modes.len());
    for &mode in ts_modes {
        let t = match mode {
            TsMode::Off => Temperature::ONE,
            TsMode::On => fit.expect("fitted above").temperature,
        };
        let cal = Prepared::new(records, &parts.cal, t);
        let test = Prepared::new(records, &parts.test, t);
        let mut per_method = Vec::with_capacity(methods.len());
        for method in methods {
            let cal_scores = cal.true_label_scores(method);
            let test_scores = test.label_scores(method);
            let mut per_alpha = Vec::with_capacity(alphas.len());
            for &alpha in alphas {
                let q_hat = calibrate_threshold(&cal_scores, alpha)?;
                let sets: Vec<PredictionSet> = test
                    .sorted
                    .iter()
                    .zip(&test_scores)
                    .map(|(sorted, scores)| PredictionSet {
                        id: None,
                        labels: select_labels(sorted, scores, q_hat, method),
                        scores: scores.clone(),
                    })
                    .collect();
                per_alpha.push(compute_metrics(&sets, &test.labels)?);
            }
            per_method.push(per_alpha);
        }
        cells.push(per_method);
    }

    let baseline_coverage = if baseline {
        let classes = records[0].class_count();
        let truths: Vec<usize> = parts
            .test
            .iter()
            .map(|&i| records[i].label.expect("checked"))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2);
        alphas
            .iter()
            .map(|&alpha| {
                random_set_coverage(
                    &truths,
                    classes,
                    baseline_set_size(alpha, classes),
                    &mut rng,
                )
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(TrialOutcome {
        cells,
        fit,
        baseline_coverage,
    })
}

/// Size of the uninformative baseline sets: `⌈(1 - α) C⌉`.
pub fn baseline_set_size(alpha: f64, classes: usize) -> usize {
    (noisy_ceil((1.0 - alpha) * classes as f64) as usize).clamp(1, classes)
}

/// Coverage of uniformly random label sets of a fixed size.
pub fn random_set_coverage(
    truths: &[usize],
    classes: usize,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut labels: Vec<usize> = (0..classes).collect();
    let hits = truths
        .iter()
        .filter(|&&y| {
            labels.shuffle(rng);
            labels[..size].contains(&y)
        })
        .count();
    hits as f64 / truths.len() as f64
}

fn check_dataset(records: &[LogitRecord]) -> Result<usize> {
    let classes = common_class_count(records)?;
    for r in records {
        r.require_label()?;
    }
    Ok(classes)
}

/// One (method, α, TS mode) trial on the split for `trial`.
pub fn run_trial(
    records: &[LogitRecord],
    spec: &SplitSpec,
    trial: usize,
    method: ScoreMethod,
    alpha: f64,
    ts_mode: TsMode,
    search: &TemperatureSearch,
) -> Result<TrialResult> {
    validate_alpha(alpha)?;
    let classes = check_dataset(records)?;
    method.score.validate(classes)?;
    let outcome = evaluate_trial(
        records,
        &spec.for_trial(trial),
        &[method],
        &[alpha],
        &[ts_mode],
        search,
        false,
    )?;
    let m = outcome.cells[0][0][0];
    Ok(TrialResult {
        trial,
        method,
        alpha,
        ts_mode,
        coverage: m.coverage,
        avg_set_size: m.avg_set_size,
        empty_set_count: m.empty_count,
        fitted_t: outcome.fit.map(|f| f.temperature.value()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Name of the logits source, used as the row label in tables.
    pub data: String,
    pub split: SplitSpec,
    pub n_trials: usize,
    pub alphas: Vec<f64>,
    pub methods: Vec<ScoreMethod>,
    pub ts_modes: Vec<TsMode>,
    pub temperature_search: TemperatureSearch,
    /// Also score random sets of size `⌈(1 - α) C⌉`.
    pub baseline: bool,
}

impl SweepConfig {
    fn validate(&self, classes: usize) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::param("need at least one trial"));
        }
        if self.alphas.is_empty() || self.methods.is_empty() || self.ts_modes.is_empty() {
            return Err(Error::param(
                "alphas, methods and TS modes must be non-empty",
            ));
        }
        for &a in &self.alphas {
            validate_alpha(a)?;
        }
        for m in &self.methods {
            m.score.validate(classes)?;
        }
        self.temperature_search.validate()
    }
}

/// Aggregated results of one (method, α, TS mode) setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: ScoreMethod,
    pub alpha: f64,
    pub ts_mode: TsMode,
    pub coverage: Summary,
    pub set_size: Summary,
    /// Per-trial values, in trial order.
    pub coverage_per_trial: Vec<f64>,
    pub set_size_per_trial: Vec<f64>,
    pub empty_sets_per_trial: Vec<usize>,
}

impl Cell {
    pub fn trial_results(&self, fitted: Option<&[f64]>) -> Vec<TrialResult> {
        (0..self.coverage_per_trial.len())
            .map(|t| TrialResult {
                trial: t,
                method: self.method,
                alpha: self.alpha,
                ts_mode: self.ts_mode,
                coverage: self.coverage_per_trial[t],
                avg_set_size: self.set_size_per_trial[t],
                empty_set_count: self.empty_sets_per_trial[t],
                fitted_t: match self.ts_mode {
                    TsMode::On => fitted.map(|f| f[t]),
                    TsMode::Off => None,
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSamples {
    /// Fitted temperature per trial.
    pub samples: Vec<f64>,
    pub converged: Vec<bool>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub alpha: f64,
    pub set_size: usize,
    pub coverage: Summary,
    pub coverage_per_trial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: String,
    pub toolkit_version: String,
    pub class_count: usize,
    pub config: SweepConfig,
    pub cells: Vec<Cell>,
    pub temperatures: Option<TemperatureSamples>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline: Vec<BaselineCell>,
}

impl ExperimentReport {
    pub fn cell(&self, method: &ScoreMethod, alpha: f64, ts_mode: TsMode) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.method == *method && c.alpha == alpha && c.ts_mode == ts_mode)
    }
}

#[cfg(feature = "parallel")]
fn map_trials<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_trials<T>(n: usize, f: impl Fn(usize) -> Result<T>) -> Result<Vec<T>> {
    (0..n).map(f).collect()
}

/// Runs every (TS mode, method, α) combination for each trial and
/// aggregates. Output is independent of scheduling: results are merged in
/// trial order.
pub fn run_sweep(records: &[LogitRecord], config: &SweepConfig) -> Result<ExperimentReport> {
    let classes = check_dataset(records)?;
    config.validate(classes)?;
    config.split.validate(records.len())?;

    let outcomes = map_trials(config.n_trials, |t| {
        evaluate_trial(
            records,
            &config.split.for_trial(t),
            &config.methods,
            &config.alphas,
            &config.ts_modes,
            &config.temperature_search,
            config.baseline,
        )
    })?;

    let mut cells = Vec::new();
    for (ti, &ts_mode) in config.ts_modes.iter().enumerate() {
        for (mi, &method) in config.methods.iter().enumerate() {
            for (ai, &alpha) in config.alphas.iter().enumerate() {
                let per: Vec<Metrics> = outcomes.iter().map(|o| o.cells[ti][mi][ai]).collect();
                let coverage: Vec<f64> = per.iter().map(|m| m.coverage).collect();
                let size: Vec<f64> = per.iter().map(|m| m.avg_set_size).collect();
                cells.push(Cell {
                    method,
                    alpha,
                    ts_mode,
                    coverage: Summary::of(&coverage),
                    set_size: Summary::of(&size),
                    coverage_per_trial: coverage,
                    set_size_per_trial: size,
                    empty_sets_per_trial: per.iter().map(|m| m.empty_count).collect(),
                });
            }
        }
    }

    let temperatures = config.ts_modes.contains(&TsMode::On).then(|| {
        let fits: Vec<TemperatureFit> = outcomes.iter().map(|o| o.fit.expect("TS on")).collect();
        let samples: Vec<f64> = fits.iter().map(|f| f.temperature.value()).collect();
        TemperatureSamples {
            histogram: Histogram::uniform(&samples, TEMPERATURE_BINS),
            converged: fits.iter().map(|f| f.converged).collect(),
            samples,
        }
    });

    let baseline = if config.baseline {
        config
            .alphas
            .iter()
            .enumerate()
            .map(|(ai, &alpha)| {
                let cov: Vec<f64> = outcomes.iter().map(|o| o.baseline_coverage[ai]).collect();
                BaselineCell {
                    alpha,
                    set_size: baseline_set_size(alpha, classes),
                    coverage: Summary::of(&cov),
                    coverage_per_trial: cov,
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(ExperimentReport {
        format_version: crate::io::FORMAT_VERSION.to_string(),
        toolkit_version: crate::TOOLKIT_VERSION.to_string(),
        class_count: classes,
        config: config.clone(),
        cells,
        temperatures,
        baseline,
    })
}
