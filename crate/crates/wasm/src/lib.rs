//! Browser bindings for the interactive demo page.
//!
//! Every exported function takes plain numbers/strings and returns a JSON
//! string, so the page needs no generated TypeScript types. The `*_json`
//! functions hold the logic and are usable (and tested) natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use confset::conformal::select_labels;
use confset::record::labeled_pairs;
use confset::{
    fit_temperature, generate_calibrated, nll, run_sweep, score_all_labels,
    softmax_with_temperature, Error, Logits, Result, ScoreMethod, SortedProbs, SplitSpec,
    SweepConfig, SynthConfig, Temperature, TemperatureSearch, TsMode,
};

fn parse_method(name: &str, lambda: f64, k_reg: usize, crossing: bool) -> Result<ScoreMethod> {
    let method = match name {
        "lac" => ScoreMethod::lac(),
        "aps" => ScoreMethod::aps(),
        "raps" => ScoreMethod::raps(lambda, k_reg),
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown method {other:?}; expected lac, aps or raps"
            )))
        }
    };
    Ok(method.with_crossing_label(crossing))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

#[derive(Serialize)]
struct SetView {
    probs: Vec<f64>,
    scores: Vec<f64>,
    /// 1-based rank of each class by probability.
    ranks: Vec<usize>,
    /// 1-based labels in the prediction set.
    set: Vec<usize>,
}

/// Scores every label of one logit vector and forms the set at `q_hat`.
pub fn explore_sets_json(
    logits: &[f64],
    temperature: f64,
    method: &str,
    q_hat: f64,
    lambda: f64,
    k_reg: usize,
    crossing: bool,
) -> Result<String> {
    let z = Logits::new(logits.to_vec())?;
    let probs = softmax_with_temperature(&z, Temperature::new(temperature)?);
    let method = parse_method(method, lambda, k_reg, crossing)?;
    method.score.validate(z.class_count())?;
    let scores = score_all_labels(&probs, &method)?;
    let sorted = SortedProbs::new(&probs);
    let set = select_labels(&sorted, &scores, q_hat, &method)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    to_json(&SetView {
        probs: probs.as_slice().to_vec(),
        scores,
        ranks: sorted.rank_of.clone(),
        set,
    })
}

#[derive(Serialize)]
struct CoverageView {
    alpha: f64,
    method: String,
    n_cal: usize,
    n_test: usize,
    coverage_per_trial: Vec<f64>,
    set_size_per_trial: Vec<f64>,
    coverage_mean: f64,
    coverage_std: f64,
    set_size_mean: f64,
    /// Upper edge of the finite-sample coverage band: 1 - α + 1/(n_cal + 1).
    coverage_upper: f64,
    fitted_t: Option<Vec<f64>>,
}

/// Synthesizes a dataset, then runs repeated random cal/test splits and
/// reports per-trial coverage and set size.
#[allow(clippy::too_many_arguments)]
pub fn coverage_experiment_json(
    classes: usize,
    n: usize,
    true_temperature: f64,
    separability: f64,
    seed: u64,
    trials: usize,
    alpha: f64,
    method: &str,
    use_ts: bool,
) -> Result<String> {
    let data = generate_calibrated(&SynthConfig {
        classes,
        n,
        true_temperature,
        separability,
        seed,
        ..SynthConfig::default()
    })?;
    let split = SplitSpec::proportional(n, seed)?;
    let method = parse_method(
        method,
        confset::scores::DEFAULT_RAPS_LAMBDA,
        confset::scores::DEFAULT_RAPS_K_REG,
        true,
    )?;
    let config = SweepConfig {
        data: "synthetic".into(),
        split,
        n_trials: trials,
        alphas: vec![alpha],
        methods: vec![method],
        ts_modes: vec![if use_ts { TsMode::On } else { TsMode::Off }],
        temperature_search: TemperatureSearch::default(),
        baseline: false,
    };
    let mut report = run_sweep(&data, &config)?;
    let cell = report.cells.remove(0);
    to_json(&CoverageView {
        alpha,
        method: method.label(),
        n_cal: split.n_cal,
        n_test: split.n_test,
        coverage_mean: cell.coverage.mean,
        coverage_std: cell.coverage.std,
        set_size_mean: cell.set_size.mean,
        coverage_upper: 1.0 - alpha + 1.0 / (split.n_cal as f64 + 1.0),
        coverage_per_trial: cell.coverage_per_trial,
        set_size_per_trial: cell.set_size_per_trial,
        fitted_t: report.temperatures.map(|t| t.samples),
    })
}

#[derive(Serialize)]
struct CurveView {
    temperatures: Vec<f64>,
    nll: Vec<f64>,
    fitted: f64,
    fitted_nll: f64,
    converged: bool,
}

/// Mean NLL over a log-spaced temperature grid for a synthetic dataset,
/// plus the fitted minimizer.
pub fn temperature_curve_json(
    classes: usize,
    n: usize,
    true_temperature: f64,
    separability: f64,
    seed: u64,
    points: usize,
) -> Result<String> {
    if points < 2 {
        return Err(Error::InvalidParameter(
            "need at least 2 curve points".into(),
        ));
    }
    let data = generate_calibrated(&SynthConfig {
        classes,
        n,
        true_temperature,
        separability,
        seed,
        ..SynthConfig::default()
    })?;
    let pairs = labeled_pairs(&data)?;
    let search = TemperatureSearch::default();
    let fit = fit_temperature(&pairs, &search)?;
    let (lo, hi) = (search.t_lo.ln(), search.t_hi.ln());
    let temperatures: Vec<f64> = (0..points)
        .map(|i| (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect();
    let nll = temperatures
        .iter()
        .map(|&t| nll(pairs.iter().copied(), Temperature::new(t)?))
        .collect::<Result<Vec<_>>>()?;
    to_json(&CurveView {
        temperatures,
        nll,
        fitted: fit.temperature.value(),
        fitted_nll: fit.nll,
        converged: fit.converged,
    })
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = exploreSets)]
pub fn explore_sets(
    logits: Vec<f64>,
    temperature: f64,
    method: &str,
    q_hat: f64,
    lambda: f64,
    k_reg: usize,
    crossing: bool,
) -> std::result::Result<String, JsError> {
    js(explore_sets_json(
        &logits,
        temperature,
        method,
        q_hat,
        lambda,
        k_reg,
        crossing,
    ))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = coverageExperiment)]
pub fn coverage_experiment(
    classes: usize,
    n: usize,
    true_temperature: f64,
    separability: f64,
    seed: u32,
    trials: usize,
    alpha: f64,
    method: &str,
    use_ts: bool,
) -> std::result::Result<String, JsError> {
    js(coverage_experiment_json(
        classes,
        n,
        true_temperature,
        separability,
        seed.into(),
        trials,
        alpha,
        method,
        use_ts,
    ))
}

#[wasm_bindgen(js_name = temperatureCurve)]
pub fn temperature_curve(
    classes: usize,
    n: usize,
    true_temperature: f64,
    separability: f64,
    seed: u32,
    points: usize,
) -> std::result::Result<String, JsError> {
    js(temperature_curve_json(
        classes,
        n,
        true_temperature,
        separability,
        seed.into(),
        points,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: Result<String>) -> Value {
        serde_json::from_str(&s.unwrap()).unwrap()
    }

    #[test]
    fn explore_lac_and_aps() {
        let logits = [2.0, 1.0, 0.1];
        let v = parse(explore_sets_json(&logits, 1.0, "lac", 0.5, 0.0, 0, true));
        assert_eq!(v["set"], serde_json::json!([1]));
        assert_eq!(v["ranks"], serde_json::json!([1, 2, 3]));
        let p0 = v["probs"][0].as_f64().unwrap();
        assert!((p0 - 0.659001138885967906914014).abs() < 1e-15);

        // APS at q̂ just below the top cumulative mass: base set empty, the
        // crossing label is the top class.
        let v = parse(explore_sets_json(&logits, 1.0, "aps", 0.6, 0.0, 0, true));
        assert_eq!(v["set"], serde_json::json!([1]));
        let v = parse(explore_sets_json(&logits, 1.0, "aps", 0.6, 0.0, 0, false));
        assert_eq!(v["set"], serde_json::json!([]));
    }

    #[test]
    fn explore_rejects_bad_input() {
        assert!(explore_sets_json(&[1.0], 1.0, "lac", 0.5, 0.0, 0, true).is_err());
        assert!(explore_sets_json(&[1.0, 2.0], 0.0, "lac", 0.5, 0.0, 0, true).is_err());
        assert!(explore_sets_json(&[1.0, 2.0], 1.0, "top-k", 0.5, 0.0, 0, true).is_err());
        assert!(explore_sets_json(&[1.0, 2.0], 1.0, "raps", 0.5, -1.0, 0, true).is_err());
    }

    #[test]
    fn coverage_experiment_shape() {
        let v = parse(coverage_experiment_json(
            5, 300, 1.0, 2.0, 3, 20, 0.1, "raps", true,
        ));
        assert_eq!(v["coverage_per_trial"].as_array().unwrap().len(), 20);
        assert_eq!(v["fitted_t"].as_array().unwrap().len(), 20);
        let mean = v["coverage_mean"].as_f64().unwrap();
        assert!(mean > 0.8 && mean <= 1.0, "{mean}");
        assert!(coverage_experiment_json(5, 300, 1.0, 2.0, 3, 20, 1.1, "lac", false).is_err());
    }

    #[test]
    fn curve_minimum_matches_fit() {
        let v = parse(temperature_curve_json(4, 2000, 2.0, 2.0, 5, 60));
        let nll: Vec<f64> = v["nll"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        let fitted_nll = v["fitted_nll"].as_f64().unwrap();
        assert!(nll.iter().all(|&l| l >= fitted_nll - 1e-9));
        let t = v["fitted"].as_f64().unwrap();
        assert!((t - 2.0).abs() < 0.2, "{t}");
        assert!(temperature_curve_json(4, 100, 1.0, 2.0, 5, 1).is_err());
    }
}
