#![forbid(unsafe_code)]

//! Split-conformal prediction sets for classifiers whose logits have already
//! been computed.
//!
//! The pipeline is: logits → (optional) temperature-scaled softmax →
//! nonconformity scores (LAC, APS or RAPS) → a threshold calibrated from a
//! held-out set → prediction sets for new inputs. The [`experiment`] module
//! repeats that pipeline over random calibration/test splits and aggregates
//! empirical coverage and average set size.
//!
//! Class indices are 0-based inside the library. Every file format in
//! [`io`] uses 1-based labels.
//!
//! ```
//! use confset::{Calibrator, LogitRecord, Logits, ScoreMethod};
//!
//! let cal: Vec<LogitRecord> = (0..20)
//!     .map(|i| {
//!         let logits = Logits::new(vec![2.0, 0.5 + 0.01 * i as f64, 0.0]).unwrap();
//!         LogitRecord::labeled(format!("c{i}"), logits, i % 2)
//!     })
//!     .collect();
//! let cal = Calibrator::fit(&cal, ScoreMethod::aps(), 0.1, None).unwrap();
//! let set = cal.predict(&Logits::new(vec![1.0, 0.2, -1.0]).unwrap()).unwrap();
//! assert!(!set.labels.is_empty());
//! ```

pub mod conformal;
pub mod error;
pub mod experiment;
pub mod io;
pub mod prob;
pub mod record;
pub mod report;
pub mod scores;
pub mod stats;
pub mod synth;
pub mod temperature;

pub use conformal::{calibrate_threshold, Calibrator, PredictionSet};
pub use error::{Error, Result};
pub use experiment::{
    compute_metrics, run_sweep, run_trial, split, ExperimentReport, Metrics, SplitSpec,
    SweepConfig, TrialResult, TsMode,
};
pub use prob::{argmax_label, nll, softmax, softmax_with_temperature, Logits, Probs, Temperature};
pub use record::{LogitRecord, SplitTag};
pub use scores::{
    aps_score, lac_score, raps_score, score_all_labels, Score, ScoreMethod, SortedProbs,
};
pub use synth::{generate_calibrated, generate_shifted, SynthConfig};
pub use temperature::{fit_temperature, nll_gradient_t, TemperatureFit, TemperatureSearch};

/// Version string written into every emitted document.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
