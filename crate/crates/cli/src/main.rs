//! Command-line front end: synthesize logits, fit temperatures, calibrate,
//! predict, evaluate, and run/report multi-trial sweeps.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use confset::experiment::{compute_metrics, run_sweep, SplitSpec, SweepConfig, TsMode};
use confset::io::{self, MetricsReport, TemperatureReport};
use confset::record::{common_class_count, labeled_pairs};
use confset::report::{render_raw, render_report};
use confset::scores::{DEFAULT_RAPS_K_REG, DEFAULT_RAPS_LAMBDA};
use confset::{
    fit_temperature, generate_calibrated, Calibrator, ScoreMethod, SynthConfig, Temperature,
    TemperatureSearch,
};

#[derive(Parser)]
#[command(
    name = "confset",
    version,
    about = "Conformal prediction sets from classifier logits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lac,
    Aps,
    Raps,
}

#[derive(Clone, Copy, ValueEnum)]
enum TsArg {
    Off,
    On,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Raw,
}

#[derive(clap::Args)]
struct SearchArgs {
    /// Lower bound of the temperature search.
    #[arg(long, default_value_t = 0.05)]
    t_lo: f64,
    /// Upper bound of the temperature search.
    #[arg(long, default_value_t = 20.0)]
    t_hi: f64,
    /// Stopping width of the search bracket in ln T.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

impl SearchArgs {
    fn search(&self) -> TemperatureSearch {
        TemperatureSearch {
            t_lo: self.t_lo,
            t_hi: self.t_hi,
            tol: self.tol,
        }
    }
}

#[derive(clap::Args)]
struct SetArgs {
    /// RAPS penalty weight.
    #[arg(long, default_value_t = DEFAULT_RAPS_LAMBDA)]
    lambda: f64,
    /// RAPS rank cutoff (1-based).
    #[arg(long, default_value_t = DEFAULT_RAPS_K_REG)]
    k_reg: usize,
    /// APS/RAPS: drop the label that crosses the threshold (pure threshold rule).
    #[arg(long)]
    strict_sets: bool,
    /// LAC: replace empty sets by the top-1 label.
    #[arg(long)]
    force_nonempty: bool,
}

impl SetArgs {
    fn method(&self, m: MethodArg) -> ScoreMethod {
        let base = match m {
            MethodArg::Lac => ScoreMethod::lac(),
            MethodArg::Aps => ScoreMethod::aps(),
            MethodArg::Raps => ScoreMethod::raps(self.lambda, self.k_reg),
        };
        base.with_crossing_label(!self.strict_sets)
            .with_force_nonempty(self.force_nonempty)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled logit file.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        n: usize,
        /// Factor by which stored logits are over-scaled.
        #[arg(long)]
        temp: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Margin added to one random class per example.
        #[arg(long, default_value_t = 2.0)]
        separability: f64,
        /// Standard deviation of the logit noise.
        #[arg(long, default_value_t = 1.0)]
        logit_scale: f64,
    },
    /// Fit a temperature on a labeled logit file.
    FitTemperature {
        #[arg(long)]
        cal: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Calibrate a conformal threshold and save the calibrator.
    Calibrate {
        #[arg(long)]
        cal: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        /// `none`, `fit`, or a fixed positive value.
        #[arg(long, default_value = "none")]
        temperature: String,
        #[command(flatten)]
        sets: SetArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Build prediction sets for a logit file.
    Predict {
        #[arg(long)]
        calibrator: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coverage and set size of prediction sets against true labels.
    Evaluate {
        #[arg(long)]
        sets: PathBuf,
        /// Labeled logit file; records are matched to sets by id.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated random-split experiment over methods, alphas and TS modes.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',', required = true)]
        methods: Vec<MethodArg>,
        #[arg(long, value_enum)]
        ts: TsArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Partition sizes N_TRAIN/N_CAL/N_TEST. Defaults to 386/261/112
        /// proportions of the dataset.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        stratified: bool,
        /// Also score random sets of size ceil((1 - alpha) C).
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        sets: SetArgs,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Render sweep reports as tables.
    Report {
        /// One or more sweep reports; each contributes its rows.
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_records(path: &Path) -> Result<Vec<confset::LogitRecord>> {
    io::read_logits(path).with_context(|| format!("reading {}", path.display()))
}

fn write_out(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn parse_split(text: &str, seed: u64, stratified: bool) -> Result<SplitSpec> {
    let parts: Vec<&str> = text.split('/').collect();
    let [train, cal, test] = parts.as_slice() else {
        bail!("--split expects N_TRAIN/N_CAL/N_TEST, got {text:?}");
    };
    let num = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| anyhow!("bad count {s:?} in --split"))
    };
    Ok(SplitSpec {
        n_train: num(train)?,
        n_cal: num(cal)?,
        n_test: num(test)?,
        stratified,
        seed,
    })
}

fn data_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            classes,
            n,
            temp,
            seed,
            out,
            separability,
            logit_scale,
        } => {
            let cfg = SynthConfig {
                classes,
                n,
                true_temperature: temp,
                logit_scale,
                separability,
                seed,
            };
            let records = generate_calibrated(&cfg)?;
            let mut buf = Vec::new();
            io::write_logits(&mut buf, &records)?;
            write_out(&out, buf)
        }
        Command::FitTemperature { cal, out, search } => {
            let records = read_records(&cal)?;
            common_class_count(&records)?;
            let pairs = labeled_pairs(&records)?;
            let fit = fit_temperature(&pairs, &search.search())?;
            write_out(&out, TemperatureReport::new(records.len(), fit).to_json()?)
        }
        Command::Calibrate {
            cal,
            method,
            alpha,
            out,
            temperature,
            sets,
            search,
        } => {
            let records = read_records(&cal)?;
            let method = sets.method(method);
            let calibrator = match temperature.as_str() {
                "none" => Calibrator::fit(&records, method, alpha, None)?,
                "fit" => Calibrator::fit_with_temperature_search(
                    &records,
                    method,
                    alpha,
                    &search.search(),
                )?,
                value => {
                    let t: f64 = value.parse().map_err(|_| {
                        anyhow!("--temperature must be none, fit or a number, got {value:?}")
                    })?;
                    Calibrator::fit(&records, method, alpha, Some(Temperature::new(t)?))?
                }
            };
            write_out(&out, io::calibrator_to_json(&calibrator)?)
        }
        Command::Predict {
            calibrator,
            input,
            out,
        } => {
            let cal = io::calibrator_from_json(&read_text(&calibrator)?)
                .with_context(|| format!("loading {}", calibrator.display()))?;
            let records = read_records(&input)?;
            let sets = records
                .iter()
                .map(|r| cal.predict_record(r))
                .collect::<confset::Result<Vec<_>>>()?;
            let mut buf = Vec::new();
            io::write_sets(&mut buf, &sets)?;
            write_out(&out, buf)
        }
        Command::Evaluate { sets, truth, out } => {
            let sets =
                io::read_sets(&sets).with_context(|| format!("reading {}", sets.display()))?;
            let truth = read_records(&truth)?;
            let labels: HashMap<&str, Option<usize>> =
                truth.iter().map(|r| (r.id.as_str(), r.label)).collect();
            let truths = sets
                .iter()
                .map(|s| {
                    let id = s.id.as_deref().unwrap_or_default();
                    match labels.get(id) {
                        Some(Some(y)) => Ok(*y),
                        Some(None) => bail!("record {id:?} has no label in the truth file"),
                        None => bail!("no truth record for set {id:?}"),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let metrics = compute_metrics(&sets, &truths)?;
            write_out(&out, MetricsReport::new(metrics).to_json()?)
        }
        Command::Sweep {
            data,
            trials,
            alphas,
            methods,
            ts,
            seed,
            out,
            split,
            stratified,
            baseline,
            sets,
            search,
        } => {
            let records = read_records(&data)?;
            let split = match split {
                Some(text) => parse_split(&text, seed, stratified)?,
                None => SplitSpec {
                    stratified,
                    ..SplitSpec::proportional(records.len(), seed)?
                },
            };
            let ts_modes = match ts {
                TsArg::Off => vec![TsMode::Off],
                TsArg::On => vec![TsMode::On],
                TsArg::Both => vec![TsMode::Off, TsMode::On],
            };
            let config = SweepConfig {
                data: data_label(&data),
                split,
                n_trials: trials,
                alphas,
                methods: methods.into_iter().map(|m| sets.method(m)).collect(),
                ts_modes,
                temperature_search: search.search(),
                baseline,
            };
            let report = run_sweep(&records, &config)?;
            write_out(&out, io::report_to_json(&report)?)
        }
        Command::Report { input, format } => {
            let reports = input
                .iter()
                .map(|p| {
                    io::report_from_json(&read_text(p)?)
                        .with_context(|| format!("loading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let text = match format {
                ReportFormat::Table => render_report(&reports),
                ReportFormat::Raw => render_raw(&reports),
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
