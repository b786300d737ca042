//! Plain-text tables of sweep reports: one row per (data source, α), one
//! column pair per method (without / with temperature scaling).

use std::fmt::Write;

use crate::experiment::{Cell, ExperimentReport, TsMode};
use crate::scores::ScoreMethod;
use crate::stats::Summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Coverage,
    SetSize,
}

impl Metric {
    fn title(self) -> &'static str {
        match self {
            Metric::Coverage => "Empirical coverage (mean ± std over trials)",
            Metric::SetSize => "Average prediction set size (mean ± std over trials)",
        }
    }

    fn pick(self, cell: &Cell) -> &Summary {
        match self {
            Metric::Coverage => &cell.coverage,
            Metric::SetSize => &cell.set_size,
        }
    }
}

fn unique_methods(reports: &[ExperimentReport]) -> Vec<ScoreMethod> {
    let mut out: Vec<ScoreMethod> = Vec::new();
    for r in reports {
        for m in &r.config.methods {
            if !out.contains(m) {
                out.push(*m);
            }
        }
    }
    out
}

/// Renders one metric across reports.
pub fn render_table(reports: &[ExperimentReport], metric: Metric) -> String {
    let methods = unique_methods(reports);
    let mut header = vec!["Data".to_string(), "alpha".to_string()];
    for m in &methods {
        header.push(m.label());
        header.push(format!("{}+TS", m.label()));
    }
    let mut rows = vec![header];
    for r in reports {
        for &alpha in &r.config.alphas {
            let mut row = vec![r.config.data.clone(), format!("{alpha}")];
            for m in &methods {
                for mode in [TsMode::Off, TsMode::On] {
                    row.push(match r.cell(m, alpha, mode) {
                        Some(c) => {
                            let s = metric.pick(c);
                            format!("{:.2}±{:.2}", s.mean, s.std)
                        }
                        None => "-".to_string(),
                    });
                }
            }
            rows.push(row);
        }
    }

    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    writeln!(out, "{}", metric.title()).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}", w = *w))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        if i == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (ncol - 1);
            writeln!(out, "{}", "-".repeat(rule)).unwrap();
        }
    }
    out
}

/// Both tables plus the fitted-temperature summary, if any.
pub fn render_report(reports: &[ExperimentReport]) -> String {
    let mut out = render_table(reports, Metric::Coverage);
    out.push('\n');
    out.push_str(&render_table(reports, Metric::SetSize));
    for r in reports {
        if let Some(t) = &r.temperatures {
            let s = Summary::of(&t.samples);
            write!(
                out,
                "\nFitted temperature [{}]: mean {:.3}, min {:.3}, median {:.3}, max {:.3} over {} trials\n",
                r.config.data, s.mean, s.min, s.median, s.max, s.n
            )
            .unwrap();
        }
        if !r.baseline.is_empty() {
            for b in &r.baseline {
                writeln!(
                    out,
                    "Random-set baseline [{}] alpha={}: size {}, coverage {:.2}±{:.2}",
                    r.config.data, b.alpha, b.set_size, b.coverage.mean, b.coverage.std
                )
                .unwrap();
            }
        }
    }
    out
}

/// Tab-separated per-trial rows: data, method, alpha, ts, trial, coverage,
/// set size, empty sets, fitted T.
pub fn render_raw(reports: &[ExperimentReport]) -> String {
    let mut out = String::from(
        "data\tmethod\talpha\tts\ttrial\tcoverage\tavg_set_size\tempty_sets\tfitted_t\n",
    );
    for r in reports {
        let fitted = r.temperatures.as_ref().map(|t| t.samples.as_slice());
        for cell in &r.cells {
            for t in cell.trial_results(fitted) {
                let ts = match t.ts_mode {
                    TsMode::Off => "off",
                    TsMode::On => "on",
                };
                let ft = t
                    .fitted_t
                    .map_or_else(|| "-".to_string(), |v| format!("{v}"));
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.config.data,
                    cell.method.label(),
                    t.alpha,
                    ts,
                    t.trial,
                    t.coverage,
                    t.avg_set_size,
                    t.empty_set_count,
                    ft
                )
                .unwrap();
            }
        }
    }
    out
}
