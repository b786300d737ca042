//! File formats.
//!
//! * Logits: JSON Lines, one record per line:
//!   `{"id":"x1","logits":[1.2,-0.3,0.8],"label":2,"split":"cal"}`.
//!   `label` (1-based) and `split` are optional.
//! * Prediction sets: JSON Lines,
//!   `{"id":"x1","labels":[1,3],"scores":[...],"set_size":2}`.
//! * Calibrator, temperature fit, metrics and sweep reports: single JSON
//!   documents carrying `format_version`. Readers reject other major versions.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::conformal::{Calibrator, PredictionSet};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentReport, Metrics};
use crate::prob::{Logits, Temperature};
use crate::record::{LogitRecord, SplitTag};
use crate::scores::ScoreMethod;
use crate::temperature::TemperatureFit;

pub const FORMAT_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u32 = 1;

pub fn check_version(found: &str) -> Result<()> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major == Some(SUPPORTED_MAJOR) {
        Ok(())
    } else {
        Err(Error::Version {
            found: found.to_string(),
            supported: SUPPORTED_MAJOR,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogitLine {
    id: String,
    logits: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitTag>,
}

fn parse_err(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

fn schema_at(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Schema(format!("line {line}: {message}"))
}

/// Reads line-delimited logit records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_logits<R: Read>(reader: R) -> Result<Vec<LogitRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut classes = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: LogitLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        let logits = Logits::new(raw.logits).map_err(|e| parse_err(lineno, e))?;
        let c = logits.class_count();
        match classes {
            None => classes = Some(c),
            Some(expected) if expected != c => {
                return Err(schema_at(
                    lineno,
                    format!(
                        "record {:?} has {c} logits, earlier records have {expected}",
                        raw.id
                    ),
                ))
            }
            Some(_) => {}
        }
        let label = match raw.label {
            None => None,
            Some(l) if (1..=c).contains(&l) => Some(l - 1),
            Some(l) => {
                return Err(schema_at(lineno, format!("label {l} outside 1..={c}")));
            }
        };
        if !ids.insert(raw.id.clone()) {
            return Err(schema_at(lineno, format!("duplicate id {:?}", raw.id)));
        }
        records.push(LogitRecord {
            id: raw.id,
            logits,
            label,
            split: raw.split,
        });
    }
    Ok(records)
}

pub fn read_logits(path: impl AsRef<Path>) -> Result<Vec<LogitRecord>> {
    parse_logits(File::open(path)?)
}

pub fn write_logits<W: Write>(writer: W, records: &[LogitRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for r in records {
        let line = LogitLine {
            id: r.id.clone(),
            logits: r.logits.as_slice().to_vec(),
            label: r.label.map(|l| l + 1),
            split: r.split,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes `+∞` as the string `"+inf"`, finite values as numbers.
mod threshold {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            Repr::Text("+inf".into()).serialize(s)
        } else {
            Repr::Finite(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Text(t) if t == "+inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CalibratorDoc {
    format_version: String,
    method: ScoreMethod,
    alpha: f64,
    temperature: Option<Temperature>,
    temperature_fit: Option<TemperatureFit>,
    #[serde(with = "threshold")]
    q_hat: f64,
    n_cal: usize,
    class_count: usize,
}

/// Versioned JSON for a calibrator, including any fitted temperature.
pub fn calibrator_to_json(cal: &Calibrator) -> Result<String> {
    let doc = CalibratorDoc {
        format_version: FORMAT_VERSION.into(),
        method: cal.method,
        alpha: cal.alpha,
        temperature: cal.temperature,
        temperature_fit: cal.temperature_fit,
        q_hat: cal.q_hat,
        n_cal: cal.n_cal,
        class_count: cal.class_count,
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn calibrator_from_json(text: &str) -> Result<Calibrator> {
    let doc: CalibratorDoc = versioned(text)?;
    crate::conformal::validate_alpha(doc.alpha)?;
    doc.method.score.validate(doc.class_count)?;
    if doc.n_cal == 0 || doc.class_count < 2 {
        return Err(Error::schema(
            "calibrator needs n_cal >= 1 and at least 2 classes",
        ));
    }
    Ok(Calibrator {
        method: doc.method,
        alpha: doc.alpha,
        temperature: doc.temperature,
        temperature_fit: doc.temperature_fit,
        q_hat: doc.q_hat,
        n_cal: doc.n_cal,
        class_count: doc.class_count,
    })
}

/// Checks `format_version` before decoding the full document.
fn versioned<T: DeserializeOwned>(text: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Probe {
        format_version: String,
    }
    let probe: Probe = serde_json::from_str(text)?;
    check_version(&probe.format_version)?;
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureReport {
    pub format_version: String,
    pub n: usize,
    pub fit: TemperatureFit,
}

impl TemperatureReport {
    pub fn new(n: usize, fit: TemperatureFit) -> Self {
        TemperatureReport {
            format_version: FORMAT_VERSION.into(),
            n,
            fit,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        versioned(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl MetricsReport {
    pub fn new(metrics: Metrics) -> Self {
        MetricsReport {
            format_version: FORMAT_VERSION.into(),
            metrics,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        versioned(text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetLine {
    id: String,
    labels: Vec<usize>,
    scores: Vec<f64>,
    set_size: usize,
}

pub fn write_sets<W: Write>(writer: W, sets: &[PredictionSet]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for s in sets {
        let line = SetLine {
            id: s.id.clone().unwrap_or_default(),
            labels: s.labels.iter().map(|l| l + 1).collect(),
            scores: s.scores.clone(),
            set_size: s.set_size(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_sets<R: Read>(reader: R) -> Result<Vec<PredictionSet>> {
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: SetLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e))?;
        if raw.set_size != raw.labels.len() {
            return Err(schema_at(lineno, "set_size does not match the label count"));
        }
        let c = raw.scores.len();
        if raw.labels.iter().any(|&l| l == 0 || (c > 0 && l > c)) {
            return Err(schema_at(lineno, format!("label outside 1..={c}")));
        }
        if raw.labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(schema_at(lineno, "labels must be strictly ascending"));
        }
        sets.push(PredictionSet {
            id: Some(raw.id),
            labels: raw.labels.into_iter().map(|l| l - 1).collect(),
            scores: raw.scores,
        });
    }
    Ok(sets)
}

pub fn read_sets(path: impl AsRef<Path>) -> Result<Vec<PredictionSet>> {
    parse_sets(File::open(path)?)
}

pub fn report_to_json(report: &ExperimentReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

pub fn report_from_json(text: &str) -> Result<ExperimentReport> {
    versioned(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_valid_lines() {
        let text = r#"{"id":"a","logits":[0.1,0.2,0.3],"label":1}
{"id":"b","logits":[1,2,3],"split":"test"}

{"id":"c","logits":[-1,0,1],"label":3,"split":"cal"}
"#;
        let recs = parse_logits(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].label, Some(0));
        assert_eq!(recs[1].label, None);
        assert_eq!(recs[1].split, Some(SplitTag::Test));
        assert_eq!(recs[2].label, Some(2));
    }

    #[test]
    fn class_count_mismatch_names_the_line() {
        let mut text = String::new();
        for i in 0..3 {
            text += &format!("{{\"id\":\"r{i}\",\"logits\":[0,0,0,0,0,0,0]}}\n");
        }
        text += "{\"id\":\"bad\",\"logits\":[0,0,0,0,0,0]}\n";
        match parse_logits(text.as_bytes()) {
            Err(Error::Schema(m)) => assert!(m.contains("line 4"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_lines() {
        let cases = [
            (
                "{\"id\":\"a\",\"logits\":[0,1]}\n{\"id\":\"a\",\"logits\":[0,1]}",
                "schema",
            ),
            ("{\"id\":\"a\",\"logits\":[0,1],\"label\":0}", "schema"),
            ("{\"id\":\"a\",\"logits\":[0,1],\"label\":3}", "schema"),
            ("{\"id\":\"a\",\"logits\":[0]}", "parse"),
            ("{\"id\":\"a\",\"logits\":[0, 1]\n", "parse"),
            ("not json", "parse"),
            ("{\"id\":\"a\",\"logits\":[0,1],\"extra\":1}", "parse"),
        ];
        for (text, kind) in cases {
            let err = parse_logits(text.as_bytes()).unwrap_err();
            match (kind, &err) {
                ("schema", Error::Schema(_)) | ("parse", Error::Parse { line: 1, .. }) => {}
                _ => panic!("{text:?} gave {err:?}"),
            }
        }
    }

    #[test]
    fn version_check() {
        assert!(check_version("1.0").is_ok());
        assert!(check_version("1.7").is_ok());
        assert!(matches!(check_version("2.0"), Err(Error::Version { .. })));
        assert!(check_version("x").is_err());
    }

    #[test]
    fn calibrator_round_trip_with_infinite_threshold() {
        let cal = Calibrator {
            method: ScoreMethod::raps(0.01, 2),
            alpha: 0.1,
            temperature: Some(Temperature::new(1.5).unwrap()),
            temperature_fit: None,
            q_hat: f64::INFINITY,
            n_cal: 5,
            class_count: 7,
        };
        let text = calibrator_to_json(&cal).unwrap();
        assert!(text.contains("\"+inf\""));
        assert_eq!(calibrator_from_json(&text).unwrap(), cal);

        let bumped = text.replace("\"1.0\"", "\"2.0\"");
        assert!(matches!(
            calibrator_from_json(&bumped),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn sets_round_trip() {
        let sets = vec![
            PredictionSet {
                id: Some("a".into()),
                labels: vec![0, 2],
                scores: vec![0.1, 0.9, 0.3],
            },
            PredictionSet {
                id: Some("b".into()),
                labels: vec![],
                scores: vec![0.5, 0.5, 0.5],
            },
        ];
        let mut buf = Vec::new();
        write_sets(&mut buf, &sets).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("{\"id\":\"a\",\"labels\":[1,3]"));
        assert_eq!(parse_sets(text.as_bytes()).unwrap(), sets);
    }
}
