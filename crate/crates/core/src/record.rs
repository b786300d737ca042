use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::Logits;

/// Split tag carried through from upstream exports. Informational only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Cal,
    Test,
}

/// One example: identifier, raw logits and (optionally) its true class.
///
/// `label` is 0-based here; the line format stores it 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub id: String,
    pub logits: Logits,
    pub label: Option<usize>,
    pub split: Option<SplitTag>,
}

impl LogitRecord {
    pub fn new(id: impl Into<String>, logits: Logits) -> Self {
        LogitRecord {
            id: id.into(),
            logits,
            label: None,
            split: None,
        }
    }

    pub fn labeled(id: impl Into<String>, logits: Logits, label: usize) -> Self {
        LogitRecord {
            label: Some(label),
            ..LogitRecord::new(id, logits)
        }
    }

    pub fn class_count(&self) -> usize {
        self.logits.class_count()
    }

    pub fn require_label(&self) -> Result<usize> {
        let y = self
            .label
            .ok_or_else(|| Error::input(format!("record {:?} has no label", self.id)))?;
        if y >= self.class_count() {
            return Err(Error::label(y, self.class_count()));
        }
        Ok(y)
    }
}

/// Common class count of a non-empty record set.
pub fn common_class_count(records: &[LogitRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::input("no records"))?
        .class_count();
    if let Some(r) = records.iter().find(|r| r.class_count() != first) {
        return Err(Error::schema(format!(
            "record {:?} has {} classes, expected {first}",
            r.id,
            r.class_count()
        )));
    }
    Ok(first)
}

/// Borrowed `(logits, label)` pairs for every record; all must be labeled.
pub fn labeled_pairs(records: &[LogitRecord]) -> Result<Vec<(&Logits, usize)>> {
    records
        .iter()
        .map(|r| Ok((&r.logits, r.require_label()?)))
        .collect()
}
