//! Row-level reading shared by the three corpus parsers.
//!
//! Every parser accepts either the documented CSV layout or line-delimited
//! JSON objects carrying the same field names.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::DataError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum RejectReason {
    Malformed(String),
    SelfContact,
    OutsideCalendar,
    OutsideResponseWindow,
    DuplicateSubmission,
    DuplicateItem,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(why) => write!(f, "malformed: {why}"),
            RejectReason::SelfContact => f.write_str("ego equals alter"),
            RejectReason::OutsideCalendar => f.write_str("outside study calendar"),
            RejectReason::OutsideResponseWindow => f.write_str("submitted outside response window"),
            RejectReason::DuplicateSubmission => f.write_str("later duplicate submission"),
            RejectReason::DuplicateItem => f.write_str("item repeated within a submission"),
        }
    }
}

/// An input row that was not accepted, kept for the rejects sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub source: String,
    pub line: usize,
    pub raw: String,
    pub reason: RejectReason,
}

pub(crate) struct RawRow {
    pub line: usize,
    pub raw: String,
    pub fields: Result<Vec<String>, String>,
}

pub(crate) fn read_rows<R: Read>(mut source: R, header: &[&str]) -> Result<Vec<RawRow>, DataError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    match first {
        None => Ok(Vec::new()),
        Some(l) if l.starts_with('{') => Ok(read_jsonl(&text, header)),
        Some(_) => read_csv(&text, header),
    }
}

fn read_csv(text: &str, header: &[&str]) -> Result<Vec<RawRow>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).comment(Some(b'#')).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut seen_header = false;
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                rows.push(RawRow { line, raw: String::new(), fields: Err(e.to_string()) });
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        if !seen_header {
            seen_header = true;
            if fields.iter().map(String::as_str).ne(header.iter().copied()) {
                return Err(DataError::HeaderMismatch { expected: header.join(","), found: fields.join(",") });
            }
            continue;
        }
        let raw = fields.join(",");
        let fields = if fields.len() == header.len() {
            Ok(fields)
        } else {
            Err(format!("expected {} fields, found {}", header.len(), fields.len()))
        };
        rows.push(RawRow { line, raw, fields });
    }
    Ok(rows)
}

fn read_jsonl(text: &str, header: &[&str]) -> Vec<RawRow> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(trimmed)
            .map_err(|e| e.to_string())
            .and_then(|obj| {
                header
                    .iter()
                    .map(|key| match obj.get(*key) {
                        Some(serde_json::Value::String(s)) => Ok(s.trim().to_string()),
                        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                        Some(other) => Err(format!("field `{key}` has unsupported value {other}")),
                        None => Err(format!("missing field `{key}`")),
                    })
                    .collect()
            });
        rows.push(RawRow { line: i + 1, raw: trimmed.to_string(), fields });
    }
    rows
}

/// Aborts when too many rows could not even be parsed.
pub(crate) fn check_quality(malformed: usize, total: usize, limit: f64) -> Result<(), DataError> {
    if total > 0 && malformed as f64 > limit * total as f64 {
        return Err(DataError::CorpusQuality { malformed, total, limit: limit * 100.0 });
    }
    Ok(())
}

pub(crate) fn parse_instant(s: &str) -> Result<chrono::DateTime<chrono::Utc>, String> {
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&chrono::Utc))
        .map_err(|e| format!("bad timestamp {s:?}: {e}"))
}

pub(crate) fn format_instant(ts: chrono::DateTime<chrono::Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}
