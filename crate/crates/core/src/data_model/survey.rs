use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::records::{check_quality, format_instant, parse_instant, read_rows, Reject, RejectReason};
use super::{DataError, ParticipantId, Period, StudyConfig};

pub const SURVEY_HEADER: [&str; 6] = ["participant_id", "day", "period", "submitted_at_utc", "item_code", "value"];

/// One participant's answers for one (day, period) sampling slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub participant: ParticipantId,
    pub day: u32,
    pub period: Period,
    pub submitted_at: DateTime<Utc>,
    pub items: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SurveyParse {
    /// At most one response per (participant, day, period), sorted by that key.
    pub responses: Vec<SurveyResponse>,
    pub rejects: Vec<Reject>,
    pub total_rows: usize,
}

struct ItemRow {
    line: usize,
    raw: String,
    code: String,
    value: f64,
}

type Submissions = BTreeMap<DateTime<Utc>, Vec<ItemRow>>;

pub fn parse_surveys<R: Read>(source: R, config: &StudyConfig) -> Result<SurveyParse, DataError> {
    let rows = read_rows(source, &SURVEY_HEADER)?;
    let total_rows = rows.len();
    let mut rejects = Vec::new();
    let mut malformed = 0;
    let mut grouped: BTreeMap<(ParticipantId, u32, Period), Submissions> = BTreeMap::new();

    let reject = |line: usize, raw: &str, reason| Reject { source: "surveys".into(), line, raw: raw.to_string(), reason };

    for row in rows {
        let fields = match row.fields {
            Ok(f) => f,
            Err(why) => {
                malformed += 1;
                rejects.push(reject(row.line, &row.raw, RejectReason::Malformed(why)));
                continue;
            }
        };
        let parsed = (|| -> Result<_, String> {
            if fields[0].is_empty() {
                return Err("empty participant id".into());
            }
            let day: u32 = fields[1].parse().map_err(|_| format!("bad day {:?}", fields[1]))?;
            let period: Period = fields[2].parse()?;
            let submitted = parse_instant(&fields[3])?;
            let value: f64 = fields[5].parse().map_err(|_| format!("bad value {:?}", fields[5]))?;
            if !value.is_finite() {
                return Err(format!("non-finite value {:?}", fields[5]));
            }
            Ok((day, period, submitted, value))
        })();
        let (day, period, submitted, value) = match parsed {
            Ok(v) => v,
            Err(why) => {
                malformed += 1;
                rejects.push(reject(row.line, &row.raw, RejectReason::Malformed(why)));
                continue;
            }
        };
        let code = fields[4].clone();
        let spec = config.item(&code).ok_or_else(|| DataError::UnknownItem { line: row.line, code: code.clone() })?;
        if value < spec.min || value > spec.max {
            return Err(DataError::OutOfRange { line: row.line, code, value, min: spec.min, max: spec.max });
        }
        if day == 0 || day > config.calendar.n_days {
            rejects.push(reject(row.line, &row.raw, RejectReason::OutsideCalendar));
            continue;
        }
        grouped.entry((ParticipantId::new(&fields[0]), day, period)).or_default().entry(submitted).or_default().push(ItemRow {
            line: row.line,
            raw: row.raw,
            code,
            value,
        });
    }
    check_quality(malformed, total_rows, config.malformed_row_limit)?;

    let window = config.response_window();
    let mut responses = Vec::with_capacity(grouped.len());
    for ((participant, day, period), submissions) in grouped {
        let trigger = config.trigger_instant(day, period);
        let mut kept: Option<(DateTime<Utc>, BTreeMap<String, f64>)> = None;
        // submissions iterate in submission-time order, so the first in-window one is the earliest
        for (submitted, mut items) in submissions {
            let in_window = trigger.is_some_and(|t| submitted >= t && submitted <= t + window);
            if !in_window {
                rejects.extend(items.into_iter().map(|r| reject(r.line, &r.raw, RejectReason::OutsideResponseWindow)));
                continue;
            }
            if kept.is_some() {
                log::warn!("duplicate survey for {participant} day {day} {period}; keeping the earliest");
                rejects.extend(items.into_iter().map(|r| reject(r.line, &r.raw, RejectReason::DuplicateSubmission)));
                continue;
            }
            items.sort_by_key(|r| r.line);
            let mut answers = BTreeMap::new();
            for r in items {
                if let std::collections::btree_map::Entry::Vacant(e) = answers.entry(r.code) {
                    e.insert(r.value);
                } else {
                    rejects.push(reject(r.line, &r.raw, RejectReason::DuplicateItem));
                }
            }
            kept = Some((submitted, answers));
        }
        if let Some((submitted_at, items)) = kept {
            responses.push(SurveyResponse { participant, day, period, submitted_at, items });
        }
    }
    rejects.sort_by_key(|r| r.line);
    Ok(SurveyParse { responses, rejects, total_rows })
}

pub fn write_surveys<W: Write>(responses: &[SurveyResponse], out: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "{}", SURVEY_HEADER.join(","))?;
    for r in responses {
        let ts = format_instant(r.submitted_at);
        for (code, value) in &r.items {
            writeln!(w, "{},{},{},{},{},{}", r.participant, r.day, r.period, ts, code, value)?;
        }
    }
    w.flush()
}
