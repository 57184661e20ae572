use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::records::{check_quality, format_instant, parse_instant, read_rows, Reject, RejectReason};
use super::{DataError, ParticipantId, StudyConfig};

pub const IR_HEADER: [&str; 3] = ["ego_id", "alter_id", "timestamp_utc"];

/// One directed infrared detection: the ego's badge saw the alter's badge.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IrEvent {
    pub timestamp: DateTime<Utc>,
    pub ego: ParticipantId,
    pub alter: ParticipantId,
}

#[derive(Debug, Clone, Default)]
pub struct IrParse {
    /// Accepted events sorted by timestamp, then ego, then alter.
    pub events: Vec<IrEvent>,
    pub rejects: Vec<Reject>,
    pub total_rows: usize,
}

pub fn parse_ir_log<R: Read>(source: R, config: &StudyConfig) -> Result<IrParse, DataError> {
    let rows = read_rows(source, &IR_HEADER)?;
    let total_rows = rows.len();
    let mut events = Vec::with_capacity(total_rows);
    let mut rejects = Vec::new();
    let mut malformed = 0;
    for row in rows {
        let reject = |reason| Reject { source: "ir_log".into(), line: row.line, raw: row.raw.clone(), reason };
        let fields = match row.fields {
            Ok(f) => f,
            Err(why) => {
                malformed += 1;
                rejects.push(reject(RejectReason::Malformed(why)));
                continue;
            }
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            malformed += 1;
            rejects.push(reject(RejectReason::Malformed("empty participant id".into())));
            continue;
        }
        let timestamp = match parse_instant(&fields[2]) {
            Ok(t) => t,
            Err(why) => {
                malformed += 1;
                rejects.push(reject(RejectReason::Malformed(why)));
                continue;
            }
        };
        if fields[0] == fields[1] {
            rejects.push(reject(RejectReason::SelfContact));
            continue;
        }
        if !config.calendar.contains(timestamp) {
            rejects.push(reject(RejectReason::OutsideCalendar));
            continue;
        }
        events.push(IrEvent { timestamp, ego: ParticipantId::new(&fields[0]), alter: ParticipantId::new(&fields[1]) });
    }
    check_quality(malformed, total_rows, config.malformed_row_limit)?;
    events.sort();
    Ok(IrParse { events, rejects, total_rows })
}

pub fn write_ir_log<W: Write>(events: &[IrEvent], out: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "{}", IR_HEADER.join(","))?;
    for e in events {
        writeln!(w, "{},{},{}", e.ego, e.alter, format_instant(e.timestamp))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<IrParse, DataError> {
        parse_ir_log(text.as_bytes(), &StudyConfig::default())
    }

    #[test]
    fn empty_file_with_header() {
        let p = parse("ego_id,alter_id,timestamp_utc\n").unwrap();
        assert!(p.events.is_empty() && p.rejects.is_empty());
    }

    #[test]
    fn single_row_echoes() {
        let p = parse("ego_id,alter_id,timestamp_utc\np01,p02,2012-03-05T11:42:10Z\n").unwrap();
        assert_eq!(p.events.len(), 1);
        assert_eq!(p.events[0].ego.as_str(), "p01");
        assert_eq!(p.events[0].alter.as_str(), "p02");
    }

    #[test]
    fn self_contact_goes_to_rejects() {
        let p = parse("ego_id,alter_id,timestamp_utc\np01,p01,2012-03-05T11:42:10Z\n").unwrap();
        assert!(p.events.is_empty());
        assert_eq!(p.rejects.len(), 1);
        assert_eq!(p.rejects[0].reason, RejectReason::SelfContact);
    }

    #[test]
    fn outside_calendar_rejected() {
        let p = parse("ego_id,alter_id,timestamp_utc\np01,p02,2011-03-05T11:42:10Z\n").unwrap();
        assert_eq!(p.rejects[0].reason, RejectReason::OutsideCalendar);
    }

    #[test]
    fn too_many_malformed_rows_abort() {
        let mut text = String::from("ego_id,alter_id,timestamp_utc\n");
        for _ in 0..8 {
            text.push_str("p01,p02,2012-03-05T11:42:10Z\n");
        }
        text.push_str("p01,p02,yesterday\np01,p02\n");
        assert!(matches!(parse(&text), Err(DataError::CorpusQuality { malformed: 2, total: 10, .. })));
    }

    #[test]
    fn header_mismatch() {
        assert!(matches!(parse("ego,alter,ts\n"), Err(DataError::HeaderMismatch { .. })));
    }

    #[test]
    fn jsonl_input() {
        let p = parse("{\"ego_id\":\"p01\",\"alter_id\":\"p02\",\"timestamp_utc\":\"2012-03-05T11:42:10Z\"}\n").unwrap();
        assert_eq!(p.events.len(), 1);
    }
}
