//! Canonical domain types, file parsing and corpus statistics.

mod config;
mod corpus;
mod ir;
mod records;
mod survey;
mod traits;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{ConfigError, ItemSpec, ScoringRule, SdKind, StateDef, StudyCalendar, StudyConfig};
pub use corpus::{corpus_stats, CorpusStats};
pub use ir::{parse_ir_log, write_ir_log, IrEvent, IrParse};
pub use records::{Reject, RejectReason};
pub use survey::{parse_surveys, write_surveys, SurveyParse, SurveyResponse};
pub use traits::{parse_traits, write_traits, TraitParse, TraitSurvey, Wave};

/// Participant identifier as it appears in the input files.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticipantId(Arc<str>);

impl ParticipantId {
    pub fn new(id: &str) -> Self {
        ParticipantId(Arc::from(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl From<&str> for ParticipantId {
    fn from(s: &str) -> Self {
        ParticipantId::new(s)
    }
}

/// Ordinal level of a state: low, neutral, high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L,
    N,
    H,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L, Level::N, Level::H];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Level> {
        Level::ALL.get(i).copied()
    }

    /// Mirror image under L <-> H.
    pub fn mirrored(self) -> Level {
        match self {
            Level::L => Level::H,
            Level::N => Level::N,
            Level::H => Level::L,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::L => "L",
            Level::N => "N",
            Level::H => "H",
        })
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L" | "l" => Ok(Level::L),
            "N" | "n" => Ok(Level::N),
            "H" | "h" => Ok(Level::H),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

/// Experience-sampling slot of the day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Morning,
    Midday,
    Afternoon,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Morning, Period::Midday, Period::Afternoon];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Period::Morning => "morning",
            Period::Midday => "midday",
            Period::Afternoon => "afternoon",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Period {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "morning" => Ok(Period::Morning),
            "midday" => Ok(Period::Midday),
            "afternoon" => Ok(Period::Afternoon),
            other => Err(format!("unknown period {other:?}")),
        }
    }
}

/// The interval between two consecutive surveys of the same day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slot {
    MorningToMidday,
    MiddayToAfternoon,
}

impl Slot {
    pub const ALL: [Slot; 2] = [Slot::MorningToMidday, Slot::MiddayToAfternoon];

    pub fn start(self) -> Period {
        match self {
            Slot::MorningToMidday => Period::Morning,
            Slot::MiddayToAfternoon => Period::Midday,
        }
    }

    pub fn end(self) -> Period {
        match self {
            Slot::MorningToMidday => Period::Midday,
            Slot::MiddayToAfternoon => Period::Afternoon,
        }
    }

    /// Diurnal control: 0 for midday-targeted, 1 for afternoon-targeted.
    pub fn period_dummy(self) -> f64 {
        match self {
            Slot::MorningToMidday => 0.0,
            Slot::MiddayToAfternoon => 1.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::MorningToMidday => "morning_midday",
            Slot::MiddayToAfternoon => "midday_afternoon",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "morning_midday" => Ok(Slot::MorningToMidday),
            "midday_afternoon" => Ok(Slot::MiddayToAfternoon),
            other => Err(format!("unknown slot {other:?}")),
        }
    }
}

/// Errors raised while reading corpus files.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read source: {0}")]
    Io(#[from] std::io::Error),
    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("corpus quality: {malformed} of {total} rows malformed (limit {limit:.0}%)")]
    CorpusQuality { malformed: usize, total: usize, limit: f64 },
    #[error("line {line}: unknown item code `{code}`")]
    UnknownItem { line: usize, code: String },
    #[error("line {line}: item `{code}` value {value} outside scale [{min}, {max}]")]
    OutOfRange { line: usize, code: String, value: f64, min: f64, max: f64 },
    #[error("participant {participant}: begin-wave trait `{name}` missing")]
    MissingTrait { participant: ParticipantId, name: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_bounds_and_dummy() {
        assert_eq!(Slot::MorningToMidday.start(), Period::Morning);
        assert_eq!(Slot::MiddayToAfternoon.end(), Period::Afternoon);
        assert_eq!(Slot::MorningToMidday.period_dummy(), 0.0);
        assert_eq!(Slot::MiddayToAfternoon.period_dummy(), 1.0);
    }

    #[test]
    fn level_round_trip_and_order() {
        for l in Level::ALL {
            assert_eq!(l.to_string().parse::<Level>().unwrap(), l);
            assert_eq!(l.mirrored().mirrored(), l);
        }
        assert!(Level::L < Level::N && Level::N < Level::H);
    }
}
