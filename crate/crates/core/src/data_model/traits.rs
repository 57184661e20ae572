use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::records::{check_quality, read_rows, Reject, RejectReason};
use super::{DataError, ParticipantId, StudyConfig};

pub const TRAIT_HEADER: [&str; 4] = ["participant_id", "wave", "trait", "raw_score"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Begin,
    End,
}

impl fmt::Display for Wave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wave::Begin => "begin",
            Wave::End => "end",
        })
    }
}

impl FromStr for Wave {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "begin" => Ok(Wave::Begin),
            "end" => Ok(Wave::End),
            other => Err(format!("unknown wave {other:?}")),
        }
    }
}

/// Dispositional questionnaire scores of one participant at one wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitSurvey {
    pub participant: ParticipantId,
    pub wave: Wave,
    pub raw_trait_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TraitParse {
    pub surveys: Vec<TraitSurvey>,
    pub rejects: Vec<Reject>,
    pub total_rows: usize,
}

pub fn parse_traits<R: Read>(source: R, config: &StudyConfig) -> Result<TraitParse, DataError> {
    let rows = read_rows(source, &TRAIT_HEADER)?;
    let total_rows = rows.len();
    let mut rejects = Vec::new();
    let mut malformed = 0;
    let mut grouped: BTreeMap<(ParticipantId, Wave), BTreeMap<String, f64>> = BTreeMap::new();
    for row in rows {
        let parsed = row.fields.and_then(|f| {
            if f[0].is_empty() || f[2].is_empty() {
                return Err("empty participant or trait".to_string());
            }
            let wave: Wave = f[1].parse()?;
            let score: f64 = f[3].parse().map_err(|_| format!("bad score {:?}", f[3]))?;
            if !score.is_finite() {
                return Err(format!("non-finite score {:?}", f[3]));
            }
            Ok((ParticipantId::new(&f[0]), wave, f[2].clone(), score))
        });
        match parsed {
            Ok((pid, wave, name, score)) => {
                let entry = grouped.entry((pid, wave)).or_default();
                if let std::collections::btree_map::Entry::Vacant(e) = entry.entry(name) {
                    e.insert(score);
                } else {
                    rejects.push(Reject {
                        source: "traits".into(),
                        line: row.line,
                        raw: row.raw,
                        reason: RejectReason::DuplicateItem,
                    });
                }
            }
            Err(why) => {
                malformed += 1;
                rejects.push(Reject {
                    source: "traits".into(),
                    line: row.line,
                    raw: row.raw,
                    reason: RejectReason::Malformed(why),
                });
            }
        }
    }
    check_quality(malformed, total_rows, config.malformed_row_limit)?;
    let mut surveys = Vec::with_capacity(grouped.len());
    for ((participant, wave), raw_trait_scores) in grouped {
        if wave == Wave::Begin {
            if let Some(missing) = config.traits.iter().find(|t| !raw_trait_scores.contains_key(*t)) {
                return Err(DataError::MissingTrait { participant, name: missing.clone() });
            }
        }
        surveys.push(TraitSurvey { participant, wave, raw_trait_scores });
    }
    Ok(TraitParse { surveys, rejects, total_rows })
}

pub fn write_traits<W: Write>(surveys: &[TraitSurvey], out: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "{}", TRAIT_HEADER.join(","))?;
    for s in surveys {
        for (name, score) in &s.raw_trait_scores {
            writeln!(w, "{},{},{},{}", s.participant, s.wave, name, score)?;
        }
    }
    w.flush()
}
