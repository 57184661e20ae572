use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{IrEvent, ParticipantId, StudyConfig, SurveyResponse};
use crate::network::EgoWindow;

/// Corpus-level counts reported after ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_participants: usize,
    pub n_surveys: usize,
    pub n_ir_hits: usize,
    /// Distinct (ego, alter, window) triples.
    pub n_transient_edges: usize,
    /// (participant, study day) pairs without any survey.
    pub n_absences: usize,
}

pub fn corpus_stats(events: &[IrEvent], surveys: &[SurveyResponse], windows: &[EgoWindow], config: &StudyConfig) -> CorpusStats {
    let mut people: BTreeSet<&ParticipantId> = BTreeSet::new();
    let mut present: BTreeSet<(&ParticipantId, u32)> = BTreeSet::new();
    for s in surveys {
        people.insert(&s.participant);
        present.insert((&s.participant, s.day));
    }
    for e in events {
        people.insert(&e.ego);
        people.insert(&e.alter);
    }
    let n_absences = if surveys.is_empty() { 0 } else { people.len() * config.calendar.n_days as usize - present.len() };
    CorpusStats {
        n_participants: people.len(),
        n_surveys: surveys.len(),
        n_ir_hits: events.len(),
        n_transient_edges: windows.iter().map(|w| w.contacts.len()).sum(),
        n_absences,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_is_all_zero() {
        assert_eq!(corpus_stats(&[], &[], &[], &StudyConfig::default()), CorpusStats::default());
    }
}
