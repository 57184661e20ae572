//! State scores, tertile levels and standardized traits.
//!
//! Per-survey state scores are median-centered per state and cut at the
//! 33rd and 66th percentiles (linear interpolation between order
//! statistics). Ties at a cut go to the lower level.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data_model::{
    ItemSpec, Level, ParticipantId, Period, ScoringRule, SdKind, StateDef, StudyConfig, SurveyResponse, TraitSurvey, Wave,
};
use crate::stats;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("state `{state}` has a degenerate distribution (all scores equal {value})")]
    DegenerateDistribution { state: String, value: f64 },
    #[error("trait `{0}` has zero spread across the cohort")]
    ZeroSpread(String),
    #[error("trait `{0}` has fewer than two participants")]
    TooFewParticipants(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScore {
    pub participant: ParticipantId,
    pub day: u32,
    pub period: Period,
    pub state: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAssignment {
    pub participant: ParticipantId,
    pub day: u32,
    pub period: Period,
    pub state: String,
    /// Median-centered score.
    pub score: f64,
    pub level: Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileCuts {
    pub q33: f64,
    pub q66: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraitClass {
    LowTrait,
    MidTrait,
    HighTrait,
}

impl TraitClass {
    pub fn of(z: f64) -> TraitClass {
        if z <= -1.0 {
            TraitClass::LowTrait
        } else if z >= 1.0 {
            TraitClass::HighTrait
        } else {
            TraitClass::MidTrait
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraitClass::LowTrait => "low",
            TraitClass::MidTrait => "mid",
            TraitClass::HighTrait => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitProfile {
    pub participant: ParticipantId,
    pub trait_name: String,
    pub z: f64,
    pub class: TraitClass,
}

pub fn recode_reverse(raw: f64, item: &ItemSpec) -> f64 {
    item.max + item.min - raw
}

fn item_value(items: &BTreeMap<String, f64>, code: &str, config: &StudyConfig, reverse: bool) -> Option<f64> {
    let raw = *items.get(code)?;
    if reverse {
        Some(recode_reverse(raw, config.item(code)?))
    } else {
        Some(raw)
    }
}

/// Ten-item inventory dimension: mean of the standard item and the recoded
/// reverse-keyed item. `None` when either item is missing.
pub fn score_big5_state(items: &BTreeMap<String, f64>, state: &StateDef, config: &StudyConfig) -> Option<f64> {
    let mut total = 0.0;
    for code in &state.items {
        let reverse = state.reverse_items.contains(code);
        total += item_value(items, code, config, reverse)?;
    }
    Some(total / state.items.len() as f64)
}

/// Affect scale: mean of its items. `None` when any item is missing.
pub fn score_panas_state(items: &BTreeMap<String, f64>, state: &StateDef) -> Option<f64> {
    let mut total = 0.0;
    for code in &state.items {
        total += items.get(code)?;
    }
    Some(total / state.items.len() as f64)
}

pub fn score_state(response: &SurveyResponse, state: &StateDef, config: &StudyConfig) -> Option<StateScore> {
    let score = match state.rule {
        ScoringRule::PairedReverse => score_big5_state(&response.items, state, config),
        ScoringRule::Mean => score_panas_state(&response.items, state),
    }?;
    Some(StateScore {
        participant: response.participant.clone(),
        day: response.day,
        period: response.period,
        state: state.name.clone(),
        score,
    })
}

/// Tertile cuts of a sample of (already centered) scores.
pub fn fit_quantile_cuts(state: &str, scores: &[f64]) -> Result<QuantileCuts, ScoringError> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (first, last) = match (sorted.first(), sorted.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(ScoringError::DegenerateDistribution { state: state.into(), value: f64::NAN }),
    };
    if first == last {
        return Err(ScoringError::DegenerateDistribution { state: state.into(), value: first });
    }
    let distinct = sorted.windows(2).filter(|w| w[0] != w[1]).count() + 1;
    if distinct < 3 {
        log::warn!("state `{state}` has only {distinct} distinct scores; tertiles are unreliable");
    }
    Ok(QuantileCuts { q33: stats::quantile_sorted(&sorted, 0.33), q66: stats::quantile_sorted(&sorted, 0.66) })
}

pub fn assign_level(score: f64, cuts: &QuantileCuts) -> Level {
    if score <= cuts.q33 {
        Level::L
    } else if score <= cuts.q66 {
        Level::N
    } else {
        Level::H
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum ScreenVerdict {
    Keep,
    Discard(String),
}

impl ScreenVerdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, ScreenVerdict::Keep)
    }
}

/// Discards states whose tertile partition is infeasible: coincident cuts,
/// or a level holding less than `floor` of the scores.
pub fn skewness_screen(state: &str, scores: &[f64], floor: f64) -> ScreenVerdict {
    let cuts = match fit_quantile_cuts(state, scores) {
        Ok(c) => c,
        Err(e) => return ScreenVerdict::Discard(e.to_string()),
    };
    if cuts.q33 == cuts.q66 {
        return ScreenVerdict::Discard(format!("coincident cuts at {}", cuts.q33));
    }
    let mut counts = [0usize; 3];
    for &s in scores {
        counts[assign_level(s, &cuts).index()] += 1;
    }
    for level in Level::ALL {
        let share = counts[level.index()] as f64 / scores.len() as f64;
        if share < floor {
            return ScreenVerdict::Discard(format!("level {level} share {share:.3} below {floor}"));
        }
    }
    ScreenVerdict::Keep
}

/// Cohort z-scores of every trait, from the begin-wave surveys.
pub fn normalize_traits(surveys: &[TraitSurvey], sd: SdKind) -> Result<Vec<TraitProfile>, ScoringError> {
    let mut by_trait: BTreeMap<&str, Vec<(&ParticipantId, f64)>> = BTreeMap::new();
    for s in surveys.iter().filter(|s| s.wave == Wave::Begin) {
        for (name, &raw) in &s.raw_trait_scores {
            by_trait.entry(name).or_default().push((&s.participant, raw));
        }
    }
    let ddof = match sd {
        SdKind::Population => 0,
        SdKind::Sample => 1,
    };
    let mut out = Vec::new();
    for (name, entries) in by_trait {
        if entries.len() < 2 {
            return Err(ScoringError::TooFewParticipants(name.to_string()));
        }
        let raws: Vec<f64> = entries.iter().map(|e| e.1).collect();
        let m = stats::mean(&raws);
        let s = stats::std_dev(&raws, ddof);
        if !(s > 0.0) {
            return Err(ScoringError::ZeroSpread(name.to_string()));
        }
        for (pid, raw) in entries {
            let z = (raw - m) / s;
            out.push(TraitProfile { participant: pid.clone(), trait_name: name.to_string(), z, class: TraitClass::of(z) });
        }
    }
    out.sort_by(|a, b| (&a.participant, &a.trait_name).cmp(&(&b.participant, &b.trait_name)));
    Ok(out)
}

/// Per-state summary of the quantization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateQuantization {
    pub state: String,
    pub median: f64,
    pub cuts: Option<QuantileCuts>,
    pub screen: ScreenVerdict,
    pub n_scores: usize,
}

type SurveyKey = (ParticipantId, u32, Period);

/// Levels of every scored survey, indexed for fast lookup.
#[derive(Debug, Clone, Default)]
pub struct LevelTable {
    pub states: Vec<StateQuantization>,
    pub assignments: Vec<LevelAssignment>,
    index: HashMap<SurveyKey, Vec<Option<Level>>>,
}

impl LevelTable {
    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.states.iter().position(|s| s.state == state)
    }

    pub fn level(&self, state_idx: usize, participant: &ParticipantId, day: u32, period: Period) -> Option<Level> {
        self.index.get(&(participant.clone(), day, period))?.get(state_idx).copied().flatten()
    }

    pub fn kept_states(&self) -> impl Iterator<Item = &StateQuantization> {
        self.states.iter().filter(|s| s.screen.is_keep())
    }

    /// Builds a table directly from level assignments (e.g. read back from disk).
    pub fn from_assignments(states: Vec<StateQuantization>, assignments: Vec<LevelAssignment>) -> Self {
        let mut table = LevelTable { states, assignments, index: HashMap::new() };
        table.rebuild_index();
        table
    }

    fn rebuild_index(&mut self) {
        let n = self.states.len();
        let pos: HashMap<&str, usize> = self.states.iter().enumerate().map(|(i, s)| (s.state.as_str(), i)).collect();
        let mut index: HashMap<SurveyKey, Vec<Option<Level>>> = HashMap::new();
        for a in &self.assignments {
            if let Some(&i) = pos.get(a.state.as_str()) {
                index.entry((a.participant.clone(), a.day, a.period)).or_insert_with(|| vec![None; n])[i] = Some(a.level);
            }
        }
        self.index = index;
    }
}

/// Scores every survey for every configured state, median-centers, fits
/// tertile cuts, screens skewed states and assigns levels.
pub fn quantize_states(responses: &[SurveyResponse], config: &StudyConfig) -> LevelTable {
    let mut states = Vec::new();
    let mut assignments = Vec::new();
    for def in &config.states {
        let scores: Vec<StateScore> = responses.iter().filter_map(|r| score_state(r, def, config)).collect();
        let raw: Vec<f64> = scores.iter().map(|s| s.score).collect();
        if raw.is_empty() {
            states.push(StateQuantization {
                state: def.name.clone(),
                median: f64::NAN,
                cuts: None,
                screen: ScreenVerdict::Discard("no scores".into()),
                n_scores: 0,
            });
            continue;
        }
        let median = stats::median(&raw);
        let centered: Vec<f64> = raw.iter().map(|s| s - median).collect();
        let screen = skewness_screen(&def.name, &centered, config.level_share_floor);
        let cuts = fit_quantile_cuts(&def.name, &centered).ok();
        if let Some(c) = &cuts {
            for (s, &score) in scores.iter().zip(&centered) {
                assignments.push(LevelAssignment {
                    participant: s.participant.clone(),
                    day: s.day,
                    period: s.period,
                    state: def.name.clone(),
                    score,
                    level: assign_level(score, c),
                });
            }
        }
        states.push(StateQuantization { state: def.name.clone(), median, cuts, screen, n_scores: raw.len() });
    }
    LevelTable::from_assignments(states, assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> StudyConfig {
        StudyConfig::default()
    }

    fn items(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn tipi_symmetric_recode() {
        let c = cfg();
        let extra = c.state("extraversion").unwrap();
        assert_eq!(score_big5_state(&items(&[("tipi1", 6.0), ("tipi6", 2.0)]), extra, &c), Some(6.0));
        assert_eq!(score_big5_state(&items(&[("tipi1", 4.0), ("tipi6", 4.0)]), extra, &c), Some(4.0));
        assert_eq!(score_big5_state(&items(&[("tipi1", 4.0)]), extra, &c), None);
    }

    #[test]
    fn reverse_recode_is_an_involution() {
        let spec = ItemSpec { code: "x".into(), min: 1.0, max: 7.0 };
        for raw in [1.0, 2.5, 4.0, 7.0] {
            assert_eq!(recode_reverse(recode_reverse(raw, &spec), &spec), raw);
        }
    }

    #[test]
    fn panas_means() {
        let c = cfg();
        let hpa = c.state("hpa").unwrap();
        let lna = c.state("lna").unwrap();
        let all = items(&[("enthusiastic", 3.0), ("interested", 3.0), ("active", 3.0), ("lonely", 1.0), ("isolated", 5.0)]);
        assert_eq!(score_panas_state(&all, hpa), Some(3.0));
        assert_eq!(score_panas_state(&all, lna), Some(3.0));
        assert_eq!(score_panas_state(&items(&[("lonely", 1.0)]), lna), None);
    }

    #[test]
    fn cuts_on_one_to_hundred() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let c = fit_quantile_cuts("s", &xs).unwrap();
        assert_relative_eq!(c.q33, 33.67, epsilon = 1e-9);
        assert_relative_eq!(c.q66, 66.34, epsilon = 1e-9);
    }

    #[test]
    fn centered_integer_scores() {
        // 101 points: h = 33 and h = 66 land exactly on order statistics
        let xs: Vec<f64> = (-50..=50).map(f64::from).collect();
        let c = fit_quantile_cuts("s", &xs).unwrap();
        assert_eq!((c.q33, c.q66), (-17.0, 16.0));
    }

    #[test]
    fn constant_scores_are_degenerate() {
        assert_eq!(
            fit_quantile_cuts("s", &[2.0; 10]),
            Err(ScoringError::DegenerateDistribution { state: "s".into(), value: 2.0 })
        );
    }

    #[test]
    fn boundary_ties_go_down() {
        let c = QuantileCuts { q33: -1.0, q66: 1.0 };
        assert_eq!(assign_level(-1.0, &c), Level::L);
        assert_eq!(assign_level(1.0, &c), Level::N);
        assert_eq!(assign_level(1.0001, &c), Level::H);
    }

    #[test]
    fn trait_z_scores() {
        let surveys: Vec<TraitSurvey> = [2.0, 4.0, 6.0]
            .iter()
            .enumerate()
            .map(|(i, &raw)| TraitSurvey {
                participant: ParticipantId::new(&format!("p{i}")),
                wave: Wave::Begin,
                raw_trait_scores: items(&[("extraversion", raw)]),
            })
            .collect();
        let z = normalize_traits(&surveys, SdKind::Population).unwrap();
        assert_relative_eq!(z[2].z, 1.224744871391589, epsilon = 1e-12);
        assert_eq!(z[2].class, TraitClass::HighTrait);
        assert_eq!(z[1].z, 0.0);
        assert_eq!(z[1].class, TraitClass::MidTrait);
    }

    #[test]
    fn equal_trait_raws_fail() {
        let surveys: Vec<TraitSurvey> = (0..2)
            .map(|i| TraitSurvey {
                participant: ParticipantId::new(&format!("p{i}")),
                wave: Wave::Begin,
                raw_trait_scores: items(&[("extraversion", 3.0)]),
            })
            .collect();
        assert_eq!(normalize_traits(&surveys, SdKind::Population), Err(ScoringError::ZeroSpread("extraversion".into())));
    }

    #[test]
    fn screen_discards_floor_heavy_scales() {
        let mut xs = vec![1.0; 80];
        xs.extend((0..20).map(|i| 2.0 + f64::from(i) / 10.0));
        assert!(!skewness_screen("hna", &xs, 0.10).is_keep());
        let uniform: Vec<f64> = (0..300).map(f64::from).collect();
        assert!(skewness_screen("s", &uniform, 0.10).is_keep());
    }
}
