//! Temporal ego networks between consecutive same-day surveys.
//!
//! A window covers `[start trigger, end trigger)` and holds only the hits
//! recorded by the ego's own badge. Alters are characterized by their level
//! at the window's start survey (lagged levels).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data_model::{IrEvent, Level, ParticipantId, Period, Slot, StudyConfig, SurveyResponse};
use crate::scoring::LevelTable;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoWindow {
    pub ego: ParticipantId,
    pub day: u32,
    pub slot: Slot,
    /// Hits recorded by the ego's badge per alter; every count is >= 1.
    pub contacts: BTreeMap<ParticipantId, u64>,
    /// Per state, the alters' levels at the start survey. Alters without
    /// that survey are absent from the inner map.
    pub alter_levels: BTreeMap<String, BTreeMap<ParticipantId, Level>>,
}

impl EgoWindow {
    /// True when every alter has a start-survey level for `state`.
    pub fn retained_for(&self, state: &str) -> bool {
        match self.alter_levels.get(state) {
            Some(levels) => self.contacts.keys().all(|a| levels.contains_key(a)),
            None => self.contacts.is_empty(),
        }
    }

    /// Level-stratified contact intensity, or `None` if the window is
    /// excluded for this state.
    pub fn intensity(&self, state: &str) -> Option<IntensityTriple> {
        if !self.retained_for(state) {
            return None;
        }
        let empty = BTreeMap::new();
        let levels = self.alter_levels.get(state).unwrap_or(&empty);
        Some(IntensityTriple::from_contacts(self.contacts.iter().map(|(a, &hits)| (levels[a], hits))))
    }

    pub fn total_hits(&self) -> u64 {
        self.contacts.values().sum()
    }
}

/// Hits per unique alter at each level; zero where no alter sits at a level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntensityTriple {
    pub l: f64,
    pub n: f64,
    pub h: f64,
}

impl IntensityTriple {
    pub fn from_contacts(contacts: impl IntoIterator<Item = (Level, u64)>) -> Self {
        let mut hits = [0u64; 3];
        let mut alters = [0u64; 3];
        for (level, h) in contacts {
            hits[level.index()] += h;
            alters[level.index()] += 1;
        }
        let ratio = |i: usize| if alters[i] == 0 { 0.0 } else { hits[i] as f64 / alters[i] as f64 };
        IntensityTriple { l: ratio(0), n: ratio(1), h: ratio(2) }
    }

    pub fn get(&self, level: Level) -> f64 {
        match level {
            Level::L => self.l,
            Level::N => self.n,
            Level::H => self.h,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        IntensityTriple { l: self.l * c, n: self.n * c, h: self.h * c }
    }
}

/// Bookkeeping for what window construction left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    /// (ego, day, slot) candidates lacking a bounding survey.
    pub missing_survey: usize,
    /// Hits falling outside every retained window.
    pub unassigned_hits: usize,
    /// Hits on alters outside the participant pool, per alter.
    pub unknown_alter_hits: BTreeMap<ParticipantId, usize>,
}

#[derive(Debug, Clone, Default)]
pub struct WindowBuild {
    pub windows: Vec<EgoWindow>,
    pub report: WindowReport,
}

/// A run of `count` hits from `ego`'s badge on `alter`, all falling in the
/// same window as `timestamp`.
#[derive(Debug, Clone, Copy)]
pub struct HitRun<'a> {
    pub timestamp: chrono::DateTime<chrono::Utc>,
    pub ego: &'a ParticipantId,
    pub alter: &'a ParticipantId,
    pub count: u64,
}

/// Builds one window per (ego, day, slot) whose two bounding surveys exist.
pub fn build_windows(
    events: &[IrEvent],
    surveys: &[SurveyResponse],
    levels: &LevelTable,
    pool: &BTreeSet<ParticipantId>,
    config: &StudyConfig,
) -> WindowBuild {
    let runs = events.iter().map(|e| HitRun { timestamp: e.timestamp, ego: &e.ego, alter: &e.alter, count: 1 });
    build_windows_from_runs(runs, surveys, levels, pool, config)
}

/// Same as [`build_windows`], with hits pre-aggregated into runs.
pub fn build_windows_from_runs<'a>(
    runs: impl IntoIterator<Item = HitRun<'a>>,
    surveys: &[SurveyResponse],
    levels: &LevelTable,
    pool: &BTreeSet<ParticipantId>,
    config: &StudyConfig,
) -> WindowBuild {
    let filled: HashSet<(&ParticipantId, u32, Period)> = surveys.iter().map(|s| (&s.participant, s.day, s.period)).collect();
    let mut report = WindowReport::default();
    let mut windows = Vec::new();
    let mut index: HashMap<(&ParticipantId, u32, Slot), usize> = HashMap::new();
    for ego in pool {
        for day in 1..=config.calendar.n_days {
            for slot in Slot::ALL {
                if filled.contains(&(ego, day, slot.start())) && filled.contains(&(ego, day, slot.end())) {
                    index.insert((ego, day, slot), windows.len());
                    windows.push(EgoWindow {
                        ego: ego.clone(),
                        day,
                        slot,
                        contacts: BTreeMap::new(),
                        alter_levels: BTreeMap::new(),
                    });
                } else {
                    report.missing_survey += 1;
                }
            }
        }
    }

    for run in runs {
        let located = config.locate_window(run.timestamp).and_then(|(day, slot)| index.get(&(run.ego, day, slot)));
        let Some(&i) = located else {
            report.unassigned_hits += run.count as usize;
            continue;
        };
        if !pool.contains(run.alter) {
            *report.unknown_alter_hits.entry(run.alter.clone()).or_default() += run.count as usize;
            continue;
        }
        *windows[i].contacts.entry(run.alter.clone()).or_default() += run.count;
    }

    for w in &mut windows {
        for (si, sq) in levels.states.iter().enumerate() {
            let known: BTreeMap<ParticipantId, Level> =
                w.contacts.keys().filter_map(|a| levels.level(si, a, w.day, w.slot.start()).map(|l| (a.clone(), l))).collect();
            w.alter_levels.insert(sq.state.clone(), known);
        }
    }
    if !report.unknown_alter_hits.is_empty() {
        log::warn!("{} alters outside the participant pool were dropped", report.unknown_alter_hits.len());
    }
    WindowBuild { windows, report }
}

/// Mean and spread of one similarity ratio for egos at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub mean: f64,
    pub sd: f64,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomophilyRow {
    pub ego_level: Level,
    /// Share of alters at the ego's level.
    pub count_ratio: RatioSummary,
    /// Share of hits with alters at the ego's level.
    pub hit_ratio: RatioSummary,
}

/// Per-window ratios (n_s/n, i_s/i) for egos at `ego_level`. Windows without
/// contacts carry no ratio.
pub fn similarity_ratios(ego_level: Level, contacts: impl IntoIterator<Item = (Level, u64)>) -> Option<(f64, f64)> {
    let (mut n, mut n_same, mut i, mut i_same) = (0u64, 0u64, 0u64, 0u64);
    for (level, hits) in contacts {
        n += 1;
        i += hits;
        if level == ego_level {
            n_same += 1;
            i_same += hits;
        }
    }
    (n > 0).then(|| (n_same as f64 / n as f64, i_same as f64 / i as f64))
}

pub fn homophily_similarity(windows: &[EgoWindow], levels: &LevelTable, state: &str) -> Vec<HomophilyRow> {
    let Some(si) = levels.state_index(state) else {
        return Vec::new();
    };
    let mut per_level: BTreeMap<Level, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for w in windows.iter().filter(|w| w.retained_for(state)) {
        let Some(ego_level) = levels.level(si, &w.ego, w.day, w.slot.start()) else {
            continue;
        };
        let alter_levels = &w.alter_levels[state];
        let ratios = similarity_ratios(ego_level, w.contacts.iter().map(|(a, &h)| (alter_levels[a], h)));
        if let Some((c, h)) = ratios {
            let e = per_level.entry(ego_level).or_default();
            e.0.push(c);
            e.1.push(h);
        }
    }
    let summarize = |xs: &[f64]| RatioSummary {
        mean: stats::mean(xs),
        sd: if xs.len() > 1 { stats::std_dev(xs, 1) } else { 0.0 },
        n_windows: xs.len(),
    };
    per_level
        .into_iter()
        .map(|(ego_level, (c, h))| HomophilyRow { ego_level, count_ratio: summarize(&c), hit_ratio: summarize(&h) })
        .collect()
}

/// Undirected contact graph over the whole study.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateNetwork {
    pub nodes: BTreeSet<ParticipantId>,
    /// Unordered pair (smaller id first) to total hits in both directions.
    pub edges: BTreeMap<(ParticipantId, ParticipantId), u64>,
}

impl AggregateNetwork {
    pub fn degrees(&self) -> BTreeMap<ParticipantId, usize> {
        let mut deg: BTreeMap<ParticipantId, usize> = self.nodes.iter().map(|n| (n.clone(), 0)).collect();
        for (a, b) in self.edges.keys() {
            *deg.entry(a.clone()).or_default() += 1;
            *deg.entry(b.clone()).or_default() += 1;
        }
        deg
    }
}

/// Keeps pairs whose total hits are strictly greater than `threshold`.
pub fn aggregate_network(events: &[IrEvent], threshold: u64) -> AggregateNetwork {
    let mut totals: BTreeMap<(ParticipantId, ParticipantId), u64> = BTreeMap::new();
    let mut nodes = BTreeSet::new();
    for e in events {
        nodes.insert(e.ego.clone());
        nodes.insert(e.alter.clone());
        let key = if e.ego < e.alter { (e.ego.clone(), e.alter.clone()) } else { (e.alter.clone(), e.ego.clone()) };
        *totals.entry(key).or_default() += 1;
    }
    totals.retain(|_, &mut hits| hits > threshold);
    AggregateNetwork { nodes, edges: totals }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            min: v[0],
            q1: stats::quantile_sorted(&v, 0.25),
            median: stats::quantile_sorted(&v, 0.5),
            q3: stats::quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeSummary {
    pub n_windows: usize,
    pub alters: Option<Quartiles>,
    pub hits: Option<Quartiles>,
}

/// Per-participant distribution of alter counts and total hits over windows.
pub fn degree_and_interaction_stats(
    windows: &[EgoWindow],
    pool: &BTreeSet<ParticipantId>,
) -> BTreeMap<ParticipantId, DegreeSummary> {
    let mut per: BTreeMap<&ParticipantId, (Vec<f64>, Vec<f64>)> = pool.iter().map(|p| (p, Default::default())).collect();
    for w in windows {
        let e = per.entry(&w.ego).or_default();
        e.0.push(w.contacts.len() as f64);
        e.1.push(w.total_hits() as f64);
    }
    per.into_iter()
        .map(|(p, (a, h))| (p.clone(), DegreeSummary { n_windows: a.len(), alters: Quartiles::of(&a), hits: Quartiles::of(&h) }))
        .collect()
}
