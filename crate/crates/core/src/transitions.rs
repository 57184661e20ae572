//! Level transitions between consecutive surveys and the logistic design
//! rows built from them.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data_model::{Level, ParticipantId, Slot};
use crate::network::{EgoWindow, IntensityTriple};
use crate::scoring::{LevelTable, TraitProfile};
use crate::stats;

/// Covariate columns of a design row, in storage order.
pub const COVARIATES: [&str; 9] = ["L", "N", "H", "T", "T*L", "T*N", "T*H", "P", "P*T"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub ego: ParticipantId,
    pub day: u32,
    pub slot: Slot,
    pub state: String,
    pub from_level: Level,
    pub to_level: Level,
    pub intensities: IntensityTriple,
    pub trait_z: f64,
    pub period_dummy: f64,
}

/// Why candidate windows produced no transition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionExclusions {
    /// Some alter lacked a start-survey level.
    pub alter_level_missing: usize,
    /// The ego's own start or end level is unknown.
    pub ego_level_missing: usize,
    /// No trait z-score for the ego.
    pub trait_missing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub state: String,
    pub records: Vec<TransitionRecord>,
    pub exclusions: TransitionExclusions,
}

/// Extracts one record per retained window for `state`. `trait_name` selects
/// the z-score used as T. Unknown states yield an empty set.
pub fn extract_transitions(
    levels: &LevelTable,
    windows: &[EgoWindow],
    traits: &[TraitProfile],
    state: &str,
    trait_name: &str,
) -> TransitionSet {
    let mut out = TransitionSet { state: state.to_string(), ..Default::default() };
    let Some(si) = levels.state_index(state) else {
        return out;
    };
    let z: HashMap<&ParticipantId, f64> =
        traits.iter().filter(|t| t.trait_name == trait_name).map(|t| (&t.participant, t.z)).collect();
    for w in windows {
        let from = levels.level(si, &w.ego, w.day, w.slot.start());
        let to = levels.level(si, &w.ego, w.day, w.slot.end());
        let (Some(from_level), Some(to_level)) = (from, to) else {
            out.exclusions.ego_level_missing += 1;
            continue;
        };
        let Some(intensities) = w.intensity(state) else {
            out.exclusions.alter_level_missing += 1;
            continue;
        };
        let Some(&trait_z) = z.get(&w.ego) else {
            out.exclusions.trait_missing += 1;
            continue;
        };
        out.records.push(TransitionRecord {
            ego: w.ego.clone(),
            day: w.day,
            slot: w.slot,
            state: state.to_string(),
            from_level,
            to_level,
            intensities,
            trait_z,
            period_dummy: w.slot.period_dummy(),
        });
    }
    out.records.sort_by(|a, b| (&a.ego, a.day, a.slot).cmp(&(&b.ego, b.day, b.slot)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub response: f64,
    pub covariates: [f64; 9],
    pub cluster: ParticipantId,
    pub day: u32,
    pub slot: Slot,
}

impl DesignRow {
    pub fn from_record(r: &TransitionRecord, target: Level) -> Self {
        let i = r.intensities;
        let t = r.trait_z;
        let p = r.period_dummy;
        DesignRow {
            response: if r.to_level == target { 1.0 } else { 0.0 },
            covariates: [i.l, i.n, i.h, t, t * i.l, t * i.n, t * i.h, p, p * t],
            cluster: r.ego.clone(),
            day: r.day,
            slot: r.slot,
        }
    }

    pub fn covariate(&self, name: &str) -> Option<f64> {
        COVARIATES.iter().position(|c| *c == name).map(|i| self.covariates[i])
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransitionError {
    #[error("{state} {from}->{to}: only {n_rows} rows (minimum {min_rows})")]
    InsufficientData { state: String, from: Level, to: Level, n_rows: usize, min_rows: usize },
}

/// Design rows for the transition `from -> to`, ordered by (cluster, day, slot).
pub fn build_design(
    records: &[TransitionRecord],
    from: Level,
    to: Level,
    min_rows: usize,
) -> Result<Vec<DesignRow>, TransitionError> {
    let mut rows: Vec<DesignRow> =
        records.iter().filter(|r| r.from_level == from).map(|r| DesignRow::from_record(r, to)).collect();
    if rows.len() < min_rows {
        let state = records.first().map(|r| r.state.clone()).unwrap_or_default();
        return Err(TransitionError::InsufficientData { state, from, to, n_rows: rows.len(), min_rows });
    }
    rows.sort_by(|a, b| (&a.cluster, a.day, a.slot).cmp(&(&b.cluster, b.day, b.slot)));
    Ok(rows)
}

/// 3x3 transition counts indexed `[from][to]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix(pub [[u64; 3]; 3]);

impl CountMatrix {
    pub fn from_records(records: &[TransitionRecord]) -> Self {
        let mut m = [[0u64; 3]; 3];
        for r in records {
            m[r.from_level.index()][r.to_level.index()] += 1;
        }
        CountMatrix(m)
    }

    pub fn get(&self, from: Level, to: Level) -> u64 {
        self.0[from.index()][to.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn to_level_total(&self, to: Level) -> u64 {
        Level::ALL.iter().map(|&f| self.get(f, to)).sum()
    }

    /// Share (in percent) of transitions ending at each level.
    pub fn to_level_percentages(&self, base: PercentBase) -> [f64; 3] {
        let total = self.total() as f64;
        let mut out = [0.0; 3];
        for to in Level::ALL {
            let denom = match base {
                PercentBase::Total => total,
                PercentBase::Cumulative => {
                    total - Level::ALL[..to.index()].iter().map(|&y| self.get(Level::L, y)).sum::<u64>() as f64
                }
            };
            out[to.index()] = if denom > 0.0 { 100.0 * self.to_level_total(to) as f64 / denom } else { f64::NAN };
        }
        out
    }
}

/// Denominator convention for to-level percentages.
///
/// `Cumulative` divides to-N by the total minus L->L and to-H by the total
/// minus L->L and L->N, matching the reference per-state summaries;
/// `Total` is the plain share.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PercentBase {
    #[default]
    Total,
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub max: u64,
    pub min: u64,
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub per_state: BTreeMap<String, CountMatrix>,
    /// Cross-state summary per `[from][to]` cell; `None` when there are no states.
    pub summary: Option<[[CellSummary; 3]; 3]>,
}

pub fn transition_count_table(per_state: BTreeMap<String, CountMatrix>) -> CountTable {
    let summary = (!per_state.is_empty()).then(|| {
        std::array::from_fn(|f| {
            std::array::from_fn(|t| {
                let cells: Vec<u64> = per_state.values().map(|m| m.0[f][t]).collect();
                let as_f: Vec<f64> = cells.iter().map(|&c| c as f64).collect();
                CellSummary {
                    max: *cells.iter().max().unwrap(),
                    min: *cells.iter().min().unwrap(),
                    median: stats::median(&as_f),
                    mean: stats::mean(&as_f),
                }
            })
        })
    });
    CountTable { per_state, summary }
}
