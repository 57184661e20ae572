use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{gen_contacts, gen_population, step_state, AgentSpec, NonresponseModel, ScenarioConfig, ScenarioError, Situation};
use crate::data_model::{
    write_ir_log, write_surveys, write_traits, IrEvent, Level, ParticipantId, Period, ScoringRule, Slot, StateDef, StudyConfig,
    SurveyResponse, TraitSurvey, Wave,
};
use crate::network::{HitRun, IntensityTriple};
use crate::report::atomic_write;

pub fn scenario_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of replication `rep` derived from a master seed.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(rep + 1);
    rng.next_u64()
}

/// `hits` consecutive one-second hits from `ego`'s badge on `alter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactBurst {
    pub ego: ParticipantId,
    pub alter: ParticipantId,
    pub day: u32,
    pub slot: Slot,
    pub start: DateTime<Utc>,
    pub hits: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub agents: Vec<AgentSpec>,
    pub bursts: Vec<ContactBurst>,
    pub surveys: Vec<SurveyResponse>,
    pub traits: Vec<TraitSurvey>,
    pub truth: ScenarioConfig,
    pub study: StudyConfig,
}

#[derive(Serialize)]
struct Truth<'a> {
    scenario: &'a ScenarioConfig,
    agents: &'a [AgentSpec],
}

impl SyntheticCorpus {
    pub fn pool(&self) -> BTreeSet<ParticipantId> {
        self.agents.iter().map(|a| a.id.clone()).collect()
    }

    pub fn hit_runs(&self) -> impl Iterator<Item = HitRun<'_>> {
        self.bursts.iter().map(|b| HitRun { timestamp: b.start, ego: &b.ego, alter: &b.alter, count: b.hits })
    }

    /// Every hit as an individual event, sorted.
    pub fn events(&self) -> Vec<IrEvent> {
        let mut out = Vec::with_capacity(self.bursts.iter().map(|b| b.hits as usize).sum());
        for b in &self.bursts {
            for s in 0..b.hits {
                out.push(IrEvent {
                    timestamp: b.start + Duration::seconds(s as i64),
                    ego: b.ego.clone(),
                    alter: b.alter.clone(),
                });
            }
        }
        out.sort();
        out
    }

    pub fn truth_json(&self) -> String {
        serde_json::to_string_pretty(&Truth { scenario: &self.truth, agents: &self.agents }).expect("truth serializes")
    }

    /// Writes `ir.csv`, `surveys.csv`, `traits.csv`, `study.toml` and
    /// `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> std::io::Result<()> {
            let path = dir.join(name);
            atomic_write(&path, &bytes)?;
            written.push(path);
            Ok(())
        };
        let mut buf = Vec::new();
        write_ir_log(&self.events(), &mut buf)?;
        put("ir.csv", buf)?;
        let mut buf = Vec::new();
        write_surveys(&self.surveys, &mut buf)?;
        put("surveys.csv", buf)?;
        let mut buf = Vec::new();
        write_traits(&self.traits, &mut buf)?;
        put("traits.csv", buf)?;
        put("study.toml", self.study.to_toml().into_bytes())?;
        put("truth.json", self.truth_json().into_bytes())?;
        Ok(written)
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Item answers placing `state` inside the score band of `level`: the
/// scale is split into three equal bands and the score is drawn away from
/// the band edges.
fn level_items(def: &StateDef, level: Level, study: &StudyConfig, rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    let Some(spec) = def.items.first().and_then(|c| study.item(c)) else {
        return Vec::new();
    };
    let width = (spec.max - spec.min) / 3.0;
    let lo = spec.min + width * level.index() as f64;
    let score = round3(lo + width * (0.05 + 0.9 * rng.random::<f64>()));
    def.items
        .iter()
        .map(|code| {
            let reverse = def.rule == ScoringRule::PairedReverse && def.reverse_items.contains(code);
            let item = study.item(code).unwrap_or(spec);
            (code.clone(), if reverse { round3(item.min + item.max - score) } else { score })
        })
        .collect()
}

/// Answers piled at the scale floor, independent of any level.
fn floor_items(def: &StateDef, study: &StudyConfig, rng: &mut ChaCha8Rng) -> Vec<(String, f64)> {
    def.items
        .iter()
        .filter_map(|code| {
            let spec = study.item(code)?;
            let v = if rng.random::<f64>() < 0.85 {
                spec.min
            } else {
                round3(spec.min + rng.random::<f64>() * (spec.max - spec.min) / 4.0)
            };
            Some((code.clone(), v))
        })
        .collect()
}

fn skip_rate(config: &ScenarioConfig, agent: &AgentSpec) -> f64 {
    match config.nonresponse {
        NonresponseModel::Mcar => config.nonresponse_rate,
        NonresponseModel::TraitDependent => {
            let z = agent.trait_z.values().next().copied().unwrap_or(0.0);
            (config.nonresponse_rate * 2.0 * Normal::standard().cdf(-z)).min(1.0)
        }
    }
}

/// Runs a scenario end to end. Each day starts from fresh morning levels;
/// the two within-day transitions use the contacts of their window.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SyntheticCorpus, ScenarioError> {
    config.validate()?;
    let study = config.study_config();
    let mut rng = scenario_rng(config.seed);
    let agents = gen_population(config, &mut rng);
    let n = agents.len();
    let state_names = config.simulated_states();
    let defs: Vec<&StateDef> = state_names
        .iter()
        .map(|s| study.state(s).ok_or_else(|| ScenarioError::Invalid(format!("unknown state `{s}`"))))
        .collect::<Result<_, _>>()?;
    let floor_defs: Vec<&StateDef> =
        config.floor_states.iter().filter(|s| !state_names.contains(s)).filter_map(|s| study.state(s)).collect();
    let table = config.coefficient_table();
    let trait_z: Vec<Vec<f64>> = defs
        .iter()
        .map(|d| agents.iter().map(|a| d.trait_name.as_ref().and_then(|t| a.trait_z.get(t)).copied().unwrap_or(0.0)).collect())
        .collect();
    let homophily_idx = match &config.homophily_state {
        Some(s) => state_names.iter().position(|x| x == s),
        None => (!state_names.is_empty()).then_some(0),
    };

    let mut bursts = Vec::new();
    let mut surveys = Vec::new();
    for day in 1..=config.n_days {
        // levels[period][state][agent]
        let mut levels: Vec<Vec<Vec<Level>>> = Vec::with_capacity(3);
        let morning: Vec<Vec<Level>> = state_names
            .iter()
            .map(|s| {
                agents
                    .iter()
                    .map(|a| {
                        let p = a.initial_distribution(s, &config.initial_levels);
                        super::sample_categorical(&mut rng, &p)
                    })
                    .collect()
            })
            .collect();
        levels.push(morning);
        for slot in Slot::ALL {
            let current = &levels[slot.start().index()];
            let homophily_levels = match homophily_idx {
                Some(i) => current[i].clone(),
                None => vec![Level::N; n],
            };
            let window_seconds = study.window_seconds(slot);
            let contacts = gen_contacts(&homophily_levels, &config.contacts, window_seconds, &mut rng);
            let start = study
                .trigger_instant(day, slot.start())
                .ok_or_else(|| ScenarioError::Invalid(format!("day {day} outside the calendar")))?;
            for (ego, list) in contacts.iter().enumerate() {
                for &(alter, hits, offset) in list {
                    bursts.push(ContactBurst {
                        ego: agents[ego].id.clone(),
                        alter: agents[alter].id.clone(),
                        day,
                        slot,
                        start: start + Duration::seconds(offset),
                        hits,
                    });
                }
            }
            let mut next = Vec::with_capacity(defs.len());
            for (si, name) in state_names.iter().enumerate() {
                let lv = &current[si];
                let row: Vec<Level> = (0..n)
                    .map(|ego| {
                        let k = IntensityTriple::from_contacts(contacts[ego].iter().map(|&(a, h, _)| (lv[a], h)));
                        let s = Situation {
                            from: lv[ego],
                            intensities: k,
                            trait_z: trait_z[si][ego],
                            period_dummy: slot.period_dummy(),
                        };
                        step_state(&mut rng, &table, name, &s)
                    })
                    .collect();
                next.push(row);
            }
            levels.push(next);
        }

        for period in Period::ALL {
            let trigger = study
                .trigger_instant(day, period)
                .ok_or_else(|| ScenarioError::Invalid(format!("day {day} outside the calendar")))?;
            for (i, agent) in agents.iter().enumerate() {
                let skip = skip_rate(config, agent);
                if skip > 0.0 && rng.random::<f64>() < skip {
                    continue;
                }
                let mut items = std::collections::BTreeMap::new();
                for (si, def) in defs.iter().enumerate() {
                    items.extend(level_items(def, levels[period.index()][si][i], &study, &mut rng));
                }
                for def in &floor_defs {
                    items.extend(floor_items(def, &study, &mut rng));
                }
                let delay = rng.random_range(0..3600);
                surveys.push(SurveyResponse {
                    participant: agent.id.clone(),
                    day,
                    period,
                    submitted_at: trigger + Duration::seconds(delay),
                    items,
                });
            }
        }
    }

    let traits = agents
        .iter()
        .map(|a| TraitSurvey {
            participant: a.id.clone(),
            wave: Wave::Begin,
            raw_trait_scores: a.trait_z.iter().map(|(t, z)| (t.clone(), 4.0 + z)).collect(),
        })
        .collect();
    Ok(SyntheticCorpus { agents, bursts, surveys, traits, truth: config.clone(), study })
}
