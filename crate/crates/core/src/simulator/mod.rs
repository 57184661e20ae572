//! Synthetic corpora with planted influence coefficients.
//!
//! Each agent's level of every simulated state evolves by a three-way
//! softmax over the same linear predictor the logistic models use. Contacts
//! are drawn per window, hits arrive as contiguous 1 Hz bursts, and surveys
//! report item values inside level-specific score bands.

mod corpus;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data_model::{Level, ParticipantId, StudyConfig};
use crate::network::IntensityTriple;

pub use corpus::{replication_seed, run_scenario, scenario_rng, ContactBurst, SyntheticCorpus};

/// Linear-predictor coefficients of one (from, to) transition, in the
/// covariate order intercept, L, N, H, T, T*L, T*N, T*H, P, P*T.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoefficientVector {
    pub alpha: f64,
    pub beta_l: f64,
    pub beta_n: f64,
    pub beta_h: f64,
    pub beta_t: f64,
    pub beta_tl: f64,
    pub beta_tn: f64,
    pub beta_th: f64,
    pub beta_p: f64,
    pub beta_pt: f64,
}

impl CoefficientVector {
    pub fn eta(&self, k: &IntensityTriple, t: f64, p: f64) -> f64 {
        self.alpha
            + self.beta_l * k.l
            + self.beta_n * k.n
            + self.beta_h * k.h
            + self.beta_t * t
            + self.beta_tl * t * k.l
            + self.beta_tn * t * k.n
            + self.beta_th * t * k.h
            + self.beta_p * p
            + self.beta_pt * p * t
    }

    /// Coefficient on the intensity of alters at `z`.
    pub fn intensity(&self, z: Level) -> f64 {
        [self.beta_l, self.beta_n, self.beta_h][z.index()]
    }

    pub fn interaction(&self, z: Level) -> f64 {
        [self.beta_tl, self.beta_tn, self.beta_th][z.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCoefficients {
    pub state: String,
    pub from: Level,
    pub to: Level,
    #[serde(flatten)]
    pub beta: CoefficientVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactModel {
    /// Poisson mean of distinct alters per ego and window.
    pub mean_alters: f64,
    /// Mean hits per (ego, alter, window); at least one hit per contact.
    pub hit_mean: f64,
    /// Gamma-Poisson shape of the hit count; smaller is more dispersed.
    pub hit_dispersion: f64,
    /// Same-level alters are picked with weight 1 + homophily.
    pub homophily: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        ContactModel { mean_alters: 1.8, hit_mean: 70.0, hit_dispersion: 1.0, homophily: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonresponseModel {
    /// Every survey is skipped independently with the configured rate.
    #[default]
    Mcar,
    /// Rate scaled by 2 * Phi(-z) of the agent's first trait, so
    /// low-trait agents skip more often.
    TraitDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub n_agents: usize,
    pub n_days: u32,
    pub seed: u64,
    pub nonresponse_rate: f64,
    pub nonresponse: NonresponseModel,
    /// Distribution of each day's morning level.
    pub initial_levels: [f64; 3],
    /// SD of per-agent propensities tilting the morning level upwards or
    /// downwards; 0 keeps every agent on `initial_levels`.
    pub propensity_sd: f64,
    /// States to simulate; `None` simulates every configured state outside
    /// `floor_states`.
    pub states: Option<Vec<String>>,
    /// States whose items pile up at the scale floor regardless of level.
    pub floor_states: Vec<String>,
    /// State whose levels drive homophilous alter choice; defaults to the
    /// first simulated state.
    pub homophily_state: Option<String>,
    pub contacts: ContactModel,
    pub coefficients: Vec<PlantedCoefficients>,
    pub study: StudyConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_agents: 52,
            n_days: 30,
            seed: 7,
            nonresponse_rate: 0.0,
            nonresponse: NonresponseModel::Mcar,
            initial_levels: [1.0 / 3.0; 3],
            propensity_sd: 0.0,
            states: None,
            floor_states: vec!["hna".into(), "lpa".into()],
            homophily_state: None,
            contacts: ContactModel::default(),
            coefficients: Vec::new(),
            study: StudyConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.n_agents < 2 {
            return bad(format!("n_agents must be at least 2, got {}", self.n_agents));
        }
        if self.n_days == 0 {
            return bad("n_days must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.nonresponse_rate) {
            return bad(format!("nonresponse_rate {} outside [0, 1]", self.nonresponse_rate));
        }
        if self.initial_levels.iter().any(|p| !(*p >= 0.0)) || self.initial_levels.iter().sum::<f64>() <= 0.0 {
            return bad("initial_levels must be non-negative with a positive sum".into());
        }
        let c = &self.contacts;
        if !(c.mean_alters >= 0.0) || !(c.hit_mean >= 1.0) || !(c.hit_dispersion > 0.0) || !(c.homophily >= 0.0) {
            return bad("contact model parameters out of range".into());
        }
        for pc in &self.coefficients {
            if self.study.state(&pc.state).is_none() {
                return bad(format!("coefficients for unknown state `{}`", pc.state));
            }
        }
        self.study.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    /// Study configuration with the scenario's calendar length.
    pub fn study_config(&self) -> StudyConfig {
        let mut s = self.study.clone();
        s.calendar.n_days = self.n_days;
        s
    }

    pub fn simulated_states(&self) -> Vec<String> {
        match &self.states {
            Some(s) => s.clone(),
            None => self.study.states.iter().filter(|s| !self.floor_states.contains(&s.name)).map(|s| s.name.clone()).collect(),
        }
    }

    pub fn coefficient_table(&self) -> CoefficientTable {
        let mut table = HashMap::new();
        for pc in &self.coefficients {
            table.insert((pc.state.clone(), pc.from, pc.to), pc.beta);
        }
        CoefficientTable(table)
    }
}

/// Planted coefficients keyed by (state, from, to); absent entries are zero.
#[derive(Debug, Clone, Default)]
pub struct CoefficientTable(HashMap<(String, Level, Level), CoefficientVector>);

impl CoefficientTable {
    pub fn get(&self, state: &str, from: Level, to: Level) -> CoefficientVector {
        self.0.get(&(state.to_string(), from, to)).copied().unwrap_or_default()
    }
}

/// Situation of an ego about to transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Situation {
    pub from: Level,
    pub intensities: IntensityTriple,
    pub trait_z: f64,
    pub period_dummy: f64,
}

/// Exact next-level probabilities (L, N, H) under the planted model.
pub fn oracle_transition_probs(table: &CoefficientTable, state: &str, s: &Situation) -> [f64; 3] {
    let eta: [f64; 3] =
        std::array::from_fn(|y| table.get(state, s.from, Level::ALL[y]).eta(&s.intensities, s.trait_z, s.period_dummy));
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: [f64; 3] = std::array::from_fn(|y| (eta[y] - m).exp());
    let total: f64 = w.iter().sum();
    std::array::from_fn(|y| w[y] / total)
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64; 3]) -> Level {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Level::ALL[i];
        }
    }
    Level::H
}

/// Draws the next level for one ego.
pub fn step_state(rng: &mut ChaCha8Rng, table: &CoefficientTable, state: &str, s: &Situation) -> Level {
    sample_categorical(rng, &oracle_transition_probs(table, state, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: ParticipantId,
    pub trait_z: BTreeMap<String, f64>,
    pub propensity: BTreeMap<String, f64>,
}

impl AgentSpec {
    /// Morning-level distribution for `state`, tilted by the propensity.
    pub fn initial_distribution(&self, state: &str, base: &[f64; 3]) -> [f64; 3] {
        let tilt = self.propensity.get(state).copied().unwrap_or(0.0);
        let w: [f64; 3] = std::array::from_fn(|k| base[k] * (tilt * (k as f64 - 1.0)).exp());
        let total: f64 = w.iter().sum();
        std::array::from_fn(|k| w[k] / total)
    }
}

pub fn participant_label(i: usize, n: usize) -> ParticipantId {
    let width = n.to_string().len().max(3);
    ParticipantId::new(&format!("p{:0width$}", i + 1))
}

/// Agents with standard-normal trait z-scores for every configured trait.
pub fn gen_population(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<AgentSpec> {
    let states = config.simulated_states();
    (0..config.n_agents)
        .map(|i| {
            let trait_z = config.study.traits.iter().map(|t| (t.clone(), rng.sample::<f64, _>(StandardNormal))).collect();
            let propensity = states
                .iter()
                .map(|s| {
                    (
                        s.clone(),
                        if config.propensity_sd > 0.0 {
                            config.propensity_sd * rng.sample::<f64, _>(StandardNormal)
                        } else {
                            0.0
                        },
                    )
                })
                .collect();
            AgentSpec { id: participant_label(i, config.n_agents), trait_z, propensity }
        })
        .collect()
}

/// One ego's contacts in a window: (alter index, hits, burst offset in s).
pub type EgoContacts = Vec<(usize, u64, i64)>;

/// Contacts of every ego in one window. `levels[i]` is agent i's level of
/// the homophily state at the window start.
pub fn gen_contacts(levels: &[Level], model: &ContactModel, window_seconds: i64, rng: &mut ChaCha8Rng) -> Vec<EgoContacts> {
    let n = levels.len();
    let mut out = Vec::with_capacity(n);
    for ego in 0..n {
        let k = if model.mean_alters > 0.0 {
            let d = Poisson::new(model.mean_alters).expect("positive mean");
            (d.sample(rng) as usize).min(n - 1)
        } else {
            0
        };
        let mut weights: Vec<f64> = (0..n)
            .map(|a| {
                if a == ego {
                    0.0
                } else if levels[a] == levels[ego] {
                    1.0 + model.homophily
                } else {
                    1.0
                }
            })
            .collect();
        let mut contacts = Vec::with_capacity(k);
        for _ in 0..k {
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (a, w) in weights.iter().enumerate() {
                if *w > 0.0 && u < *w {
                    pick = a;
                    break;
                }
                u -= w;
            }
            weights[pick] = 0.0;
            let hits = draw_hits(model, window_seconds, rng);
            let offset = rng.random_range(0..=(window_seconds - hits as i64));
            contacts.push((pick, hits, offset));
        }
        contacts.sort_unstable();
        out.push(contacts);
    }
    out
}

/// 1 + Gamma-Poisson count with mean `hit_mean - 1`, capped at one hit per
/// second of the window.
fn draw_hits(model: &ContactModel, window_seconds: i64, rng: &mut ChaCha8Rng) -> u64 {
    let extra_mean = model.hit_mean - 1.0;
    let extra = if extra_mean > 0.0 {
        let shape = model.hit_dispersion;
        let lambda = Gamma::new(shape, extra_mean / shape).expect("valid gamma").sample(rng);
        if lambda > 0.0 {
            Poisson::new(lambda).map(|p| p.sample(rng) as u64).unwrap_or(0)
        } else {
            0
        }
    } else {
        0
    };
    (1 + extra).min(window_seconds.max(1) as u64)
}
