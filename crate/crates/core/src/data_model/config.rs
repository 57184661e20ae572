use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Utc, Weekday};
use serde::{Deserialize, Serialize};

use super::{Period, Slot};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("state `{0}` has no items")]
    EmptyState(String),
    #[error("state `{state}` references undeclared item `{item}`")]
    UndeclaredItem { state: String, item: String },
    #[error("`{0}` must be > 0")]
    NonPositive(&'static str),
    #[error("survey trigger times must be strictly increasing")]
    TriggerOrder,
    #[error("item `{0}` has an empty scale")]
    EmptyScale(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

/// One questionnaire item and its answer scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub code: String,
    pub min: f64,
    pub max: f64,
}

/// How a state score is derived from its items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringRule {
    /// Ten-item inventory: one standard and one reverse-keyed item, averaged
    /// after recoding the reverse item.
    PairedReverse,
    /// Affect schedule: plain mean of the scale's items.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub name: String,
    pub rule: ScoringRule,
    pub items: Vec<String>,
    #[serde(default)]
    pub reverse_items: Vec<String>,
    /// Trait paired with this state in the transition models.
    #[serde(default)]
    pub trait_name: Option<String>,
}

/// Population (divide by n) or sample (n - 1) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdKind {
    #[default]
    Population,
    Sample,
}

/// Mapping between study-day indices and UTC instants.
///
/// Local clock times are converted with a fixed UTC offset, so no instant is
/// ever ambiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCalendar {
    pub start_date: NaiveDate,
    pub n_days: u32,
    pub working_days_only: bool,
    pub utc_offset_minutes: i32,
}

impl Default for StudyCalendar {
    fn default() -> Self {
        StudyCalendar {
            start_date: NaiveDate::from_ymd_opt(2012, 3, 5).unwrap(),
            n_days: 30,
            working_days_only: true,
            utc_offset_minutes: 60,
        }
    }
}

fn is_weekend(d: NaiveDate) -> bool {
    matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

impl StudyCalendar {
    /// Calendar date of study day `day` (1-based).
    pub fn date_of(&self, day: u32) -> Option<NaiveDate> {
        if day == 0 || day > self.n_days {
            return None;
        }
        if !self.working_days_only {
            return Some(self.start_date + Duration::days(i64::from(day) - 1));
        }
        let mut d = self.start_date;
        while is_weekend(d) {
            d = d.succ_opt()?;
        }
        let mut remaining = day - 1;
        while remaining > 0 {
            d = d.succ_opt()?;
            if !is_weekend(d) {
                remaining -= 1;
            }
        }
        Some(d)
    }

    /// Study-day index of a calendar date, if it is a study day.
    pub fn day_of(&self, date: NaiveDate) -> Option<u32> {
        let diff = (date - self.start_date).num_days();
        if diff < 0 {
            return None;
        }
        let index = if self.working_days_only {
            if is_weekend(date) {
                return None;
            }
            let weeks = diff / 7;
            let mut count = weeks * 5;
            let mut d = self.start_date + Duration::days(weeks * 7);
            while d < date {
                if !is_weekend(d) {
                    count += 1;
                }
                d = d.succ_opt()?;
            }
            count
        } else {
            diff
        };
        let day = u32::try_from(index + 1).ok()?;
        (day <= self.n_days).then_some(day)
    }

    fn offset(&self) -> Duration {
        Duration::minutes(i64::from(self.utc_offset_minutes))
    }

    pub fn local_instant(&self, date: NaiveDate, time: NaiveTime) -> DateTime<Utc> {
        Utc.from_utc_datetime(&(date.and_time(time) - self.offset()))
    }

    pub fn local_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        (ts.naive_utc() + self.offset()).date()
    }

    /// First and one-past-last instants of the study (local midnights).
    pub fn bounds(&self) -> (DateTime<Utc>, DateTime<Utc>) {
        let first = self.date_of(1).unwrap_or(self.start_date);
        let last = self.date_of(self.n_days).unwrap_or(self.start_date);
        (self.local_instant(first, NaiveTime::MIN), self.local_instant(last + Duration::days(1), NaiveTime::MIN))
    }

    pub fn contains(&self, ts: DateTime<Utc>) -> bool {
        let (lo, hi) = self.bounds();
        ts >= lo && ts < hi
    }

    pub fn day_of_week(&self, day: u32) -> Option<Weekday> {
        self.date_of(day).map(|d| d.weekday())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub calendar: StudyCalendar,
    /// Local trigger times of the morning, midday and afternoon surveys.
    pub triggers: [NaiveTime; 3],
    pub response_window_minutes: u32,
    pub items: Vec<ItemSpec>,
    pub states: Vec<StateDef>,
    /// Trait names required in every begin-wave trait survey.
    pub traits: Vec<String>,
    pub aggregate_hit_threshold: u64,
    pub alpha: f64,
    pub relevance_threshold: f64,
    pub level_share_floor: f64,
    pub min_design_rows: usize,
    pub trait_sd: SdKind,
    pub malformed_row_limit: f64,
}

fn item(code: &str, max: f64) -> ItemSpec {
    ItemSpec { code: code.to_string(), min: 1.0, max }
}

fn paired(name: &str, standard: &str, reverse: &str) -> StateDef {
    StateDef {
        name: name.to_string(),
        rule: ScoringRule::PairedReverse,
        items: vec![standard.to_string(), reverse.to_string()],
        reverse_items: vec![reverse.to_string()],
        trait_name: Some(name.to_string()),
    }
}

fn mean_scale(name: &str, items: &[&str], with_trait: bool) -> StateDef {
    StateDef {
        name: name.to_string(),
        rule: ScoringRule::Mean,
        items: items.iter().map(|s| s.to_string()).collect(),
        reverse_items: Vec::new(),
        trait_name: with_trait.then(|| name.to_string()),
    }
}

impl Default for StudyConfig {
    fn default() -> Self {
        let mut items: Vec<ItemSpec> = (1..=10).map(|i| item(&format!("tipi{i}"), 7.0)).collect();
        for code in ["enthusiastic", "interested", "active", "sad", "bored", "sluggish", "calm", "relaxed", "lonely", "isolated"]
        {
            items.push(item(code, 5.0));
        }
        let states = vec![
            paired("extraversion", "tipi1", "tipi6"),
            paired("agreeableness", "tipi7", "tipi2"),
            paired("conscientiousness", "tipi3", "tipi8"),
            paired("emotional_stability", "tipi9", "tipi4"),
            paired("creativity", "tipi5", "tipi10"),
            mean_scale("hpa", &["enthusiastic", "interested", "active"], true),
            mean_scale("lna", &["lonely", "isolated"], true),
            mean_scale("hna", &["sad", "bored", "sluggish"], false),
            mean_scale("lpa", &["calm", "relaxed"], false),
        ];
        let traits = states.iter().filter_map(|s| s.trait_name.clone()).collect();
        StudyConfig {
            calendar: StudyCalendar::default(),
            triggers: [
                NaiveTime::from_hms_opt(11, 0, 0).unwrap(),
                NaiveTime::from_hms_opt(14, 0, 0).unwrap(),
                NaiveTime::from_hms_opt(17, 0, 0).unwrap(),
            ],
            response_window_minutes: 150,
            items,
            states,
            traits,
            aggregate_hit_threshold: 10,
            alpha: 0.05,
            relevance_threshold: 0.001,
            level_share_floor: 0.10,
            min_design_rows: 30,
            trait_sd: SdKind::Population,
            malformed_row_limit: 0.10,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("study config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for it in &self.items {
            if !(it.max > it.min) {
                return Err(ConfigError::EmptyScale(it.code.clone()));
            }
        }
        for s in &self.states {
            if s.items.is_empty() {
                return Err(ConfigError::EmptyState(s.name.clone()));
            }
            for code in s.items.iter().chain(&s.reverse_items) {
                if self.item(code).is_none() {
                    return Err(ConfigError::UndeclaredItem { state: s.name.clone(), item: code.clone() });
                }
            }
        }
        if self.triggers[0] >= self.triggers[1] || self.triggers[1] >= self.triggers[2] {
            return Err(ConfigError::TriggerOrder);
        }
        let positive: [(&'static str, bool); 6] = [
            ("response_window_minutes", self.response_window_minutes > 0),
            ("aggregate_hit_threshold", self.aggregate_hit_threshold > 0),
            ("alpha", self.alpha > 0.0),
            ("relevance_threshold", self.relevance_threshold > 0.0),
            ("level_share_floor", self.level_share_floor > 0.0),
            ("calendar.n_days", self.calendar.n_days > 0),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(ConfigError::NonPositive(name));
            }
        }
        Ok(())
    }

    pub fn item(&self, code: &str) -> Option<&ItemSpec> {
        self.items.iter().find(|i| i.code == code)
    }

    pub fn state(&self, name: &str) -> Option<&StateDef> {
        self.states.iter().find(|s| s.name == name)
    }

    pub fn trigger(&self, period: Period) -> NaiveTime {
        self.triggers[period.index()]
    }

    pub fn trigger_instant(&self, day: u32, period: Period) -> Option<DateTime<Utc>> {
        let date = self.calendar.date_of(day)?;
        Some(self.calendar.local_instant(date, self.trigger(period)))
    }

    pub fn response_window(&self) -> Duration {
        Duration::minutes(i64::from(self.response_window_minutes))
    }

    /// Contact window `[start trigger, end trigger)` containing `ts`.
    pub fn locate_window(&self, ts: DateTime<Utc>) -> Option<(u32, Slot)> {
        let local = ts.naive_utc() + Duration::minutes(i64::from(self.calendar.utc_offset_minutes));
        let day = self.calendar.day_of(local.date())?;
        let t = local.time();
        if t >= self.triggers[0] && t < self.triggers[1] {
            Some((day, Slot::MorningToMidday))
        } else if t >= self.triggers[1] && t < self.triggers[2] {
            Some((day, Slot::MiddayToAfternoon))
        } else {
            None
        }
    }

    /// Length of a contact window in seconds.
    pub fn window_seconds(&self, slot: Slot) -> i64 {
        (self.trigger(slot.end()) - self.trigger(slot.start())).num_seconds()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = StudyConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.traits.len(), 7);
        assert_eq!(cfg.response_window(), Duration::minutes(150));
        let back = StudyConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn working_day_calendar_round_trips() {
        let cal = StudyCalendar::default();
        for day in 1..=cal.n_days {
            let date = cal.date_of(day).unwrap();
            assert!(!is_weekend(date));
            assert_eq!(cal.day_of(date), Some(day));
        }
        // 30 working days starting on a Monday span six weeks
        assert_eq!(cal.date_of(30).unwrap(), NaiveDate::from_ymd_opt(2012, 4, 13).unwrap());
        assert_eq!(cal.day_of(NaiveDate::from_ymd_opt(2012, 3, 10).unwrap()), None);
        assert_eq!(cal.date_of(31), None);
    }

    #[test]
    fn window_location_is_half_open() {
        let cfg = StudyConfig::default();
        let start = cfg.trigger_instant(1, Period::Morning).unwrap();
        let mid = cfg.trigger_instant(1, Period::Midday).unwrap();
        let end = cfg.trigger_instant(1, Period::Afternoon).unwrap();
        assert_eq!(cfg.locate_window(start), Some((1, Slot::MorningToMidday)));
        assert_eq!(cfg.locate_window(mid - Duration::seconds(1)), Some((1, Slot::MorningToMidday)));
        assert_eq!(cfg.locate_window(mid), Some((1, Slot::MiddayToAfternoon)));
        assert_eq!(cfg.locate_window(end), None);
        assert_eq!(cfg.window_seconds(Slot::MorningToMidday), 3 * 3600);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = StudyConfig::default();
        cfg.states[0].items.clear();
        assert!(matches!(cfg.validate(), Err(ConfigError::EmptyState(_))));
        let mut cfg = StudyConfig::default();
        cfg.alpha = 0.0;
        assert_eq!(cfg.validate(), Err(ConfigError::NonPositive("alpha")));
        let mut cfg = StudyConfig::default();
        cfg.triggers.swap(0, 1);
        assert_eq!(cfg.validate(), Err(ConfigError::TriggerOrder));
    }
}
