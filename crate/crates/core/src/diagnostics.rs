//! Diurnal diagnostics: one-way ANOVA of state scores across periods of
//! the day or days of the week, with Tukey-Kramer pairwise comparisons.

use std::collections::BTreeMap;

use chrono::Weekday;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, FisherSnedecor, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::data_model::StudyConfig;
use crate::scoring::StateScore;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grouping {
    PeriodOfDay,
    DayOfWeek,
}

impl Grouping {
    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::PeriodOfDay => "period_of_day",
            Grouping::DayOfWeek => "day_of_week",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("need at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group `{0}` has fewer than two observations")]
    GroupTooSmall(String),
    #[error("no within-group variation")]
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub grouping: Grouping,
    pub state: String,
    pub welch: bool,
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p: f64,
    pub groups: Vec<GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyComparison {
    pub state: String,
    pub group_a: String,
    pub group_b: String,
    /// mean(a) - mean(b).
    pub diff: f64,
    pub q: f64,
    pub p_adjusted: f64,
}

/// Ordered groups of values: (sort key, label) to values.
pub type Groups = BTreeMap<(u32, String), Vec<f64>>;

fn weekday_label(w: Weekday) -> &'static str {
    match w {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

/// Groups the scores of one state.
pub fn group_scores(scores: &[StateScore], grouping: Grouping, config: &StudyConfig) -> Groups {
    let mut groups = Groups::new();
    for s in scores {
        let key = match grouping {
            Grouping::PeriodOfDay => (s.period.index() as u32, s.period.as_str().to_string()),
            Grouping::DayOfWeek => match config.calendar.day_of_week(s.day) {
                Some(w) => (w.num_days_from_monday(), weekday_label(w).to_string()),
                None => continue,
            },
        };
        groups.entry(key).or_default().push(s.score);
    }
    groups
}

fn group_stats(groups: &Groups) -> Result<Vec<GroupStats>, DiagnosticsError> {
    if groups.len() < 2 {
        return Err(DiagnosticsError::TooFewGroups(groups.len()));
    }
    groups
        .iter()
        .map(|((_, label), xs)| {
            if xs.len() < 2 {
                return Err(DiagnosticsError::GroupTooSmall(label.clone()));
            }
            Ok(GroupStats { label: label.clone(), n: xs.len(), mean: stats::mean(xs), variance: stats::variance(xs, 1) })
        })
        .collect()
}

/// Pooled within-group mean square and its degrees of freedom.
fn within(groups: &[GroupStats]) -> (f64, f64) {
    let n: usize = groups.iter().map(|g| g.n).sum();
    let ss: f64 = groups.iter().map(|g| g.variance * (g.n - 1) as f64).sum();
    let df = (n - groups.len()) as f64;
    (ss / df, df)
}

/// Classical equal-variance one-way ANOVA, or Welch's heteroscedastic
/// variant when `welch` is set.
pub fn one_way_anova(groups: &Groups, welch: bool) -> Result<(f64, f64, f64, f64, Vec<GroupStats>), DiagnosticsError> {
    let gs = group_stats(groups)?;
    let k = gs.len() as f64;
    if welch {
        if gs.iter().any(|g| !(g.variance > 0.0)) {
            return Err(DiagnosticsError::Degenerate);
        }
        let w: Vec<f64> = gs.iter().map(|g| g.n as f64 / g.variance).collect();
        let sw: f64 = w.iter().sum();
        let grand = gs.iter().zip(&w).map(|(g, wi)| wi * g.mean).sum::<f64>() / sw;
        let between = gs.iter().zip(&w).map(|(g, wi)| wi * (g.mean - grand).powi(2)).sum::<f64>() / (k - 1.0);
        let lambda: f64 = gs.iter().zip(&w).map(|(g, wi)| (1.0 - wi / sw).powi(2) / (g.n as f64 - 1.0)).sum();
        let f = between / (1.0 + 2.0 * (k - 2.0) * lambda / (k * k - 1.0));
        let df2 = (k * k - 1.0) / (3.0 * lambda);
        let p = f_sf(f, k - 1.0, df2);
        return Ok((f, k - 1.0, df2, p, gs));
    }
    let n: usize = gs.iter().map(|g| g.n).sum();
    let grand = gs.iter().map(|g| g.mean * g.n as f64).sum::<f64>() / n as f64;
    let ss_between: f64 = gs.iter().map(|g| g.n as f64 * (g.mean - grand).powi(2)).sum();
    let (ms_within, df_within) = within(&gs);
    if !(ms_within > 0.0) {
        if ss_between == 0.0 {
            return Ok((0.0, k - 1.0, df_within, 1.0, gs));
        }
        return Err(DiagnosticsError::Degenerate);
    }
    let f = ss_between / (k - 1.0) / ms_within;
    Ok((f, k - 1.0, df_within, f_sf(f, k - 1.0, df_within), gs))
}

fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    FisherSnedecor::new(d1, d2).map(|d| d.sf(f)).unwrap_or(f64::NAN).clamp(0.0, 1.0)
}

pub fn anova_by_group(
    scores: &[StateScore],
    state: &str,
    grouping: Grouping,
    config: &StudyConfig,
    welch: bool,
) -> Result<AnovaResult, DiagnosticsError> {
    let groups = group_scores(scores, grouping, config);
    let (f, df_between, df_within, p, groups) = one_way_anova(&groups, welch)?;
    Ok(AnovaResult { grouping, state: state.to_string(), welch, f, df_between, df_within, p, groups })
}

/// Tukey-Kramer comparisons of every pair of groups (a listed before b).
pub fn tukey_hsd_groups(groups: &Groups, state: &str) -> Result<Vec<TukeyComparison>, DiagnosticsError> {
    let gs = group_stats(groups)?;
    let (ms_within, df) = within(&gs);
    if !(ms_within > 0.0) {
        return Err(DiagnosticsError::Degenerate);
    }
    let k = gs.len();
    let mut out = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (&gs[i], &gs[j]);
            let diff = a.mean - b.mean;
            let se = (ms_within / 2.0 * (1.0 / a.n as f64 + 1.0 / b.n as f64)).sqrt();
            let q = diff.abs() / se;
            out.push(TukeyComparison {
                state: state.to_string(),
                group_a: a.label.clone(),
                group_b: b.label.clone(),
                diff,
                q,
                p_adjusted: (1.0 - ptukey(q, k, df)).clamp(0.0, 1.0),
            });
        }
    }
    Ok(out)
}

pub fn tukey_hsd(
    scores: &[StateScore],
    state: &str,
    grouping: Grouping,
    config: &StudyConfig,
) -> Result<Vec<TukeyComparison>, DiagnosticsError> {
    tukey_hsd_groups(&group_scores(scores, grouping, config), state)
}

/// Unadjusted pooled-variance t-test p-value for one pair of groups.
pub fn pairwise_t_p(groups: &Groups, a: &str, b: &str) -> Result<f64, DiagnosticsError> {
    let gs = group_stats(groups)?;
    let (ms_within, df) = within(&gs);
    let find = |l: &str| gs.iter().find(|g| g.label == l).ok_or(DiagnosticsError::TooFewGroups(0));
    let (ga, gb) = (find(a)?, find(b)?);
    let t = (ga.mean - gb.mean) / (ms_within * (1.0 / ga.n as f64 + 1.0 / gb.n as f64)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| DiagnosticsError::Degenerate)?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// CDF of the range of `k` standard normals.
fn range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let n = Normal::standard();
    let kf = k as f64;
    let v = simpson(|z| n.pdf(z) * (n.cdf(z) - n.cdf(z - w)).max(0.0).powi(k as i32 - 1), -8.0, 8.0 + w, 240);
    (kf * v).clamp(0.0, 1.0)
}

/// CDF of the studentized range with `k` groups and `df` error degrees of
/// freedom, by integrating the normal-range CDF against the density of the
/// scaled chi variable s = sqrt(chi2_df / df).
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if df > 5_000.0 {
        return range_cdf(q, k);
    }
    let half = df / 2.0;
    let log_norm = half * df.ln() - ln_gamma(half) - (half - 1.0) * std::f64::consts::LN_2;
    let density = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (log_norm + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
        }
    };
    let spread = 8.0 / (2.0 * df).sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread.max(0.5) + if df < 3.0 { 6.0 } else { 0.0 };
    simpson(|s| density(s) * range_cdf(q * s, k), lo, hi, 300).clamp(0.0, 1.0)
}
