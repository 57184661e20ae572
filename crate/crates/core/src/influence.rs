//! Effect taxonomy on top of selected transition models: attraction,
//! repulsion, inertia and push, their adaptation/complementarity grouping,
//! and the SISa contagion conditions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data_model::Level;
use crate::gee::ModelFit;

/// Point at which the trait moderates a slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraitScope {
    LowTrait,
    HighTrait,
    Pooled,
}

impl TraitScope {
    pub const CONDITIONAL: [TraitScope; 2] = [TraitScope::LowTrait, TraitScope::HighTrait];

    pub fn t(self, point: f64) -> f64 {
        match self {
            TraitScope::LowTrait => -point,
            TraitScope::HighTrait => point,
            TraitScope::Pooled => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraitScope::LowTrait => "low",
            TraitScope::HighTrait => "high",
            TraitScope::Pooled => "pooled",
        }
    }
}

impl fmt::Display for TraitScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub fn of(x: f64) -> Sign {
        if x > 0.0 {
            Sign::Positive
        } else if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Negative => "-",
            Sign::Zero => "0",
            Sign::Positive => "+",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Effect {
    Attraction,
    Repulsion,
    Inertia,
    Push,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grouping {
    Adaptation,
    Complementarity,
    None,
}

impl Effect {
    pub fn grouping(self) -> Grouping {
        match self {
            Effect::Attraction | Effect::Inertia => Grouping::Adaptation,
            Effect::Repulsion | Effect::Push => Grouping::Complementarity,
            Effect::None => Grouping::None,
        }
    }
}

impl Grouping {
    pub fn letter(self) -> &'static str {
        match self {
            Grouping::Adaptation => "A",
            Grouping::Complementarity => "C",
            Grouping::None => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSettings {
    /// Coefficients and slopes with smaller magnitude count as zero; 0 disables.
    pub relevance_threshold: f64,
    /// Trait z at which LowTrait / HighTrait slopes are evaluated (as -t / +t).
    pub trait_point: f64,
}

impl Default for ClassifierSettings {
    fn default() -> Self {
        ClassifierSettings { relevance_threshold: 0.001, trait_point: 1.0 }
    }
}

/// Magnitudes at the threshold itself count as relevant; the slack absorbs
/// rounding in values that were printed to three decimals.
fn zero_if_irrelevant(x: f64, threshold: f64) -> f64 {
    if threshold > 0.0 && x.abs() < threshold * (1.0 - 1e-9) {
        0.0
    } else {
        x
    }
}

pub fn intensity_term(z: Level) -> String {
    z.to_string()
}

pub fn interaction_term(z: Level) -> String {
    format!("T*{z}")
}

/// Slope of the logit in the intensity of alters at `z`, evaluated for
/// `scope`. Terms absent from the model and sub-threshold coefficients count
/// as zero. A missing fit has no slopes.
pub fn marginal_slope(fit: Option<&ModelFit>, z: Level, scope: TraitScope, settings: &ClassifierSettings) -> f64 {
    let Some(fit) = fit else {
        return 0.0;
    };
    let thr = settings.relevance_threshold;
    let main = zero_if_irrelevant(fit.coefficient(&intensity_term(z)).unwrap_or(0.0), thr);
    let inter = zero_if_irrelevant(fit.coefficient(&interaction_term(z)).unwrap_or(0.0), thr);
    zero_if_irrelevant(main + inter * scope.t(settings.trait_point), thr)
}

/// Effect of alters at `z` on the transition `x -> y` given the slope sign.
pub fn classify_effect(x: Level, y: Level, z: Level, sign: Sign) -> Effect {
    let up = match sign {
        Sign::Zero => return Effect::None,
        Sign::Positive => true,
        Sign::Negative => false,
    };
    if z == x {
        let stays = y == x;
        return if up == stays { Effect::Inertia } else { Effect::Push };
    }
    let toward = (z < x && y < x) || (z > x && y > x);
    if up == toward {
        Effect::Attraction
    } else {
        Effect::Repulsion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectLabel {
    pub state: String,
    pub from_level: Level,
    pub to_level: Level,
    pub alter_level: Level,
    pub trait_scope: TraitScope,
    pub slope: f64,
    pub slope_sign: Sign,
    pub effect: Effect,
    pub grouping: Grouping,
}

/// Selected models of one state, keyed by (from, to). `None` marks a
/// transition whose fit was not available.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateFits {
    pub state: String,
    #[serde(with = "crate::serde_pairs")]
    pub fits: BTreeMap<(Level, Level), Option<ModelFit>>,
}

impl StateFits {
    pub fn get(&self, x: Level, y: Level) -> Option<&ModelFit> {
        self.fits.get(&(x, y)).and_then(|f| f.as_ref())
    }
}

/// Scopes reported for a fit: trait-conditional if any trait interaction
/// survived, pooled otherwise.
pub fn scopes_for(fit: Option<&ModelFit>) -> Vec<TraitScope> {
    let conditional = fit.is_some_and(|f| Level::ALL.iter().any(|&z| f.index_of(&interaction_term(z)).is_some()));
    if conditional {
        TraitScope::CONDITIONAL.to_vec()
    } else {
        vec![TraitScope::Pooled]
    }
}

/// One label per (alter level, scope) for the transition `x -> y`.
pub fn label_transition(
    state: &str,
    x: Level,
    y: Level,
    fit: Option<&ModelFit>,
    settings: &ClassifierSettings,
) -> Vec<EffectLabel> {
    let mut out = Vec::new();
    for scope in scopes_for(fit) {
        for z in Level::ALL {
            let slope = marginal_slope(fit, z, scope, settings);
            let sign = Sign::of(slope);
            let effect = classify_effect(x, y, z, sign);
            out.push(EffectLabel {
                state: state.to_string(),
                from_level: x,
                to_level: y,
                alter_level: z,
                trait_scope: scope,
                slope,
                slope_sign: sign,
                effect,
                grouping: effect.grouping(),
            });
        }
    }
    out
}

pub fn label_state(fits: &StateFits, settings: &ClassifierSettings) -> Vec<EffectLabel> {
    let mut out = Vec::new();
    for x in Level::ALL {
        for y in Level::ALL {
            out.extend(label_transition(&fits.state, x, y, fits.get(x, y), settings));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Contagion,
    ConditionalContagion,
    NotContagion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContagionVerdict {
    pub state: String,
    pub level: Level,
    /// Scope the verdict refers to; `None` for the combined verdict.
    pub scope: Option<TraitScope>,
    pub verdict: Verdict,
    pub failing: Option<String>,
}

/// The two SISa conditions for level `v` at one scope: (a) the only
/// relevant slope of N -> v is a positive one on alters at v, and (b) no
/// slope of v -> N is relevant. Returns the first failing condition.
fn sisa_failure(fits: &StateFits, v: Level, scope: TraitScope, settings: &ClassifierSettings) -> Option<String> {
    let into = fits.get(Level::N, v);
    for z in Level::ALL {
        let s = marginal_slope(into, z, scope, settings);
        if z == v && !(s > 0.0) {
            return Some(format!("(a) N->{v} has no positive slope on alters at {v}"));
        }
        if z != v && s != 0.0 {
            return Some(format!("(a) N->{v} depends on alters at {z}"));
        }
    }
    let recovery = fits.get(v, Level::N);
    for z in Level::ALL {
        if marginal_slope(recovery, z, scope, settings) != 0.0 {
            return Some(format!("(b) {v}->N depends on alters at {z}"));
        }
    }
    None
}

/// Contagion test for level `v` at a single scope.
pub fn sisa_contagion_test(fits: &StateFits, v: Level, scope: TraitScope, settings: &ClassifierSettings) -> ContagionVerdict {
    let failing = sisa_failure(fits, v, scope, settings);
    ContagionVerdict {
        state: fits.state.clone(),
        level: v,
        scope: Some(scope),
        verdict: if failing.is_none() { Verdict::Contagion } else { Verdict::NotContagion },
        failing,
    }
}

/// Combined verdict: contagion when the conditions hold pooled and in both
/// trait classes, conditional contagion when they hold in exactly one class.
pub fn contagion_verdict(fits: &StateFits, v: Level, settings: &ClassifierSettings) -> ContagionVerdict {
    let pooled = sisa_failure(fits, v, TraitScope::Pooled, settings);
    let low = sisa_failure(fits, v, TraitScope::LowTrait, settings);
    let high = sisa_failure(fits, v, TraitScope::HighTrait, settings);
    let (verdict, failing) = match (&low, &high) {
        (None, None) if pooled.is_none() => (Verdict::Contagion, None),
        (None, None) => (Verdict::NotContagion, pooled.map(|f| format!("pooled: {f}"))),
        (None, Some(f)) => (Verdict::ConditionalContagion, Some(format!("high trait: {f}"))),
        (Some(f), None) => (Verdict::ConditionalContagion, Some(format!("low trait: {f}"))),
        (Some(f), Some(_)) => (Verdict::NotContagion, Some(format!("low trait: {f}"))),
    };
    ContagionVerdict { state: fits.state.clone(), level: v, scope: None, verdict, failing }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub from_level: Level,
    pub to_level: Level,
    pub alter_level: Level,
    pub trait_scope: TraitScope,
    /// Direction of the probability change with more contact.
    pub up: bool,
}

/// Ego level x alter level x trait class grid of adaptation (A) and
/// complementarity (C) marks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupingMatrix {
    #[serde(with = "crate::serde_pairs")]
    pub cells: BTreeMap<(Level, Level, TraitScope), BTreeSet<Grouping>>,
}

impl GroupingMatrix {
    /// Cell text: "A", "C", "A/C" or empty.
    pub fn cell(&self, ego: Level, alter: Level, scope: TraitScope) -> String {
        match self.cells.get(&(ego, alter, scope)) {
            None => String::new(),
            Some(g) => g.iter().map(|g| g.letter()).collect::<Vec<_>>().join("/"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDiagram {
    pub state: String,
    pub arrows: Vec<Arrow>,
    pub labels: Vec<EffectLabel>,
    pub matrix: GroupingMatrix,
    /// Transitions (out of 9) with at least one labeled effect.
    pub labeled_transitions: usize,
    /// (transition, trait class) pairs with a labeled effect; pooled labels
    /// count for both classes.
    pub labeled_transition_classes: usize,
}

pub fn build_diagram(fits: &StateFits, settings: &ClassifierSettings) -> TransitionDiagram {
    let labels = label_state(fits, settings);
    let mut arrows = Vec::new();
    let mut matrix = GroupingMatrix::default();
    let mut transitions = BTreeSet::new();
    let mut transition_classes = BTreeSet::new();
    for l in labels.iter().filter(|l| l.effect != Effect::None) {
        arrows.push(Arrow {
            from_level: l.from_level,
            to_level: l.to_level,
            alter_level: l.alter_level,
            trait_scope: l.trait_scope,
            up: l.slope_sign == Sign::Positive,
        });
        transitions.insert((l.from_level, l.to_level));
        let classes: &[TraitScope] = match l.trait_scope {
            TraitScope::Pooled => &TraitScope::CONDITIONAL,
            TraitScope::LowTrait => &[TraitScope::LowTrait],
            TraitScope::HighTrait => &[TraitScope::HighTrait],
        };
        for &c in classes {
            transition_classes.insert((l.from_level, l.to_level, c));
            matrix.cells.entry((l.from_level, l.alter_level, c)).or_default().insert(l.grouping);
        }
    }
    TransitionDiagram {
        state: fits.state.clone(),
        arrows,
        labeled_transitions: transitions.len(),
        labeled_transition_classes: transition_classes.len(),
        labels,
        matrix,
    }
}

/// "k out of n" coverage over several states, counting each labeled
/// transition once.
pub fn coverage(diagrams: &[TransitionDiagram]) -> (usize, usize) {
    (diagrams.iter().map(|d| d.labeled_transitions).sum(), 9 * diagrams.len())
}
