//! Batch steps of the pipeline. Each `cmd_*` reads files written by the
//! previous step, writes its own outputs atomically and returns a manifest.
//!
//! The in-memory helpers (`prepare`, `extract_all`, `fit_all`, ...) are the
//! same code path without the file handoffs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    corpus_stats, parse_ir_log, parse_surveys, parse_traits, ConfigError, DataError, Level, ParticipantId, Reject, StudyConfig,
    SurveyResponse, TraitSurvey,
};
use crate::diagnostics::{self, AnovaResult, TukeyComparison};
use crate::gee::{
    backward_eliminate, Chosen, CorrelationKind, Design, GeeSettings, ModelFit, Selection, SelectionSettings, INTERCEPT,
};
use crate::influence::{
    build_diagram, contagion_verdict, coverage, sisa_contagion_test, ClassifierSettings, ContagionVerdict, StateFits, TraitScope,
    TransitionDiagram,
};
use crate::network::{
    build_windows_from_runs, degree_and_interaction_stats, homophily_similarity, EgoWindow, HitRun, HomophilyRow, WindowReport,
};
use crate::report::{self, num, opt_num, sha256_hex, OutputDir, RunManifest};
use crate::scoring::{normalize_traits, quantize_states, score_state, LevelTable, ScoringError, TraitProfile};
use crate::simulator::{run_scenario, ScenarioConfig, ScenarioError, SyntheticCorpus};
use crate::transitions::{build_design, transition_count_table, CountMatrix, TransitionError, TransitionSet, COVARIATES};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("missing input artifact: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: {source}", path.display())]
    Data { path: PathBuf, source: DataError },
    #[error("invalid input {}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("cannot start worker pool: {0}")]
    Workers(String),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Io(_) | CommandError::Workers(_) => 1,
            _ => 2,
        }
    }
}

/// Result of a command that ran to completion. `failures` lists fits that
/// did not converge or could not be selected; reports are written anyway.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub manifest: RunManifest,
    pub failures: Vec<String>,
}

impl CommandOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            3
        }
    }
}

/// Command-line overrides of the analysis settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub relevance_threshold: Option<f64>,
    pub correlation: Option<CorrelationKind>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub gee: GeeSettings,
    pub selection: SelectionSettings,
    pub classifier: ClassifierSettings,
    pub min_rows: usize,
    pub workers: usize,
}

impl AnalysisSettings {
    pub fn from_config(config: &StudyConfig) -> Self {
        AnalysisSettings {
            gee: GeeSettings::default(),
            selection: SelectionSettings { alpha: config.alpha, ..Default::default() },
            classifier: ClassifierSettings { relevance_threshold: config.relevance_threshold, ..Default::default() },
            min_rows: config.min_design_rows,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        if let Some(a) = o.alpha {
            self.selection.alpha = a;
        }
        if let Some(t) = o.relevance_threshold {
            self.classifier.relevance_threshold = t;
        }
        if let Some(c) = o.correlation {
            self.gee.correlation = c;
        }
        if let Some(w) = o.workers {
            self.workers = w.max(1);
        }
        self
    }
}

/// Levels, traits and contact windows of one corpus.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub levels: LevelTable,
    pub traits: Vec<TraitProfile>,
    pub windows: Vec<EgoWindow>,
    pub window_report: WindowReport,
    pub pool: BTreeSet<ParticipantId>,
}

/// Scores and quantizes the surveys, standardizes traits and builds the
/// contact windows. Participants are those with a survey or a trait record.
pub fn prepare<'a>(
    runs: impl IntoIterator<Item = HitRun<'a>>,
    surveys: &[SurveyResponse],
    trait_surveys: &[TraitSurvey],
    config: &StudyConfig,
) -> Result<Prepared, ScoringError> {
    let mut pool: BTreeSet<ParticipantId> = surveys.iter().map(|s| s.participant.clone()).collect();
    pool.extend(trait_surveys.iter().map(|t| t.participant.clone()));
    let levels = quantize_states(surveys, config);
    let traits = normalize_traits(trait_surveys, config.trait_sd)?;
    let build = build_windows_from_runs(runs, surveys, &levels, &pool, config);
    Ok(Prepared { levels, traits, windows: build.windows, window_report: build.report, pool })
}

pub fn prepare_corpus(corpus: &SyntheticCorpus) -> Result<Prepared, ScoringError> {
    let pool = corpus.pool();
    let mut p = prepare(corpus.hit_runs(), &corpus.surveys, &corpus.traits, &corpus.study)?;
    p.pool = pool;
    Ok(p)
}

/// Transition sets of every kept state that has a matching trait.
pub fn extract_all(prepared: &Prepared, config: &StudyConfig) -> Vec<TransitionSet> {
    prepared
        .levels
        .kept_states()
        .filter_map(|q| {
            let def = config.state(&q.state)?;
            let Some(trait_name) = def.trait_name.as_deref() else {
                log::warn!("state `{}` has no trait; skipped", q.state);
                return None;
            };
            Some(crate::transitions::extract_transitions(
                &prepared.levels,
                &prepared.windows,
                &prepared.traits,
                &q.state,
                trait_name,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Selected { selection: Selection },
    InsufficientData { min_rows: usize },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub state: String,
    pub from: Level,
    pub to: Level,
    pub n_rows: usize,
    pub outcome: FitOutcome,
}

impl FitRecord {
    pub fn selected(&self) -> Option<&ModelFit> {
        match &self.outcome {
            FitOutcome::Selected { selection } => Some(&selection.fit),
            _ => None,
        }
    }

    pub fn selection(&self) -> Option<&Selection> {
        match &self.outcome {
            FitOutcome::Selected { selection } => Some(selection),
            _ => None,
        }
    }

    /// QICC of the full model: the starting point of the first drop, or the
    /// submodel itself when nothing was dropped.
    pub fn full_qicc(&self) -> Option<f64> {
        let t = &self.selection()?.trace;
        if t.notes.iter().any(|n| n.starts_with("full model failed")) {
            return None;
        }
        t.steps.first().map(|s| s.qicc_before).or(t.submodel_qicc)
    }

    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.state, self.from, self.to)
    }
}

pub fn fit_transition(set: &TransitionSet, from: Level, to: Level, settings: &AnalysisSettings) -> FitRecord {
    let mut record = FitRecord {
        state: set.state.clone(),
        from,
        to,
        n_rows: 0,
        outcome: FitOutcome::InsufficientData { min_rows: settings.min_rows },
    };
    match build_design(&set.records, from, to, settings.min_rows) {
        Err(TransitionError::InsufficientData { n_rows, .. }) => record.n_rows = n_rows,
        Ok(rows) => {
            record.n_rows = rows.len();
            let design = Design::from_rows(&rows);
            record.outcome = match backward_eliminate(&design, &design.full_terms(), &settings.gee, &settings.selection) {
                Ok(selection) => FitOutcome::Selected { selection },
                Err(e) => {
                    log::warn!("{} {from}->{to}: {e}", set.state);
                    FitOutcome::Failed { error: e.to_string() }
                }
            };
        }
    }
    record
}

/// Fits the nine transitions of every set, spread over `settings.workers`
/// threads. Output order is (set, from, to) regardless of scheduling.
pub fn fit_all(sets: &[TransitionSet], settings: &AnalysisSettings) -> Result<Vec<FitRecord>, CommandError> {
    let jobs: Vec<(&TransitionSet, Level, Level)> = sets
        .iter()
        .flat_map(|s| Level::ALL.into_iter().flat_map(move |f| Level::ALL.into_iter().map(move |t| (s, f, t))))
        .collect();
    if settings.workers <= 1 {
        return Ok(jobs.iter().map(|&(s, f, t)| fit_transition(s, f, t, settings)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers)
        .build()
        .map_err(|e| CommandError::Workers(e.to_string()))?;
    Ok(pool.install(|| jobs.par_iter().map(|&(s, f, t)| fit_transition(s, f, t, settings)).collect()))
}

/// Groups fit records by state (sorted by name).
pub fn state_fits(records: &[FitRecord]) -> Vec<StateFits> {
    let mut out: BTreeMap<&str, StateFits> = BTreeMap::new();
    for r in records {
        let e = out.entry(&r.state).or_insert_with(|| StateFits { state: r.state.clone(), ..Default::default() });
        e.fits.insert((r.from, r.to), r.selected().cloned());
    }
    out.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub diagrams: Vec<TransitionDiagram>,
    /// Per-scope and combined verdicts for levels L and H of every state.
    pub verdicts: Vec<ContagionVerdict>,
    pub labeled: usize,
    pub possible: usize,
}

pub fn classify_all(fits: &[StateFits], settings: &ClassifierSettings) -> Classification {
    let diagrams: Vec<TransitionDiagram> = fits.iter().map(|f| build_diagram(f, settings)).collect();
    let mut verdicts = Vec::new();
    for f in fits {
        for v in [Level::L, Level::H] {
            for scope in [TraitScope::Pooled, TraitScope::LowTrait, TraitScope::HighTrait] {
                verdicts.push(sisa_contagion_test(f, v, scope, settings));
            }
            verdicts.push(contagion_verdict(f, v, settings));
        }
    }
    let (labeled, possible) = coverage(&diagrams);
    Classification { diagrams, verdicts, labeled, possible }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CommandError> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CommandError::MissingInput(path.to_path_buf()),
        _ => CommandError::Invalid { path: path.to_path_buf(), message: e.to_string() },
    })
}

/// Inputs are keyed by `<parent dir name>/<file name>` so digests do not
/// depend on where a run directory lives.
fn input_key(path: &Path) -> String {
    let name = |p: Option<&Path>| p.and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    format!("{}/{}", name(path.parent()), name(Some(path)))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, digests: &mut BTreeMap<String, String>) -> Result<T, CommandError> {
    let bytes = read_input(path)?;
    digests.insert(input_key(path), sha256_hex(&bytes));
    serde_json::from_slice(&bytes).map_err(|e| CommandError::Invalid { path: path.to_path_buf(), message: e.to_string() })
}

/// Loads the study configuration from `explicit`, else from `study.toml`
/// inside `dir`, else the built-in defaults.
pub fn load_config(explicit: Option<&Path>, dir: Option<&Path>) -> Result<(StudyConfig, String), CommandError> {
    let candidate = explicit.map(Path::to_path_buf).or_else(|| dir.map(|d| d.join("study.toml")).filter(|p| p.exists()));
    let config = match candidate {
        Some(p) => {
            let text = String::from_utf8(read_input(&p)?)
                .map_err(|e| CommandError::Invalid { path: p.clone(), message: e.to_string() })?;
            StudyConfig::from_toml(&text)?
        }
        None => StudyConfig::default(),
    };
    config.validate()?;
    let digest = sha256_hex(config.to_toml().as_bytes());
    Ok((config, digest))
}

fn finish(
    mut manifest: RunManifest,
    out: &mut OutputDir,
    started: Instant,
    failures: Vec<String>,
) -> Result<CommandOutcome, CommandError> {
    manifest.outputs = out.written().to_vec();
    manifest.duration_ms = started.elapsed().as_millis() as u64;
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    out.put("manifest.json", text.as_bytes())?;
    log::info!("{}: {} outputs in {} ms", manifest.command, manifest.outputs.len(), manifest.duration_ms);
    Ok(CommandOutcome { manifest, failures })
}

#[derive(Debug, Clone)]
pub struct IngestArgs {
    /// Directory holding `ir.csv`, `surveys.csv` and `traits.csv`.
    pub input: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestDiagnostics {
    pub homophily: BTreeMap<String, Vec<HomophilyRow>>,
    pub anova: Vec<AnovaResult>,
    pub tukey: Vec<(String, Vec<TukeyComparison>)>,
}

#[derive(Serialize)]
struct IngestStats<'a> {
    corpus: crate::data_model::CorpusStats,
    windows: &'a WindowReport,
    rejects: BTreeMap<&'a str, usize>,
    rows_read: BTreeMap<&'a str, usize>,
    exclusions: BTreeMap<&'a str, crate::transitions::TransitionExclusions>,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<CommandOutcome, CommandError> {
    let started = Instant::now();
    let (config, config_digest) = load_config(args.config.as_deref(), Some(&args.input))?;
    let mut digests = BTreeMap::new();
    let mut load = |name: &str| -> Result<(PathBuf, Vec<u8>), CommandError> {
        let path = args.input.join(name);
        let bytes = read_input(&path)?;
        digests.insert(name.to_string(), sha256_hex(&bytes));
        Ok((path, bytes))
    };
    let (ir_path, ir_bytes) = load("ir.csv")?;
    let (sv_path, sv_bytes) = load("surveys.csv")?;
    let (tr_path, tr_bytes) = load("traits.csv")?;
    let ir = parse_ir_log(ir_bytes.as_slice(), &config).map_err(|source| CommandError::Data { path: ir_path, source })?;
    let sv = parse_surveys(sv_bytes.as_slice(), &config).map_err(|source| CommandError::Data { path: sv_path, source })?;
    let tr = parse_traits(tr_bytes.as_slice(), &config).map_err(|source| CommandError::Data { path: tr_path, source })?;

    let runs = ir.events.iter().map(|e| HitRun { timestamp: e.timestamp, ego: &e.ego, alter: &e.alter, count: 1 });
    let prepared = prepare(runs, &sv.responses, &tr.surveys, &config)?;
    let sets = extract_all(&prepared, &config);
    let states: Vec<String> = prepared.levels.states.iter().map(|s| s.state.clone()).collect();
    let kept: Vec<String> = sets.iter().map(|s| s.state.clone()).collect();

    let manifest = RunManifest::new("ingest", config_digest, digests, None);
    let mut out = OutputDir::new(&args.out, &manifest.run_digest)?;

    let stats = IngestStats {
        corpus: corpus_stats(&ir.events, &sv.responses, &prepared.windows, &config),
        windows: &prepared.window_report,
        rejects: [("ir", ir.rejects.len()), ("surveys", sv.rejects.len()), ("traits", tr.rejects.len())].into(),
        rows_read: [("ir", ir.total_rows), ("surveys", sv.total_rows), ("traits", tr.total_rows)].into(),
        exclusions: sets.iter().map(|s| (s.state.as_str(), s.exclusions)).collect(),
    };
    out.put_json("stats.json", &stats)?;

    let rejects: Vec<&Reject> = ir.rejects.iter().chain(&sv.rejects).chain(&tr.rejects).collect();
    out.put_csv(
        "rejects.csv",
        &["source", "line", "reason", "raw"].map(String::from),
        rejects.iter().map(|r| vec![r.source.clone(), r.line.to_string(), r.reason.to_string(), r.raw.clone()]).collect(),
    )?;
    out.put_json("quantization.json", &prepared.levels.states)?;
    out.put_csv(
        "levels.csv",
        &["participant_id", "day", "period", "state", "centered_score", "level"].map(String::from),
        prepared
            .levels
            .assignments
            .iter()
            .map(|a| {
                vec![
                    a.participant.to_string(),
                    a.day.to_string(),
                    a.period.to_string(),
                    a.state.clone(),
                    num(a.score),
                    a.level.to_string(),
                ]
            })
            .collect(),
    )?;
    let (h, rows) = report::windows_table(&prepared.windows, &states);
    out.put_csv("windows.csv", &h, rows)?;
    let (h, rows) = report::intensity_table(&prepared.windows, &kept);
    out.put_csv("intensity.csv", &h, rows)?;
    let (h, rows) = report::transitions_table(sets.iter().flat_map(|s| &s.records));
    out.put_csv("transitions.csv", &h, rows)?;
    out.put_json("transitions.json", &sets)?;
    let counts: BTreeMap<String, CountMatrix> =
        sets.iter().map(|s| (s.state.clone(), CountMatrix::from_records(&s.records))).collect();
    let (h, rows) = report::counts_table(&counts);
    out.put_csv("transition_counts.csv", &h, rows)?;

    let degrees = degree_and_interaction_stats(&prepared.windows, &prepared.pool);
    let q = |x: &Option<crate::network::Quartiles>| match x {
        Some(q) => vec![num(q.min), num(q.q1), num(q.median), num(q.q3), num(q.max)],
        None => vec!["NA".to_string(); 5],
    };
    out.put_csv(
        "degrees.csv",
        &[
            "participant_id",
            "n_windows",
            "alters_min",
            "alters_q1",
            "alters_median",
            "alters_q3",
            "alters_max",
            "hits_min",
            "hits_q1",
            "hits_median",
            "hits_q3",
            "hits_max",
        ]
        .map(String::from),
        degrees
            .iter()
            .map(|(p, d)| {
                let mut r = vec![p.to_string(), d.n_windows.to_string()];
                r.extend(q(&d.alters));
                r.extend(q(&d.hits));
                r
            })
            .collect(),
    )?;

    let diag = ingest_diagnostics(&prepared, &sv.responses, &kept, &config);
    let (h, rows) = report::homophily_table(&diag.homophily);
    out.put_csv("homophily.csv", &h, rows)?;
    let (h, rows) = report::diurnal_table(&diag.anova);
    out.put_csv("diurnal.csv", &h, rows)?;
    let (h, rows) = report::tukey_table(&diag.tukey);
    out.put_csv("tukey.csv", &h, rows)?;
    out.put_json("diagnostics.json", &diag)?;
    out.put("study.toml", config.to_toml().as_bytes())?;
    finish(manifest, &mut out, started, Vec::new())
}

fn ingest_diagnostics(
    prepared: &Prepared,
    surveys: &[SurveyResponse],
    states: &[String],
    config: &StudyConfig,
) -> IngestDiagnostics {
    let mut diag = IngestDiagnostics::default();
    for state in states {
        diag.homophily.insert(state.clone(), homophily_similarity(&prepared.windows, &prepared.levels, state));
        let Some(def) = config.state(state) else { continue };
        let scores: Vec<_> = surveys.iter().filter_map(|r| score_state(r, def, config)).collect();
        for grouping in [diagnostics::Grouping::PeriodOfDay, diagnostics::Grouping::DayOfWeek] {
            match diagnostics::anova_by_group(&scores, state, grouping, config, false) {
                Ok(a) => diag.anova.push(a),
                Err(e) => log::warn!("{state} {}: {e}", grouping.as_str()),
            }
            match diagnostics::tukey_hsd(&scores, state, grouping, config) {
                Ok(t) => diag.tukey.push((grouping.as_str().to_string(), t)),
                Err(e) => log::warn!("{state} {} tukey: {e}", grouping.as_str()),
            }
        }
    }
    diag
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub scenario: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<CommandOutcome, CommandError> {
    let started = Instant::now();
    let mut scenario = match &args.scenario {
        Some(p) => {
            let text = String::from_utf8(read_input(p)?)
                .map_err(|e| CommandError::Invalid { path: p.clone(), message: e.to_string() })?;
            ScenarioConfig::from_toml(&text)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let corpus = run_scenario(&scenario)?;
    let manifest = RunManifest::new("simulate", sha256_hex(scenario.to_toml().as_bytes()), BTreeMap::new(), Some(scenario.seed));
    let mut out = OutputDir::new(&args.out, &manifest.run_digest)?;
    let written = corpus.write(&args.out)?;
    for p in written {
        if let Some(name) = p.file_name() {
            out.put(&name.to_string_lossy(), &std::fs::read(&p)?)?;
        }
    }
    out.put("scenario.toml", scenario.to_toml().as_bytes())?;
    finish(manifest, &mut out, started, Vec::new())
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    /// Output directory of `ingest`.
    pub input: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub out: PathBuf,
}

pub fn cmd_fit(args: &FitArgs) -> Result<CommandOutcome, CommandError> {
    let started = Instant::now();
    let (config, config_digest) = load_config(args.config.as_deref(), Some(&args.input))?;
    let settings = AnalysisSettings::from_config(&config).with_overrides(&args.overrides);
    let mut digests = BTreeMap::new();
    let sets: Vec<TransitionSet> = read_json(&args.input.join("transitions.json"), &mut digests)?;
    let records = fit_all(&sets, &settings)?;

    let settings_digest = sha256_hex(serde_json::to_string(&SettingsDigest::of(&settings)).unwrap_or_default().as_bytes());
    let manifest = RunManifest::new("fit", format!("{config_digest}+{settings_digest}"), digests, None);
    let mut out = OutputDir::new(&args.out, &manifest.run_digest)?;
    for r in &records {
        if let Some(set) = sets.iter().find(|s| s.state == r.state) {
            if let Ok(rows) = build_design(&set.records, r.from, r.to, 0) {
                let (h, body) = report::design_table(&rows);
                out.put_csv(&format!("design_{}.csv", r.label()), &h, body)?;
            }
        }
        out.put_json(&format!("fit_{}.json", r.label()), r)?;
    }
    out.put_json("fits.json", &FitsFile { settings, records: records.clone() })?;
    let (h, rows) = fits_table(&records);
    out.put_csv("fits.csv", &h, rows)?;
    let (h, rows) = qicc_table(&records);
    out.put_csv("qicc.csv", &h, rows)?;
    let failures = records
        .iter()
        .filter_map(|r| match &r.outcome {
            FitOutcome::Failed { error } => Some(format!("{} {}->{}: {error}", r.state, r.from, r.to)),
            _ => None,
        })
        .collect();
    finish(manifest, &mut out, started, failures)
}

/// Settings that influence results (the worker count does not).
#[derive(Serialize)]
struct SettingsDigest {
    gee: GeeSettings,
    selection: SelectionSettings,
    classifier: ClassifierSettings,
    min_rows: usize,
}

impl SettingsDigest {
    fn of(s: &AnalysisSettings) -> Self {
        SettingsDigest { gee: s.gee, selection: s.selection, classifier: s.classifier, min_rows: s.min_rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsFile {
    pub settings: AnalysisSettings,
    pub records: Vec<FitRecord>,
}

fn status(r: &FitRecord) -> &'static str {
    match &r.outcome {
        FitOutcome::Selected { selection } => match selection.trace.chosen {
            Chosen::SubModel => "submodel",
            Chosen::NullModel => "null",
        },
        FitOutcome::InsufficientData { .. } => "insufficient_data",
        FitOutcome::Failed { .. } => "failed",
    }
}

/// Long table of every selected coefficient.
pub fn fits_table(records: &[FitRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows = Vec::new();
    for r in records {
        match r.selected() {
            Some(f) => {
                for (i, t) in f.terms.iter().enumerate() {
                    rows.push(vec![
                        r.state.clone(),
                        r.from.to_string(),
                        r.to.to_string(),
                        t.clone(),
                        num(f.coefficients[i]),
                        num(f.std_errors[i]),
                        num(f.p_values[i]),
                        status(r).to_string(),
                    ]);
                }
            }
            None => rows.push(vec![
                r.state.clone(),
                r.from.to_string(),
                r.to.to_string(),
                String::new(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                status(r).into(),
            ]),
        }
    }
    (["state", "from", "to", "term", "coefficient", "std_error", "p_value", "status"].map(String::from).to_vec(), rows)
}

/// Full, selected and null QICC per transition. When the null model wins
/// only its QICC is reported.
pub fn qicc_table(records: &[FitRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![r.state.clone(), format!("{}->{}", r.from, r.to), r.n_rows.to_string(), status(r).to_string()];
            match r.selection() {
                Some(s) if s.trace.chosen == Chosen::NullModel => {
                    row.extend([String::new(), String::new(), opt_num(s.trace.null_qicc)]);
                }
                Some(s) => row.extend([opt_num(r.full_qicc()), opt_num(s.trace.submodel_qicc), opt_num(s.trace.null_qicc)]),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            row
        })
        .collect();
    (["state", "transition", "n_rows", "chosen", "full_qicc", "selected_qicc", "null_qicc"].map(String::from).to_vec(), rows)
}

/// One table per state: a row per term, a coefficient and a p-value column
/// per transition; blank cells are terms dropped by the selection.
pub fn state_fit_table(state: &str, records: &[FitRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let mine: Vec<&FitRecord> = records.iter().filter(|r| r.state == state).collect();
    let mut header = vec!["term".to_string()];
    for r in &mine {
        header.push(format!("{}->{} coef", r.from, r.to));
        header.push(format!("{}->{} p", r.from, r.to));
    }
    let mut terms = vec![INTERCEPT.to_string()];
    terms.extend(COVARIATES.iter().map(|c| c.to_string()));
    let mut rows: Vec<Vec<String>> = terms
        .iter()
        .map(|t| {
            let mut row = vec![t.clone()];
            for r in &mine {
                match r.selected().and_then(|f| f.index_of(t).map(|i| (f.coefficients[i], f.p_values[i]))) {
                    Some((c, p)) => row.extend([format!("{c:.4}"), format!("{p:.4}")]),
                    None => row.extend([String::new(), String::new()]),
                }
            }
            row
        })
        .collect();
    let mut q = vec!["QICC".to_string()];
    for r in &mine {
        let v = r.selection().map(|s| match s.trace.chosen {
            Chosen::NullModel => s.trace.null_qicc,
            Chosen::SubModel => s.trace.submodel_qicc,
        });
        q.push(v.flatten().map(|x| format!("{x:.2}")).unwrap_or_default());
        q.push(status(r).to_string());
    }
    rows.push(q);
    (header, rows)
}

#[derive(Debug, Clone)]
pub struct ClassifyArgs {
    /// Output directory of `fit`.
    pub input: PathBuf,
    pub overrides: Overrides,
    pub out: PathBuf,
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<CommandOutcome, CommandError> {
    let started = Instant::now();
    let mut digests = BTreeMap::new();
    let fits: FitsFile = read_json(&args.input.join("fits.json"), &mut digests)?;
    let settings = fits.settings.with_overrides(&args.overrides);
    let by_state = state_fits(&fits.records);
    let classification = classify_all(&by_state, &settings.classifier);
    let settings_digest = sha256_hex(serde_json::to_string(&settings.classifier).unwrap_or_default().as_bytes());
    let manifest = RunManifest::new("classify", settings_digest, digests, None);
    let mut out = OutputDir::new(&args.out, &manifest.run_digest)?;
    for d in &classification.diagrams {
        out.put_json(&format!("effects_{}.json", d.state), &d.labels)?;
    }
    out.put_json("classification.json", &classification)?;
    let (h, rows) = report::summary_matrix_table(&classification.diagrams);
    out.put_csv("summary_matrix.csv", &h, rows)?;
    out.put_csv("coverage.csv", &coverage_header(), coverage_rows(&classification))?;
    let (h, rows) = report::contagion_table(&classification.verdicts);
    out.put_csv("contagion.csv", &h, rows)?;
    finish(manifest, &mut out, started, Vec::new())
}

fn coverage_header() -> Vec<String> {
    ["state", "labeled_transitions", "possible", "labeled_transition_classes", "summary"].map(String::from).to_vec()
}

fn coverage_rows(c: &Classification) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = c
        .diagrams
        .iter()
        .map(|d| {
            vec![
                d.state.clone(),
                d.labeled_transitions.to_string(),
                "9".into(),
                d.labeled_transition_classes.to_string(),
                String::new(),
            ]
        })
        .collect();
    let classes: usize = c.diagrams.iter().map(|d| d.labeled_transition_classes).sum();
    rows.push(vec![
        "all".into(),
        c.labeled.to_string(),
        c.possible.to_string(),
        classes.to_string(),
        format!("{} out of {}", c.labeled, c.possible),
    ]);
    rows
}

#[derive(Debug, Clone, Default)]
pub struct ReportArgs {
    /// `state,from,to,count` table; defaults to the ingest directory's
    /// `transition_counts.csv`.
    pub counts: Option<PathBuf>,
    pub ingest: Option<PathBuf>,
    pub fits: Option<PathBuf>,
    pub classify: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn cmd_report(args: &ReportArgs) -> Result<CommandOutcome, CommandError> {
    let started = Instant::now();
    let counts_path = match (&args.counts, &args.ingest) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join("transition_counts.csv"),
        (None, None) => return Err(CommandError::MissingInput(PathBuf::from("transition_counts.csv"))),
    };
    let mut digests = BTreeMap::new();
    let bytes = read_input(&counts_path)?;
    digests.insert(input_key(&counts_path), sha256_hex(&bytes));
    let text =
        String::from_utf8(bytes).map_err(|e| CommandError::Invalid { path: counts_path.clone(), message: e.to_string() })?;
    let counts = report::read_counts(&text).map_err(|message| CommandError::Invalid { path: counts_path.clone(), message })?;
    let diag: Option<IngestDiagnostics> = match &args.ingest {
        Some(d) => Some(read_json(&d.join("diagnostics.json"), &mut digests)?),
        None => None,
    };
    let fits: Option<FitsFile> = match &args.fits {
        Some(d) => Some(read_json(&d.join("fits.json"), &mut digests)?),
        None => None,
    };
    let classification: Option<Classification> = match &args.classify {
        Some(d) => Some(read_json(&d.join("classification.json"), &mut digests)?),
        None => None,
    };

    let manifest = RunManifest::new("report", String::new(), digests, None);
    let mut out = OutputDir::new(&args.out, &manifest.run_digest)?;
    let table = transition_count_table(counts.clone());
    let (h, rows) = report::transition_summary_table(&table);
    out.put_csv("transition_summary.csv", &h, rows)?;
    let (h, rows) = report::percentages_table(&counts);
    out.put_csv("to_level_percentages.csv", &h, rows)?;
    let (h, rows) = report::counts_table(&counts);
    out.put_csv("transition_counts.csv", &h, rows)?;
    if let Some(diag) = &diag {
        let (h, rows) = report::homophily_table(&diag.homophily);
        out.put_csv("homophily_table.csv", &h, rows)?;
        let (h, rows) = report::diurnal_table(&diag.anova);
        out.put_csv("diurnal_table.csv", &h, rows)?;
        let (h, rows) = report::tukey_table(&diag.tukey);
        out.put_csv("tukey_table.csv", &h, rows)?;
    }
    let mut failures = Vec::new();
    if let Some(fits) = &fits {
        let states: BTreeSet<&str> = fits.records.iter().map(|r| r.state.as_str()).collect();
        for state in states {
            let (h, rows) = state_fit_table(state, &fits.records);
            out.put_csv(&format!("fit_table_{state}.csv"), &h, rows)?;
        }
        let (h, rows) = qicc_table(&fits.records);
        out.put_csv("qicc_comparison.csv", &h, rows)?;
        failures.extend(
            fits.records
                .iter()
                .filter(|r| matches!(r.outcome, FitOutcome::Failed { .. }))
                .map(|r| format!("{} {}->{}", r.state, r.from, r.to)),
        );
    }
    if let Some(c) = &classification {
        let (h, rows) = report::summary_matrix_table(&c.diagrams);
        out.put_csv("summary_matrix.csv", &h, rows)?;
        out.put_csv("coverage.csv", &coverage_header(), coverage_rows(c))?;
        let (h, rows) = report::contagion_table(&c.verdicts);
        out.put_csv("contagion.csv", &h, rows)?;
    }
    finish(manifest, &mut out, started, failures)
}
