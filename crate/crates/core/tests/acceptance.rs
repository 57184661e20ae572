//! Acceptance suite. Runs every criterion at its pinned tolerance and
//! prints one PASS/FAIL line each; the process fails if any criterion does.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 3 4`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use sociodyn::commands::{
    cmd_classify, cmd_fit, cmd_ingest, cmd_report, cmd_simulate, extract_all, fit_transition, prepare, prepare_corpus,
    state_fits, AnalysisSettings, ClassifyArgs, FitArgs, IngestArgs, Overrides, ReportArgs, SimulateArgs,
};
use sociodyn::data_model::{parse_ir_log, parse_surveys, parse_traits, ItemSpec, ScoringRule, StateDef, StudyConfig};
use sociodyn::gee::{
    backward_eliminate, fit_gee_logistic, Chosen, CorrelationKind, Design, GeeSettings, SelectionSettings, INTERCEPT,
};
use sociodyn::influence::{label_state, ClassifierSettings, Effect, EffectLabel, StateFits, TraitScope, Verdict};
use sociodyn::network::{HitRun, IntensityTriple};
use sociodyn::simulator::{
    replication_seed, run_scenario, CoefficientVector, PlantedCoefficients, ScenarioConfig, SyntheticCorpus,
};
use sociodyn::transitions::{CountMatrix, TransitionExclusions, TransitionSet, COVARIATES};
use sociodyn::Level;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "intensity worked example", intensity_worked_example),
        (2, "transition summary from reference counts", transition_summary_reproduction),
        (3, "independence GEE equals IRLS oracle", gee_matches_irls_oracle),
        (4, "sandwich interval coverage", sandwich_coverage),
        (5, "backward elimination recovers planted support", selection_sanity),
        (6, "effect label recovery", effect_label_recovery),
        (7, "SISa contagion detector", contagion_detector),
        (8, "labels invariant to intensity scale", scale_invariance),
        (9, "end-to-end determinism and throughput", end_to_end_determinism),
        (10, "survey accounting", survey_accounting),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} {tag}  {name}: {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn level_of(name: &str) -> Level {
    name.parse().expect("level letter")
}

// ---------------------------------------------------------------- 1

fn intensity_worked_example() -> Outcome {
    let started = Instant::now();
    let contacts = [(Level::H, 6), (Level::H, 8), (Level::N, 4), (Level::N, 5), (Level::N, 6), (Level::L, 9), (Level::L, 11)];
    let k = IntensityTriple::from_contacts(contacts);
    let elapsed = started.elapsed();
    check(
        k.h == 7.0 && k.n == 5.0 && k.l == 10.0 && elapsed < Duration::from_millis(1),
        format!("H={} N={} L={} in {:?}", k.h, k.n, k.l, elapsed),
    )
}

// ---------------------------------------------------------------- 2

fn read_report_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).expect("report file");
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    rdr.records().map(|r| headers.iter().zip(r.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect()).collect()
}

fn transition_summary_reproduction() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let counts = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_counts.csv");
    cmd_report(&ReportArgs { counts: Some(counts), out: dir.path().to_path_buf(), ..Default::default() })
        .map_err(|e| e.to_string())?;
    let summary = read_report_csv(&dir.path().join("transition_summary.csv"));
    let ll = summary.iter().find(|r| r["transition"] == "L->L").ok_or("no L->L row")?;
    let mean: f64 = ll["mean"].parse().unwrap();
    let row_ok = ll["max"] == "167" && ll["min"] == "79" && ll["median"] == "100" && (mean - 111.0).abs() <= 0.5;
    let pct = read_report_csv(&dir.path().join("to_level_percentages.csv"));
    let ex = pct.iter().find(|r| r["state"] == "extraversion" && r["base"] == "cumulative").ok_or("no extraversion row")?;
    let got: Vec<f64> = ["to_L", "to_N", "to_H"].iter().map(|c| ex[*c].parse().unwrap()).collect();
    let want = [22.087, 52.752, 37.275];
    let pct_ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.01);
    let elapsed = started.elapsed();
    check(
        row_ok && pct_ok && elapsed < Duration::from_secs(1),
        format!(
            "L->L max {} min {} median {} mean {mean:.3}; extraversion {:.3}/{:.3}/{:.3}",
            ll["max"], ll["min"], ll["median"], got[0], got[1], got[2]
        ),
    )
}

// ---------------------------------------------------------------- 3

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain Newton-Raphson logistic regression with its own dense solver.
fn irls_logistic(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut h = vec![vec![0.0; p]; p];
        let mut g = vec![0.0; p];
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            for j in 0..p {
                g[j] += row[j] * (yi - mu);
                for k in 0..p {
                    h[j][k] += w * row[j] * row[k];
                }
            }
        }
        let step = solve(h, g);
        let mut max = 0.0f64;
        for j in 0..p {
            beta[j] += step[j];
            max = max.max(step[j].abs());
        }
        if max < 1e-12 {
            break;
        }
    }
    beta
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn gee_matches_irls_oracle() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(3, rep));
        let n = 500;
        let k = 4;
        let beta: Vec<f64> = (0..=k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = vec![1.0];
            row.push(rng.sample::<f64, _>(StandardNormal));
            row.push(rng.random_range(0.0..5.0));
            row.push(f64::from(rng.random_bool(0.4)));
            row.push(rng.sample::<f64, _>(StandardNormal) * row[1]);
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            y.push(f64::from(rng.random::<f64>() < expit(eta)));
            rows.push(row);
        }
        let names: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
        let design = Design::new(
            names.clone(),
            DMatrix::from_fn(n, k, |r, c| rows[r][c + 1]),
            DVector::from_vec(y.clone()),
            (0..n).map(|i| i / 10).collect(),
            (0..n).map(|i| (i % 10) as u32).collect(),
            vec![0; n],
        );
        let mut terms = vec![INTERCEPT.to_string()];
        terms.extend(names);
        let settings = GeeSettings { correlation: CorrelationKind::Independence, ..Default::default() };
        let fit = fit_gee_logistic(&design, &terms, &settings).map_err(|e| e.to_string())?;
        let oracle = irls_logistic(&rows, &y);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = started.elapsed();
    check(worst <= 1e-6 && elapsed < Duration::from_secs(10), format!("max |diff| {worst:.2e} over 20 designs"))
}

// ---------------------------------------------------------------- 4

fn sandwich_coverage() -> Outcome {
    let started = Instant::now();
    let normal = Normal::standard();
    let z = normal.inverse_cdf(0.975);
    let (beta0, beta_l, rho) = (-0.3, 0.5, 0.5f64);
    let (clusters, size) = (200usize, 5usize);
    let n = clusters * size;
    let mut covered = 0;
    let reps = 1000;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(4, rep));
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..clusters {
            // Gaussian copula: latent correlation rho, exact logistic margins
            let shared: f64 = rng.sample(StandardNormal);
            for _ in 0..size {
                let l: f64 = rng.sample(StandardNormal);
                let own: f64 = rng.sample(StandardNormal);
                let u = normal.cdf(rho.sqrt() * shared + (1.0 - rho).sqrt() * own);
                x.push(l);
                y.push(f64::from(u < expit(beta0 + beta_l * l)));
            }
        }
        let design = Design::new(
            vec!["L".into()],
            DMatrix::from_vec(n, 1, x),
            DVector::from_vec(y),
            (0..n).map(|i| i / size).collect(),
            vec![0; n],
            (0..n).map(|i| i % size).collect(),
        );
        let settings = GeeSettings { correlation: CorrelationKind::Exchangeable, ..Default::default() };
        let fit = fit_gee_logistic(&design, &[INTERCEPT.to_string(), "L".into()], &settings).map_err(|e| e.to_string())?;
        let i = fit.index_of("L").unwrap();
        if (fit.coefficients[i] - beta_l).abs() <= z * fit.std_errors[i] {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    let elapsed = started.elapsed();
    check((0.93..=0.97).contains(&rate) && elapsed < Duration::from_secs(300), format!("coverage {:.1}% of {reps}", 100.0 * rate))
}

// ---------------------------------------------------------------- 5

/// 1,000 transition-shaped rows: 50 egos x 10 days x 2 slots, intensities
/// that are zero when no alter sits at a level, a per-ego trait and the
/// period dummy. Returns the design and the sample SD of L.
fn selection_design(rng: &mut ChaCha8Rng, effect: f64) -> Design {
    let (egos, days) = (50usize, 10u32);
    let hits = Gamma::new(1.0, 70.0).unwrap();
    let mut cov = Vec::new();
    let mut cluster = Vec::new();
    let mut group = Vec::new();
    let mut sub = Vec::new();
    for ego in 0..egos {
        let t: f64 = rng.sample(StandardNormal);
        for day in 1..=days {
            for slot in 0..2usize {
                let mut k = [0.0; 3];
                for v in &mut k {
                    if rng.random_bool(0.45) {
                        *v = hits.sample(rng);
                    }
                }
                let p = slot as f64;
                cov.push([k[0], k[1], k[2], t, t * k[0], t * k[1], t * k[2], p, p * t]);
                cluster.push(ego);
                group.push(day);
                sub.push(slot);
            }
        }
    }
    let n = cov.len();
    let l: Vec<f64> = cov.iter().map(|c| c[0]).collect();
    let mean = l.iter().sum::<f64>() / n as f64;
    let sd = (l.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let beta_l = effect / sd;
    let y: Vec<f64> = cov.iter().map(|c| f64::from(rng.random::<f64>() < expit(-0.7 + beta_l * (c[0] - mean)))).collect();
    Design::new(
        COVARIATES.iter().map(|s| s.to_string()).collect(),
        DMatrix::from_fn(n, 9, |r, c| cov[r][c]),
        DVector::from_vec(y),
        cluster,
        group,
        sub,
    )
}

fn selection_sanity() -> Outcome {
    let started = Instant::now();
    let gee = GeeSettings::default();
    let sel = SelectionSettings::default();
    let reps = 100;
    let (mut exact, mut null) = (0, 0);
    let mut kept: BTreeMap<String, usize> = BTreeMap::new();
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(5, rep));
        let design = selection_design(&mut rng, 1.0);
        let s = backward_eliminate(&design, &design.full_terms(), &gee, &sel).map_err(|e| e.to_string())?;
        if s.trace.chosen == Chosen::SubModel && s.fit.terms == [INTERCEPT.to_string(), "L".to_string()] {
            exact += 1;
        }
        for t in s.fit.terms.iter().filter(|t| t.as_str() != INTERCEPT && t.as_str() != "L") {
            *kept.entry(t.clone()).or_default() += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(50, rep));
        let noise = selection_design(&mut rng, 0.0);
        let s = backward_eliminate(&noise, &noise.full_terms(), &gee, &sel).map_err(|e| e.to_string())?;
        if s.trace.chosen == Chosen::NullModel {
            null += 1;
        }
    }
    let elapsed = started.elapsed();
    let nuisance: usize = kept.values().sum();
    check(
        exact * 100 >= 90 * reps && null * 100 >= 80 * reps && elapsed < Duration::from_secs(300),
        format!(
            "exact support {exact}/{reps}, null chosen on noise {null}/{reps}, nuisance terms kept {nuisance} ({:.1}% of 800)",
            100.0 * nuisance as f64 / 800.0
        ),
    )
}

// ---------------------------------------------------------------- 6 / 7 / 8

const STATE: &str = "extraversion";

fn planted(from: Level, to: Level, beta: CoefficientVector) -> PlantedCoefficients {
    PlantedCoefficients { state: STATE.into(), from, to, beta }
}

fn scenario(seed: u64, n_agents: usize, n_days: u32, coefficients: Vec<PlantedCoefficients>) -> ScenarioConfig {
    ScenarioConfig { n_agents, n_days, seed, states: Some(vec![STATE.into()]), coefficients, ..Default::default() }
}

fn single_state(corpus: &SyntheticCorpus) -> TransitionSet {
    let prepared = prepare_corpus(corpus).expect("prepare");
    extract_all(&prepared, &corpus.study).into_iter().find(|s| s.state == STATE).expect("state kept")
}

fn fit_labels(set: &TransitionSet, transitions: &[(Level, Level)], settings: &AnalysisSettings) -> Vec<EffectLabel> {
    let records: Vec<_> = transitions.iter().map(|&(f, t)| fit_transition(set, f, t, settings)).collect();
    let fits = state_fits(&records);
    fits.first().map(|f| label_state(f, &settings.classifier)).unwrap_or_default()
}

fn effects_for(labels: &[EffectLabel], x: Level, y: Level, z: Level) -> BTreeMap<TraitScope, Effect> {
    labels
        .iter()
        .filter(|l| l.from_level == x && l.to_level == y && l.alter_level == z)
        .map(|l| (l.trait_scope, l.effect))
        .collect()
}

fn settings_for(corpus: &SyntheticCorpus) -> AnalysisSettings {
    AnalysisSettings { workers: 1, ..AnalysisSettings::from_config(&corpus.study) }
}

fn effect_label_recovery() -> Outcome {
    let started = Instant::now();
    let b = 0.015;
    let cases: [(&str, Level, Level, Level, CoefficientVector, Effect); 4] = [
        ("attraction", Level::L, Level::N, Level::H, CoefficientVector { beta_h: b, ..Default::default() }, Effect::Attraction),
        ("repulsion", Level::L, Level::N, Level::H, CoefficientVector { beta_h: -b, ..Default::default() }, Effect::Repulsion),
        ("inertia", Level::N, Level::N, Level::N, CoefficientVector { beta_n: b, ..Default::default() }, Effect::Inertia),
        ("push", Level::N, Level::N, Level::N, CoefficientVector { beta_n: -b, ..Default::default() }, Effect::Push),
    ];
    let reps = 100u64;
    let mut details = Vec::new();
    let mut ok = true;
    for (ci, (name, x, y, z, beta, want)) in cases.into_iter().enumerate() {
        let mut hits = 0;
        for rep in 0..reps {
            let cfg = scenario(replication_seed(600 + ci as u64, rep), 200, 60, vec![planted(x, y, beta)]);
            let corpus = run_scenario(&cfg).unwrap();
            let set = single_state(&corpus);
            let labels = fit_labels(&set, &[(x, y)], &settings_for(&corpus));
            let got = effects_for(&labels, x, y, z);
            if !got.is_empty() && got.values().all(|e| *e == want) {
                hits += 1;
            }
        }
        ok &= hits * 100 >= 90 * reps;
        details.push(format!("{name} {hits}/{reps}"));
    }
    // opposite signs at t = -1 and t = +1
    let mut hits = 0;
    for rep in 0..reps {
        let beta = CoefficientVector { beta_th: b, ..Default::default() };
        let cfg = scenario(replication_seed(650, rep), 200, 60, vec![planted(Level::L, Level::N, beta)]);
        let corpus = run_scenario(&cfg).unwrap();
        let set = single_state(&corpus);
        let labels = fit_labels(&set, &[(Level::L, Level::N)], &settings_for(&corpus));
        let got = effects_for(&labels, Level::L, Level::N, Level::H);
        if got.get(&TraitScope::HighTrait) == Some(&Effect::Attraction)
            && got.get(&TraitScope::LowTrait) == Some(&Effect::Repulsion)
        {
            hits += 1;
        }
    }
    ok &= hits * 100 >= 85 * reps;
    details.push(format!("trait-conditional {hits}/{reps}"));
    let elapsed = started.elapsed();
    check(ok && elapsed < Duration::from_secs(900), details.join(", "))
}

fn contagion_detector() -> Outcome {
    let started = Instant::now();
    let reps = 50u64;
    let v = Level::H;
    let infection = planted(Level::N, v, CoefficientVector { beta_h: 0.02, ..Default::default() });
    let count = |seed_base: u64, coefficients: Vec<PlantedCoefficients>, want: Verdict| -> (usize, BTreeMap<String, usize>) {
        let mut hits = 0;
        let mut why: BTreeMap<String, usize> = BTreeMap::new();
        for rep in 0..reps {
            let corpus = run_scenario(&scenario(replication_seed(seed_base, rep), 200, 60, coefficients.clone())).unwrap();
            let set = single_state(&corpus);
            let settings = settings_for(&corpus);
            let records: Vec<_> =
                [(Level::N, v), (v, Level::N)].iter().map(|&(f, t)| fit_transition(&set, f, t, &settings)).collect();
            let fits: StateFits = state_fits(&records).remove(0);
            let verdict = sociodyn::influence::contagion_verdict(&fits, v, &settings.classifier);
            if verdict.verdict == want {
                hits += 1;
            } else {
                *why.entry(verdict.failing.unwrap_or_else(|| format!("{:?}", verdict.verdict))).or_default() += 1;
            }
        }
        (hits, why)
    };
    let (sis, sis_why) = count(700, vec![infection.clone()], Verdict::Contagion);
    // recovery actively driven by contact with low alters
    let recovery = planted(v, Level::N, CoefficientVector { beta_l: 0.02, ..Default::default() });
    let (active, active_why) = count(750, vec![infection, recovery], Verdict::NotContagion);
    let elapsed = started.elapsed();
    check(
        sis * 100 >= 90 * reps as usize && active * 100 >= 90 * reps as usize && elapsed < Duration::from_secs(300),
        format!(
            "SIS contagion {sis}/{reps} (misses {sis_why:?}), active recovery rejected {active}/{reps} (misses {active_why:?})"
        ),
    )
}

fn scale_invariance() -> Outcome {
    let started = Instant::now();
    let mut compared = 0;
    let mut mismatches = Vec::new();
    let transitions: Vec<(Level, Level)> =
        Level::ALL.into_iter().flat_map(|f| Level::ALL.into_iter().map(move |t| (f, t))).collect();
    for rep in 0..20u64 {
        let seed = replication_seed(8, rep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coefficients = (0..3)
            .map(|_| {
                let beta = CoefficientVector {
                    beta_l: rng.random_range(-0.02..0.02),
                    beta_n: rng.random_range(-0.02..0.02),
                    beta_h: rng.random_range(-0.02..0.02),
                    beta_th: rng.random_range(-0.01..0.01),
                    ..Default::default()
                };
                planted(Level::ALL[rng.random_range(0..3)], Level::ALL[rng.random_range(0..3)], beta)
            })
            .collect();
        let corpus = run_scenario(&scenario(seed, 52, 30, coefficients)).unwrap();
        let set = single_state(&corpus);
        let mut scaled = set.clone();
        for r in &mut scaled.records {
            r.intensities = r.intensities.scaled(10.0);
        }
        let mut settings = settings_for(&corpus);
        settings.classifier = ClassifierSettings { relevance_threshold: 0.0, ..settings.classifier };
        let key = |ls: Vec<EffectLabel>| -> Vec<_> {
            ls.into_iter().map(|l| (l.from_level, l.to_level, l.alter_level, l.trait_scope, l.slope_sign, l.effect)).collect()
        };
        let a = key(fit_labels(&set, &transitions, &settings));
        let b = key(fit_labels(&scaled, &transitions, &settings));
        compared += a.len();
        if a != b {
            mismatches.push(rep);
        }
    }
    let elapsed = started.elapsed();
    check(
        mismatches.is_empty() && elapsed < Duration::from_secs(120),
        format!("{compared} labels over 20 scenarios, mismatching scenarios {mismatches:?}"),
    )
}

// ---------------------------------------------------------------- 9

fn run_pipeline(root: &Path) -> Result<(), String> {
    let e = |e: sociodyn::commands::CommandError| e.to_string();
    cmd_simulate(&SimulateArgs { scenario: None, seed: Some(7), out: root.join("corpus") }).map_err(e)?;
    cmd_ingest(&IngestArgs { input: root.join("corpus"), config: None, out: root.join("ingest") }).map_err(e)?;
    let overrides = Overrides::default();
    cmd_fit(&FitArgs { input: root.join("ingest"), config: None, overrides: overrides.clone(), out: root.join("fit") })
        .map_err(e)?;
    cmd_classify(&ClassifyArgs { input: root.join("fit"), overrides, out: root.join("classify") }).map_err(e)?;
    cmd_report(&ReportArgs {
        counts: None,
        ingest: Some(root.join("ingest")),
        fits: Some(root.join("fit")),
        classify: Some(root.join("classify")),
        out: root.join("report"),
    })
    .map_err(e)?;
    Ok(())
}

/// Every file under `root`, with manifests stripped of their wall-clock field.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let mut bytes = std::fs::read(&path).unwrap();
            if path.file_name().is_some_and(|n| n == "manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v["duration_ms"] = serde_json::Value::from(0);
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(path.strip_prefix(root).unwrap().display().to_string(), bytes);
        }
    }
    out
}

fn end_to_end_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let started = Instant::now();
    run_pipeline(a.path())?;
    let first = started.elapsed();
    run_pipeline(b.path())?;
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<&String> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    check(
        sa.len() == sb.len() && differing.is_empty() && first < Duration::from_secs(60),
        format!("{} files identical across runs, first run {:.1}s, differing {differing:?}", sa.len(), first.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 10

/// One single-item state, three participants, two days.
fn fixture_config() -> StudyConfig {
    let mut c = StudyConfig::default();
    c.calendar.n_days = 2;
    c.items = vec![ItemSpec { code: "m".into(), min: 1.0, max: 9.0 }];
    c.states = vec![StateDef {
        name: "mood".into(),
        rule: ScoringRule::Mean,
        items: vec!["m".into()],
        reverse_items: vec![],
        trait_name: Some("mood".into()),
    }];
    c.traits = vec!["mood".into()];
    c
}

const FIXTURE_SURVEYS: &str = "\
participant_id,day,period,submitted_at_utc,item_code,value
a,1,morning,2012-03-05T10:10:00Z,m,1
a,1,midday,2012-03-05T13:10:00Z,m,5
a,1,afternoon,2012-03-05T16:10:00Z,m,9
a,2,morning,2012-03-06T10:10:00Z,m,2
a,2,midday,2012-03-06T13:10:00Z,m,6
a,2,afternoon,2012-03-06T16:10:00Z,m,8
b,1,morning,2012-03-05T10:10:00Z,m,3
b,1,midday,2012-03-05T13:10:00Z,m,4
b,1,afternoon,2012-03-05T16:10:00Z,m,7
b,2,morning,2012-03-06T10:10:00Z,m,5
b,2,afternoon,2012-03-06T16:10:00Z,m,9
c,1,morning,2012-03-05T10:10:00Z,m,2
c,1,midday,2012-03-05T13:10:00Z,m,8
c,1,afternoon,2012-03-05T16:10:00Z,m,6
c,2,morning,2012-03-06T10:10:00Z,m,7
c,2,midday,2012-03-06T13:10:00Z,m,3
c,2,afternoon,2012-03-06T16:10:00Z,m,1
";

const FIXTURE_IR: &str = "\
ego_id,alter_id,timestamp_utc
a,b,2012-03-05T10:30:00Z
a,b,2012-03-05T10:30:01Z
a,b,2012-03-05T10:30:02Z
a,c,2012-03-05T11:00:00Z
a,c,2012-03-05T09:00:00Z
a,b,2012-03-06T10:45:00Z
a,b,2012-03-06T10:45:01Z
a,b,2012-03-06T13:30:00Z
a,b,2012-03-06T13:30:01Z
a,b,2012-03-06T13:30:02Z
a,b,2012-03-06T13:30:03Z
a,b,2012-03-06T13:30:04Z
b,a,2012-03-05T14:00:00Z
b,a,2012-03-05T14:00:01Z
b,a,2012-03-05T14:00:02Z
b,a,2012-03-05T14:00:03Z
b,a,2012-03-06T10:15:00Z
c,a,2012-03-06T15:00:00Z
c,a,2012-03-06T15:00:01Z
c,a,2012-03-06T15:00:02Z
c,a,2012-03-06T15:00:03Z
c,a,2012-03-06T15:00:04Z
c,a,2012-03-06T15:00:05Z
";

const FIXTURE_TRAITS: &str = "\
participant_id,wave,trait,raw_score
a,begin,mood,3
b,begin,mood,5
";

fn survey_accounting() -> Outcome {
    let corpus = run_scenario(&ScenarioConfig::default()).unwrap();
    let n_surveys = corpus.surveys.len();

    let config = fixture_config();
    let ir = parse_ir_log(FIXTURE_IR.as_bytes(), &config).map_err(|e| e.to_string())?;
    let sv = parse_surveys(FIXTURE_SURVEYS.as_bytes(), &config).map_err(|e| e.to_string())?;
    let tr = parse_traits(FIXTURE_TRAITS.as_bytes(), &config).map_err(|e| e.to_string())?;
    let runs = ir.events.iter().map(|e| HitRun { timestamp: e.timestamp, ego: &e.ego, alter: &e.alter, count: 1 });
    let prepared = prepare(runs, &sv.responses, &tr.surveys, &config).map_err(|e| e.to_string())?;
    let set = extract_all(&prepared, &config).pop().ok_or("state discarded")?;

    // Hand enumeration. Raw scores 1..9 have median 5; the centered cuts
    // are -2 and 1.56, so raw <= 3 is L, 4..6 is N, >= 7 is H. Trait z is
    // -1 for a and +1 for b; c has no trait record.
    let expected: Vec<(&str, u32, &str, &str, [f64; 3], f64)> = vec![
        ("a", 1, "L", "N", [2.0, 0.0, 0.0], -1.0),
        ("a", 1, "N", "H", [0.0, 0.0, 0.0], -1.0),
        ("a", 2, "L", "N", [0.0, 2.0, 0.0], -1.0),
        ("b", 1, "L", "N", [0.0, 0.0, 0.0], 1.0),
        ("b", 1, "N", "H", [0.0, 4.0, 0.0], 1.0),
    ];
    let got: Vec<(&str, u32, &str, &str, [f64; 3], f64)> = set
        .records
        .iter()
        .map(|r| {
            let from = ["L", "N", "H"][r.from_level.index()];
            let to = ["L", "N", "H"][r.to_level.index()];
            (r.ego.as_str(), r.day, from, to, [r.intensities.l, r.intensities.n, r.intensities.h], r.trait_z)
        })
        .collect();
    let exclusions = TransitionExclusions { alter_level_missing: 1, ego_level_missing: 0, trait_missing: 4 };
    let mut counts = CountMatrix::default();
    counts.0[level_of("L").index()][level_of("N").index()] = 3;
    counts.0[level_of("N").index()][level_of("H").index()] = 2;
    let report = &prepared.window_report;
    let ok = n_surveys == 4_680
        && got == expected
        && set.exclusions == exclusions
        && CountMatrix::from_records(&set.records) == counts
        && prepared.windows.len() == 10
        && report.missing_survey == 2
        && report.unassigned_hits == 2;
    check(
        ok,
        format!(
            "{n_surveys} surveys; fixture {} records, exclusions {:?}, {} windows, {} missing-survey slots, {} unassigned hits",
            got.len(),
            set.exclusions,
            prepared.windows.len(),
            report.missing_survey,
            report.unassigned_hits
        ),
    )
}
