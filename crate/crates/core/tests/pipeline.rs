use std::fs::File;

use sociodyn::commands::{extract_all, prepare, prepare_corpus};
use sociodyn::data_model::{parse_ir_log, parse_surveys, parse_traits, StudyConfig};
use sociodyn::network::HitRun;
use sociodyn::simulator::{run_scenario, ScenarioConfig};

fn scenario() -> ScenarioConfig {
    ScenarioConfig { n_agents: 14, n_days: 6, seed: 41, nonresponse_rate: 0.1, ..Default::default() }
}

#[test]
fn written_corpus_reads_back_to_the_same_windows() {
    let corpus = run_scenario(&scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.write(dir.path()).unwrap();

    let study = StudyConfig::from_toml(&std::fs::read_to_string(dir.path().join("study.toml")).unwrap()).unwrap();
    assert_eq!(study, corpus.study);
    let ir = parse_ir_log(File::open(dir.path().join("ir.csv")).unwrap(), &study).unwrap();
    let surveys = parse_surveys(File::open(dir.path().join("surveys.csv")).unwrap(), &study).unwrap();
    let traits = parse_traits(File::open(dir.path().join("traits.csv")).unwrap(), &study).unwrap();
    assert!(ir.rejects.is_empty() && surveys.rejects.is_empty() && traits.rejects.is_empty());
    assert_eq!(ir.events.len() as u64, corpus.bursts.iter().map(|b| b.hits).sum::<u64>());

    let direct = prepare_corpus(&corpus).unwrap();
    let runs = ir.events.iter().map(|e| HitRun { timestamp: e.timestamp, ego: &e.ego, alter: &e.alter, count: 1 });
    let parsed = prepare(runs, &surveys.responses, &traits.surveys, &study).unwrap();

    assert!(!direct.windows.is_empty());
    assert_eq!(parsed.windows, direct.windows);
    assert_eq!(parsed.window_report, direct.window_report);
    let key = |a: &&sociodyn::scoring::LevelAssignment| (a.participant.clone(), a.day, a.period, a.state.clone());
    let mut a: Vec<_> = parsed.levels.assignments.iter().collect();
    let mut b: Vec<_> = direct.levels.assignments.iter().collect();
    a.sort_by_key(key);
    b.sort_by_key(key);
    assert_eq!(a, b);
    assert_eq!(extract_all(&parsed, &study), extract_all(&direct, &corpus.study));
}

#[test]
fn every_burst_lands_in_its_own_window() {
    let corpus = run_scenario(&scenario()).unwrap();
    let study = &corpus.study;
    for b in &corpus.bursts {
        assert_eq!(study.locate_window(b.start), Some((b.day, b.slot)), "{b:?}");
    }
}
