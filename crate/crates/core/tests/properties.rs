use std::collections::BTreeSet;

use chrono::{Duration, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sociodyn::data_model::{parse_ir_log, write_ir_log, IrEvent, ParticipantId, StudyConfig};
use sociodyn::diagnostics::{one_way_anova, pairwise_t_p, tukey_hsd_groups, Groups};
use sociodyn::gee::{fit_gee_logistic, CorrelationKind, Design, GeeSettings, INTERCEPT};
use sociodyn::influence::{classify_effect, Effect, Sign};
use sociodyn::network::{build_windows, IntensityTriple};
use sociodyn::scoring::{fit_quantile_cuts, LevelTable};
use sociodyn::stats::two_sided_normal_p;
use sociodyn::Level;

fn level() -> impl Strategy<Value = Level> {
    prop_oneof![Just(Level::L), Just(Level::N), Just(Level::H)]
}

fn events() -> impl Strategy<Value = Vec<IrEvent>> {
    let ids = ["p01", "p02", "p03", "p04"];
    prop::collection::vec((0usize..4, 0usize..4, 0i64..(2 * 86_400)), 0..60).prop_map(move |raw| {
        let start = Utc.with_ymd_and_hms(2012, 3, 5, 9, 0, 0).unwrap();
        raw.into_iter()
            .filter(|(e, a, _)| e != a)
            .map(|(e, a, s)| IrEvent {
                timestamp: start + Duration::seconds(s),
                ego: ParticipantId::new(ids[e]),
                alter: ParticipantId::new(ids[a]),
            })
            .collect()
    })
}

/// Logistic data with `k` covariates in clusters of five.
fn logistic_design(seed: u64, n: usize, k: usize, scale: f64) -> Design {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, k, |_, c| rng.random_range(-1.0..1.0) * if c == 0 { scale } else { 1.0 });
    let y = DVector::from_fn(n, |r, _| {
        let eta = 0.3 + x[(r, 0)] / scale - 0.5 * x.row(r).iter().skip(1).sum::<f64>();
        f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()))
    });
    let names = (0..k).map(|c| format!("x{c}")).collect();
    Design::new(names, x, y, (0..n).map(|i| i / 5).collect(), vec![0; n], (0..n).map(|i| i % 5).collect())
}

fn terms(k: usize) -> Vec<String> {
    std::iter::once(INTERCEPT.to_string()).chain((0..k).map(|c| format!("x{c}"))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ir_log_round_trips(mut evs in events()) {
        evs.sort();
        let config = StudyConfig::default();
        let mut buf = Vec::new();
        write_ir_log(&evs, &mut buf).unwrap();
        let parsed = parse_ir_log(buf.as_slice(), &config).unwrap();
        let kept: Vec<IrEvent> = evs.iter().filter(|e| config.calendar.contains(e.timestamp)).cloned().collect();
        prop_assert_eq!(parsed.events, kept);
    }

    #[test]
    fn windows_ignore_event_order(evs in events(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let config = StudyConfig::default();
        let pool: BTreeSet<ParticipantId> = ["p01", "p02", "p03", "p04"].iter().map(|s| ParticipantId::new(s)).collect();
        let surveys = full_surveys(&pool, &config);
        let levels = LevelTable::default();
        let a = build_windows(&evs, &surveys, &levels, &pool, &config);
        let mut shuffled = evs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = build_windows(&shuffled, &surveys, &levels, &pool, &config);
        prop_assert_eq!(a.windows, b.windows);
        prop_assert_eq!(a.report, b.report);
    }

    #[test]
    fn tertile_cuts_are_ordered_inside_the_range(xs in prop::collection::vec(-100.0f64..100.0, 3..200)) {
        let c = fit_quantile_cuts("s", &xs);
        prop_assume!(c.is_ok());
        let c = c.unwrap();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= c.q33 && c.q33 <= c.q66 && c.q66 <= hi);
    }

    #[test]
    fn intensity_scales_linearly(contacts in prop::collection::vec((level(), 1u64..500), 0..12), c in 1u64..20) {
        let base = IntensityTriple::from_contacts(contacts.iter().copied());
        let scaled = IntensityTriple::from_contacts(contacts.iter().map(|&(l, h)| (l, h * c)));
        for z in Level::ALL {
            prop_assert!((scaled.get(z) - base.scaled(c as f64).get(z)).abs() <= 1e-9 * scaled.get(z).max(1.0));
        }
    }

    #[test]
    fn effects_mirror_under_level_reflection(x in level(), y in level(), z in level(), s in prop_oneof![Just(Sign::Positive), Just(Sign::Negative)]) {
        prop_assert_eq!(classify_effect(x, y, z, s), classify_effect(x.mirrored(), y.mirrored(), z.mirrored(), s));
        let flipped = if s == Sign::Positive { Sign::Negative } else { Sign::Positive };
        let pair = (classify_effect(x, y, z, s), classify_effect(x, y, z, flipped));
        prop_assert!(matches!(
            pair,
            (Effect::Attraction, Effect::Repulsion) | (Effect::Repulsion, Effect::Attraction)
                | (Effect::Inertia, Effect::Push) | (Effect::Push, Effect::Inertia)
        ));
    }

    #[test]
    fn anova_is_shift_invariant_and_tukey_dominates(
        data in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 3..12), 3..5),
        shift in -50.0f64..50.0,
    ) {
        let groups: Groups = data.iter().enumerate().map(|(i, xs)| ((i as u32, format!("g{i}")), xs.clone())).collect();
        let base = one_way_anova(&groups, false);
        prop_assume!(base.is_ok());
        let shifted: Groups = groups.iter().map(|(k, v)| (k.clone(), v.iter().map(|x| x + shift).collect())).collect();
        let f0 = base.unwrap().0;
        let f1 = one_way_anova(&shifted, false).unwrap().0;
        prop_assert!((f0 - f1).abs() <= 1e-6 * f0.abs().max(1.0));
        for c in tukey_hsd_groups(&groups, "s").unwrap() {
            let p = pairwise_t_p(&groups, &c.group_a, &c.group_b).unwrap();
            prop_assert!(c.p_adjusted >= p - 1e-6, "{} vs {}: {} < {}", c.group_a, c.group_b, c.p_adjusted, p);
        }
    }
}

fn full_surveys(pool: &BTreeSet<ParticipantId>, config: &StudyConfig) -> Vec<sociodyn::data_model::SurveyResponse> {
    let mut out = Vec::new();
    for p in pool {
        for day in 1..=2 {
            for period in sociodyn::Period::ALL {
                out.push(sociodyn::data_model::SurveyResponse {
                    participant: p.clone(),
                    day,
                    period,
                    submitted_at: config.trigger_instant(day, period).unwrap(),
                    items: Default::default(),
                });
            }
        }
    }
    out
}

/// Cluster-robust sandwich for an independence logistic fit, computed
/// directly: (X'WX)^-1 (sum_c X_c' r_c r_c' X_c) (X'WX)^-1.
fn hc0_sandwich(design: &Design, beta: &[f64]) -> DMatrix<f64> {
    let n = design.n_rows();
    let p = beta.len();
    let x = DMatrix::from_fn(n, p, |r, c| if c == 0 { 1.0 } else { design.x[(r, c - 1)] });
    let mut bread = DMatrix::zeros(p, p);
    let mut meat = DMatrix::zeros(p, p);
    let mut score = DVector::zeros(p);
    let mut current = usize::MAX;
    for r in 0..n {
        let eta: f64 = (0..p).map(|c| x[(r, c)] * beta[c]).sum();
        let mu = 1.0 / (1.0 + (-eta).exp());
        let xr = x.row(r).transpose();
        bread += &xr * xr.transpose() * (mu * (1.0 - mu));
        if design.cluster[r] != current {
            meat += &score * score.transpose();
            score = DVector::zeros(p);
            current = design.cluster[r];
        }
        score += xr * (design.y[r] - mu);
    }
    meat += &score * score.transpose();
    let inv = bread.try_inverse().unwrap();
    &inv * meat * &inv
}

#[test]
fn independence_sandwich_matches_direct_formula() {
    for seed in 0..5 {
        let d = logistic_design(seed, 300, 3, 1.0);
        let settings = GeeSettings { correlation: CorrelationKind::Independence, ..Default::default() };
        let fit = fit_gee_logistic(&d, &terms(3), &settings).unwrap();
        let v = hc0_sandwich(&d, &fit.coefficients);
        for i in 0..4 {
            for j in 0..4 {
                assert!((fit.covariance[i][j] - v[(i, j)]).abs() <= 1e-8 * v[(i, j)].abs().max(1e-6), "seed {seed} ({i},{j})");
            }
        }
        for i in 0..4 {
            let z = fit.coefficients[i] / v[(i, i)].sqrt();
            assert!((fit.p_values[i] - two_sided_normal_p(z)).abs() < 1e-10);
        }
    }
}

#[test]
fn rescaling_a_covariate_rescales_its_coefficient() {
    for kind in [CorrelationKind::Independence, CorrelationKind::Exchangeable, CorrelationKind::Unstructured] {
        let a = logistic_design(11, 400, 2, 1.0);
        let b = logistic_design(11, 400, 2, 10.0);
        let settings = GeeSettings { correlation: kind, ..Default::default() };
        let fa = fit_gee_logistic(&a, &terms(2), &settings).unwrap();
        let fb = fit_gee_logistic(&b, &terms(2), &settings).unwrap();
        assert!((fa.coefficients[1] - 10.0 * fb.coefficients[1]).abs() < 1e-6, "{kind:?}");
        assert!((fa.coefficients[2] - fb.coefficients[2]).abs() < 1e-6, "{kind:?}");
        for i in 0..3 {
            assert!((fa.p_values[i] - fb.p_values[i]).abs() < 1e-6, "{kind:?} term {i}");
        }
        assert!((fa.qicc.unwrap() - fb.qicc.unwrap()).abs() < 1e-6, "{kind:?}");
    }
}
