use std::collections::HashSet;

use modelsel_core::eval::{
    build_report, export_curve_csvs, export_report, identification_curve, import_report, run_experiment,
};
use modelsel_core::policies::{
    final_selection, init_state, leaderboard, next_query, record_label, run_policy, PolicyKind, PolicySpec,
};
use modelsel_core::synth::{drift_collection, generate_collection, uniform_targets};
use modelsel_core::{ErrorRate, ExperimentConfig, PredictionMatrix, SyntheticCollection, SyntheticSpec};

fn t1() -> PredictionMatrix {
    PredictionMatrix::from_rows(vec![vec![0, 0, 1], vec![1, 1, 1], vec![0, 1, 1], vec![1, 0, 0]], None).unwrap()
}

fn small_collection(seed: u64) -> SyntheticCollection {
    generate_collection(&SyntheticSpec {
        num_examples: 120,
        num_classes: 4,
        accuracy_targets: uniform_targets(6, 0.5, 0.85, seed),
        correlation: 0.3,
        seed,
    })
    .unwrap()
}

fn all_policies() -> Vec<PolicySpec> {
    let mut v = vec![PolicySpec::model_selector(ErrorRate::new(0.45).unwrap())];
    v.extend(PolicyKind::ALL.iter().filter(|k| **k != PolicyKind::ModelSelector).map(|&k| PolicySpec::baseline(k)));
    v
}

#[test]
fn full_runs_query_each_example_once() {
    let c = small_collection(1);
    let n = c.matrix.num_examples();
    for spec in all_policies() {
        let (state, queries) = run_policy(&c.matrix, c.labels.labels(), &spec, 9, n).unwrap();
        let unique: HashSet<_> = queries.iter().collect();
        assert_eq!(unique.len(), n, "{}", spec.label());
        assert!(state.unlabeled().is_empty());
        let mut s = state.clone();
        assert!(next_query(&mut s, &c.matrix, &spec).is_err());
        let pick = final_selection(&state, &c.matrix).unwrap();
        let profile = modelsel_core::accuracy_profile(&c.matrix, &c.labels).unwrap();
        assert!(profile.is_best(pick.model_index));
    }
}

#[test]
fn runs_are_deterministic() {
    let c = small_collection(2);
    for spec in all_policies() {
        let a = run_policy(&c.matrix, c.labels.labels(), &spec, 4, 40).unwrap();
        let b = run_policy(&c.matrix, c.labels.labels(), &spec, 4, 40).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }
}

#[test]
fn non_adaptive_orders_ignore_labels() {
    let c = small_collection(3);
    let flipped: Vec<u32> = c.labels.labels().iter().map(|y| (y + 1) % 4).collect();
    for kind in [PolicyKind::Uncertainty, PolicyKind::Margin] {
        let spec = PolicySpec::baseline(kind);
        let a = run_policy(&c.matrix, c.labels.labels(), &spec, 5, 60).unwrap().1;
        let b = run_policy(&c.matrix, &flipped, &spec, 5, 60).unwrap().1;
        assert_eq!(a, b);
    }
}

#[test]
fn selector_prefers_disagreement() {
    let c = small_collection(4);
    let spec = PolicySpec::model_selector(ErrorRate::new(0.3).unwrap());
    let disagreements = c.matrix.rows().filter(|r| r.iter().any(|&p| p != r[0])).count();
    let (_, queries) = run_policy(&c.matrix, c.labels.labels(), &spec, 1, disagreements).unwrap();
    for &q in &queries {
        let row = c.matrix.row(q);
        assert!(row.iter().any(|&p| p != row[0]), "queried full-agreement example {q}");
    }
}

#[test]
fn t1_walkthrough() {
    let m = t1();
    let spec = PolicySpec::model_selector(ErrorRate::new(0.4).unwrap());
    let mut s = init_state(&m, &spec, 7).unwrap();
    record_label(&mut s, &m, 2, 1, &spec).unwrap();
    let rows = leaderboard(&s, &m);
    let masses: Vec<f64> = rows.iter().map(|r| r.posterior_mass).collect();
    assert!((masses[0] - 0.375).abs() < 1e-12 && (masses[2] - 0.25).abs() < 1e-12);
    record_label(&mut s, &m, 3, 0, &spec).unwrap();
    assert_eq!(final_selection(&s, &m).unwrap().model_index, 1);
    assert!(record_label(&mut s, &m, 3, 0, &spec).is_err());
}

#[test]
fn final_selection_ignores_evidence_order() {
    let c = small_collection(5);
    let spec = PolicySpec::model_selector(ErrorRate::new(0.42).unwrap());
    let order: Vec<usize> = (0..30).map(|i| (i * 7) % 120).collect();
    let mut a = init_state(&c.matrix, &spec, 0).unwrap();
    let mut b = init_state(&c.matrix, &spec, 0).unwrap();
    for &i in &order {
        record_label(&mut a, &c.matrix, i, c.labels.get(i), &spec).unwrap();
    }
    for &i in order.iter().rev() {
        record_label(&mut b, &c.matrix, i, c.labels.get(i), &spec).unwrap();
    }
    assert_eq!(final_selection(&a, &c.matrix).unwrap().model_index, final_selection(&b, &c.matrix).unwrap().model_index);
}

#[test]
fn drift_selector_matches_random_and_uncertainty_does_not_win() {
    let c = drift_collection(&SyntheticSpec {
        num_examples: 1500,
        num_classes: 12,
        accuracy_targets: uniform_targets(10, 0.06, 0.10, 3),
        correlation: 0.0,
        seed: 3,
    })
    .unwrap();
    let cfg = ExperimentConfig::new(
        400,
        80,
        500,
        21,
        vec![
            PolicySpec::model_selector(ErrorRate::new(0.45).unwrap()),
            PolicySpec::baseline(PolicyKind::Random),
            PolicySpec::baseline(PolicyKind::Uncertainty),
        ],
    );
    let results = run_experiment(&c.matrix, &c.labels, &cfg).unwrap();
    let curves = identification_curve(&results).unwrap();
    let (ms, random, unc) = (&curves[0], &curves[1], &curves[2]);
    for ((a, b), u) in ms.points.iter().zip(&random.points).zip(&unc.points) {
        assert!((a.value - b.value).abs() <= 0.03, "budget {}", a.budget);
        assert!(u.value <= b.value + 0.05, "budget {}: uncertainty {} random {}", u.budget, u.value, b.value);
    }
    let area = |c: &modelsel_core::eval::PolicyCurve| c.points.iter().map(|p| p.value).sum::<f64>();
    assert!(area(unc) <= area(random) + 0.5);
}

#[test]
fn report_round_trips_and_exports_csvs() {
    let c = small_collection(6);
    let cfg = ExperimentConfig::new(
        60,
        20,
        8,
        3,
        vec![
            PolicySpec::model_selector(ErrorRate::new(0.45).unwrap()),
            PolicySpec::baseline(PolicyKind::Random),
        ],
    );
    let results = run_experiment(&c.matrix, &c.labels, &cfg).unwrap();
    let report = build_report(&c.matrix, &cfg, &results).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    export_report(&report, &path).unwrap();
    assert_eq!(import_report(&path).unwrap(), report);
    let files = export_curve_csvs(&report, dir.path()).unwrap();
    assert_eq!(files.len(), 1 + cfg.metrics.percentiles.len());
    let text = std::fs::read_to_string(dir.path().join("identification.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("budget,policy,value"));
    assert_eq!(text.lines().count(), 1 + 2 * 20);
}

#[test]
fn experiment_rejects_oversized_pool() {
    let c = small_collection(7);
    let cfg = ExperimentConfig::new(500, 10, 2, 0, vec![PolicySpec::baseline(PolicyKind::Random)]);
    assert!(run_experiment(&c.matrix, &c.labels, &cfg).is_err());
}
