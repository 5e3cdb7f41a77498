mod common;

use cgfb::experiment::{
    run_experiment, write_metrics_csv, Algorithm, ExperimentSpec, GroundTruth, Metric,
};
use cgfb::model::GhmmParams;

fn csv_of(spec: &ExperimentSpec) -> String {
    let rows = run_experiment(&GhmmParams::reference(0.05), spec).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows, &[Metric::MeanErr, Metric::CovErr]).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn metric_csv_is_reproducible() {
    for algorithm in [
        Algorithm::Cgfb,
        Algorithm::SwCgfb,
        Algorithm::SwNaive,
        Algorithm::KfAggregate,
    ] {
        let mut spec = ExperimentSpec::new(30, 25, vec![3, 1, 2], algorithm);
        if algorithm.is_windowed() {
            spec = spec.with_window(5);
        }
        spec.per_step = true;
        assert_eq!(csv_of(&spec), csv_of(&spec), "{}", algorithm.name());
    }
}

#[test]
fn rows_come_back_in_seed_order() {
    let spec = ExperimentSpec::new(20, 10, vec![5, 2, 9], Algorithm::Cgfb);
    let rows = run_experiment(&GhmmParams::reference(0.05), &spec).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![5, 2, 9]
    );
}

#[test]
fn single_agent_scores_against_exact_posterior() {
    let mut spec = ExperimentSpec::new(1, 5, vec![0, 1, 2], Algorithm::Cgfb);
    spec.ground_truth = GroundTruth::Posterior;
    for row in run_experiment(&GhmmParams::reference(0.05), &spec).unwrap() {
        assert!(row.mean_sq_err <= 1e-6 && row.cov_sq_err <= 1e-6, "{row:?}");
    }
}

#[test]
fn cgfb_and_kalman_baseline_both_report() {
    let p = GhmmParams::reference(0.05);
    for algorithm in [Algorithm::Cgfb, Algorithm::KfAggregate] {
        let rows = run_experiment(&p, &ExperimentSpec::new(50, 40, vec![0, 1], algorithm)).unwrap();
        assert!(rows
            .iter()
            .all(|r| r.mean_sq_err.is_finite() && r.cov_sq_err.is_finite()));
    }
}

#[test]
fn analytic_truth_is_available() {
    let mut spec = ExperimentSpec::new(40, 20, vec![0], Algorithm::Cgfb);
    spec.ground_truth = GroundTruth::Analytic;
    let rows = run_experiment(&GhmmParams::reference(0.05), &spec).unwrap();
    assert!(rows[0].mean_sq_err.is_finite());
}

#[test]
fn window_error_does_not_grow_with_window() {
    let p = GhmmParams::reference(0.05);
    let seeds: Vec<u64> = (0..10).collect();
    let stats = |k| {
        let rows = run_experiment(
            &p,
            &ExperimentSpec::new(100, 100, seeds.clone(), Algorithm::SwCgfb).with_window(k),
        )
        .unwrap();
        let v: Vec<f64> = rows.iter().map(|r| r.mean_sq_err).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        (mean, sd)
    };
    let (e10, s10) = stats(10);
    let (e20, s20) = stats(20);
    let (e30, _) = stats(30);
    assert!(e20 <= e10 + s10, "K=20 {e20} vs K=10 {e10} (sd {s10})");
    assert!(e30 <= e20 + s20, "K=30 {e30} vs K=20 {e20} (sd {s20})");
}
