use std::path::Path;

use sqr_core::bench::{self, BenchmarkConfig, FoldRow, Metric, Status};
use sqr_core::data::{Dataset, Generator};
use sqr_core::Matrix;

fn config(text: &str) -> BenchmarkConfig {
    BenchmarkConfig::from_toml(text).unwrap()
}

fn linear_data(n: usize, seed: u64) -> (String, Dataset) {
    ("lin".to_string(), Generator::linear().sample(n, seed).unwrap())
}

#[test]
fn single_model_single_dataset_accounting() {
    let cfg = config(
        r#"
        taus = [0.5]
        [[models]]
        kind = "lqr"
        [[datasets]]
        name = "lin"
        generator = "linear"
        n = 100
        "#,
    );
    let data = bench::load_datasets(&cfg, Path::new(".")).unwrap();
    let report = bench::run(&cfg, &data, Path::new(".")).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert!(report.rows.iter().all(|r| r.status == Status::Ok));
    assert_eq!(report.aggregates.len(), 1);
    assert_eq!(report.aggregates[0].datasets, 1);
    assert_eq!(report.aggregates[0].model, "LQR");
    // Friedman needs two models, so no pairwise stage.
    assert!(report.pairwise.is_empty());
    assert!(report.friedman.iter().all(|f| f.result.is_none()));
}

#[test]
fn aggregates_recompute_from_rows() {
    let cfg = config(
        r#"
        k = 3
        [[models]]
        kind = "lqr"
        [[models]]
        kind = "qdt"
        min_samples_leaf = 10
        [[datasets]]
        name = "a"
        generator = "heteroskedastic"
        n = 90
        seed = 1
        [[datasets]]
        name = "b"
        generator = { kind = "trigonometric", amplitude = 1.0, frequency = 2.0, sigma = 0.1 }
        n = 90
        seed = 2
        "#,
    );
    let data = bench::load_datasets(&cfg, Path::new(".")).unwrap();
    let report = bench::run(&cfg, &data, Path::new(".")).unwrap();
    assert_eq!(report.rows.len(), 2 * 2 * 2 * 3);
    for agg in &report.aggregates {
        let per_dataset: Vec<f64> = ["a", "b"]
            .iter()
            .map(|d| {
                let rows: Vec<&FoldRow> = report
                    .rows
                    .iter()
                    .filter(|r| r.model == agg.model && r.tau == agg.tau && r.dataset == *d)
                    .collect();
                rows.iter().map(|r| r.nql.unwrap()).sum::<f64>() / rows.len() as f64
            })
            .collect();
        let mean = per_dataset.iter().sum::<f64>() / 2.0;
        assert!((mean - agg.nql.mean).abs() < 1e-12);
        let sd = ((per_dataset[0] - mean).powi(2) + (per_dataset[1] - mean).powi(2)).sqrt();
        assert!((sd - agg.nql.sd).abs() < 1e-12);
    }
    let lqr = report.aggregate("LQR", 0.5).unwrap();
    assert_eq!(lqr.parsimony.unwrap().mean, 2.0);
}

#[test]
fn identical_models_identical_aggregates() {
    let cfg = config(
        r#"
        taus = [0.9]
        [[models]]
        kind = "lqr"
        name = "A"
        [[models]]
        kind = "lqr"
        name = "B"
        [[datasets]]
        name = "lin"
        generator = "linear"
        n = 80
        "#,
    );
    let data = bench::load_datasets(&cfg, Path::new(".")).unwrap();
    let report = bench::run(&cfg, &data, Path::new(".")).unwrap();
    let (a, b) = (report.aggregate("A", 0.9).unwrap(), report.aggregate("B", 0.9).unwrap());
    assert_eq!(a.nql, b.nql);
    assert_eq!(a.ace, b.ace);
    assert_eq!(a.parsimony, b.parsimony);
}

#[test]
fn degenerate_folds_and_tiny_datasets_are_skipped() {
    let cfg = config(
        r#"
        taus = [0.5]
        [[models]]
        kind = "qdt"
        [[datasets]]
        name = "flat"
        path = "unused.csv"
        [[datasets]]
        name = "tiny"
        path = "unused.csv"
        "#,
    );
    let flat = Dataset::from_parts(
        Matrix::from_columns(vec![(0..20).map(f64::from).collect()]).unwrap(),
        vec![3.0; 20],
    )
    .unwrap();
    let tiny = Dataset::from_parts(Matrix::from_columns(vec![vec![1.0, 2.0, 3.0]]).unwrap(), vec![1.0, 2.0, 4.0]).unwrap();
    let data = vec![("flat".to_string(), flat), ("tiny".to_string(), tiny)];
    let report = bench::run(&cfg, &data, Path::new(".")).unwrap();
    let flat_rows: Vec<&FoldRow> = report.rows.iter().filter(|r| r.dataset == "flat").collect();
    assert_eq!(flat_rows.len(), 5);
    assert!(flat_rows
        .iter()
        .all(|r| r.status == Status::Skipped && r.reason.as_deref() == Some("degenerate test target range")));
    let tiny_rows: Vec<&FoldRow> = report.rows.iter().filter(|r| r.dataset == "tiny").collect();
    assert_eq!(tiny_rows.len(), 1);
    assert_eq!(tiny_rows[0].fold, None);
    assert!(report.aggregates.is_empty());
    let csv = report.rows_csv().unwrap();
    assert!(csv.starts_with("model,dataset,fold,tau,status,nql,ace,coverage,parsimony,wall_time_ms,reason\n"));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn external_predictions_are_scored_alongside() {
    let dir = tempfile::tempdir().unwrap();
    let (name, data) = linear_data(60, 5);
    let plan = sqr_core::data::kfold(data.nrows(), 5, 0).unwrap();
    let mut text = String::from("row,fold,tau,prediction\n");
    for f in 0..5 {
        for r in plan.test_indices(f) {
            text.push_str(&format!("{r},{f},0.5,{:?}\n", data.y[r]));
        }
    }
    std::fs::write(dir.path().join("lin_preds.csv"), text).unwrap();
    let cfg = config(
        r#"
        taus = [0.5]
        [[models]]
        kind = "lqr"
        [[models]]
        kind = "external"
        name = "oracle"
        predictions = "{dataset}_preds.csv"
        [[datasets]]
        name = "lin"
        path = "x.csv"
        "#,
    );
    let report = bench::run(&cfg, &[(name, data)], dir.path()).unwrap();
    let ext = report.aggregate("oracle", 0.5).unwrap();
    assert_eq!(ext.nql.mean, 0.0);
    assert_eq!(ext.coverage.mean, 1.0);
    assert!(ext.parsimony.is_none());
    assert!(report.aggregate("LQR", 0.5).unwrap().nql.mean > 0.0);
    let friedman = report.friedman.iter().find(|f| f.metric == Metric::Nql).unwrap();
    assert_eq!(friedman.models, vec!["LQR".to_string(), "oracle".to_string()]);
    let pars = report.friedman.iter().find(|f| f.metric == Metric::Parsimony).unwrap();
    assert_eq!(pars.models, vec!["LQR".to_string()]);
}

#[test]
fn missing_external_file_skips_with_reason() {
    let cfg = config(
        r#"
        taus = [0.5]
        [[models]]
        kind = "external"
        name = "ghost"
        predictions = "nowhere/{dataset}.csv"
        [[datasets]]
        name = "lin"
        generator = "linear"
        n = 50
        "#,
    );
    let data = bench::load_datasets(&cfg, Path::new(".")).unwrap();
    let report = bench::run(&cfg, &data, Path::new(".")).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert!(report.rows.iter().all(|r| r.status == Status::Skipped && r.reason.is_some()));
}

fn ok_row(model: &str, dataset: &str, nql: f64) -> FoldRow {
    FoldRow {
        model: model.into(),
        dataset: dataset.into(),
        fold: Some(0),
        tau: 0.5,
        status: Status::Ok,
        nql: Some(nql),
        ace: Some(nql),
        coverage: Some(0.5),
        parsimony: Some(1.0),
        wall_time_ms: Some(1.0),
        reason: None,
    }
}

#[test]
fn pairwise_stage_is_gated_by_friedman() {
    let models = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    let mut rows = Vec::new();
    for d in 0..30 {
        let ds = format!("d{d}");
        rows.push(ok_row("A", &ds, 0.1 + d as f64 * 1e-3));
        rows.push(ok_row("B", &ds, 0.2 + d as f64 * 1e-3));
        rows.push(ok_row("C", &ds, 0.3 + d as f64 * 1e-3));
    }
    let report = bench::assemble(rows, &models, &[0.5], 0.05);
    assert!((report.friedman_alpha - 0.05 / 3.0).abs() < 1e-15);
    assert!((report.pairwise_alpha - 0.05 / 9.0).abs() < 1e-15);
    let nql = report.friedman.iter().find(|f| f.metric == Metric::Nql).unwrap();
    assert!(nql.significant);
    let pars = report.friedman.iter().find(|f| f.metric == Metric::Parsimony).unwrap();
    assert!(!pars.significant);
    assert!(report.pairwise.iter().all(|p| p.metric != Metric::Parsimony));
    let ab = report
        .pairwise
        .iter()
        .find(|p| p.metric == Metric::Nql && p.model_a == "A" && p.model_b == "B")
        .unwrap();
    assert!(ab.significant);
    assert_eq!(ab.better.as_deref(), Some("A"));
}

#[test]
fn config_validation() {
    let bad = [
        "[[datasets]]\nname='a'\ngenerator='linear'\nn=10",
        "taus=[1.5]\n[[models]]\nkind='lqr'\n[[datasets]]\nname='a'\ngenerator='linear'\nn=10",
        "[[models]]\nkind='lqr'\n[[datasets]]\nname='a'",
        "[[models]]\nkind='lqr'\n[[models]]\nkind='lqr'\n[[datasets]]\nname='a'\ngenerator='linear'\nn=10",
        "[[models]]\nkind='magic'\n[[datasets]]\nname='a'\ngenerator='linear'\nn=10",
        "[[models]]\nkind='lqr'\n[[datasets]]\nname='a'\ngenerator='nope'\nn=10",
    ];
    for text in bad {
        let err = BenchmarkConfig::from_toml(text).unwrap_err();
        assert!(err.is_config(), "{text}: {err}");
    }
}

#[test]
fn report_files_are_written() {
    let cfg = config(
        r#"
        taus = [0.5, 0.9]
        k = 2
        [[models]]
        kind = "qdt_grid"
        inner_folds = 2
        [[datasets]]
        name = "h"
        generator = "heteroskedastic"
        n = 40
        "#,
    );
    let data = bench::load_datasets(&cfg, Path::new(".")).unwrap();
    let report = bench::run(&cfg, &data, Path::new(".")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = report.write(dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let agg = std::fs::read_to_string(dir.path().join("aggregates.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3, "{agg}\n{}", report.rows_csv().unwrap());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["aggregates"].as_array().unwrap().len(), 2);
}
