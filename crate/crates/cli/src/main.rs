//! `sqr`: fit, apply and benchmark symbolic quantile regression models.
//!
//! Exit codes: 0 success, 1 data or model error, 2 configuration error.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifest::ManifestBuilder;
use sqr_core::bench::{self, BenchmarkConfig};
use sqr_core::data::{self, Dataset, Generator};
use sqr_core::expr::FeatureNames;
use sqr_core::loss::MetricRecord;
use sqr_core::model::{self, FittedModel};
use sqr_core::pareto::Selection;
use sqr_core::search::{evolve, SearchConfig};
use sqr_core::{Error, Matrix, QuantileLevel};

#[derive(Debug, Parser)]
#[command(name = "sqr", version, about = "Symbolic quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve a Pareto front of expressions for one quantile level.
    Fit {
        /// Training CSV with a header row.
        data: PathBuf,
        /// Quantile level in (0, 1); overrides `tau` in the config file.
        #[arg(long, allow_hyphen_values = true)]
        tau: Option<f64>,
        /// Search configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `random_state` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Single-threaded search.
        #[arg(long)]
        deterministic: bool,
        /// Train on a uniform subsample of at most this many rows.
        #[arg(long)]
        max_train_rows: Option<usize>,
        /// Target column; defaults to the last column.
        #[arg(long)]
        target: Option<String>,
    },
    /// Write one prediction per input row.
    Predict {
        /// Model file: JSON written by `fit`, or a plain-text expression.
        model: PathBuf,
        /// Input CSV with a header row.
        data: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Column to exclude from the features.
        #[arg(long)]
        target: Option<String>,
    },
    /// Print test metrics of a model on labelled data.
    Evaluate {
        model: PathBuf,
        data: PathBuf,
        /// Defaults to the level stored in the model.
        #[arg(long, allow_hyphen_values = true)]
        tau: Option<f64>,
        /// Target column; defaults to the last column.
        #[arg(long)]
        target: Option<String>,
    },
    /// Cross-validated comparison of several models over several datasets.
    Benchmark {
        /// Benchmark configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the benchmark seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        deterministic: bool,
    },
    /// Sample a synthetic dataset.
    Synth {
        /// heteroskedastic, linear or trigonometric.
        kind: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_config() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Fit {
            data,
            tau,
            config,
            seed,
            out,
            deterministic,
            max_train_rows,
            target,
        } => fit(&data, tau, config.as_deref(), seed, &out, deterministic, max_train_rows, target.as_deref()),
        Command::Predict {
            model,
            data,
            out,
            target,
        } => predict(&model, &data, &out, target.as_deref()),
        Command::Evaluate {
            model,
            data,
            tau,
            target,
        } => evaluate(&model, &data, tau, target.as_deref()),
        Command::Benchmark {
            config,
            out,
            seed,
            deterministic,
        } => benchmark(&config, &out, seed, deterministic),
        Command::Synth { kind, n, seed, out } => synth(&kind, n, seed, &out),
    }
}

fn read_config(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn tau_level(tau: Option<f64>) -> Outcome<QuantileLevel> {
    let tau = tau.ok_or_else(|| Failure::config("no quantile level: pass --tau or set `tau` in the config"))?;
    Ok(QuantileLevel::new(tau)?)
}

#[allow(clippy::too_many_arguments)]
fn fit(
    data_path: &Path,
    tau: Option<f64>,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    deterministic: bool,
    max_train_rows: Option<usize>,
    target: Option<&str>,
) -> Outcome {
    let mut manifest = ManifestBuilder::new("fit");
    let (mut cfg, file_tau) = match config {
        Some(p) => {
            manifest = manifest.input(p);
            SearchConfig::from_toml_with_tau(&read_config(p)?)?
        }
        None => (SearchConfig::default(), None),
    };
    let tau = tau_level(tau.or(file_tau))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.deterministic |= deterministic;
    if max_train_rows == Some(0) {
        return Err(Failure::config("--max-train-rows must be positive"));
    }

    let dataset = data::load_csv(data_path, target)?;
    let train = match max_train_rows {
        Some(m) => data::subsample(&dataset, m, cfg.seed),
        None => dataset.clone(),
    };
    let outcome = evolve(&train, tau, &cfg)?;

    std::fs::create_dir_all(out)?;
    let names = FeatureNames::new(&dataset.names);
    let printable = names.printable().then_some(&names);
    let front_path = out.join("front.csv");
    outcome.front.write_csv(&front_path, printable)?;
    let mut outputs = vec![front_path];
    for (selection, file) in [(Selection::BestLoss, "model_best.json"), (Selection::Elbow, "model_elbow.json")] {
        let path = out.join(file);
        model::from_front(&outcome.front, selection, &dataset.names)?.save(&path)?;
        outputs.push(path);
    }
    let snapshot = serde_json::json!({
        "tau": tau.value(),
        "target": dataset.target_name,
        "max_train_rows": max_train_rows,
        "search": serde_json::to_value(&cfg).expect("config serializes"),
    });
    manifest
        .input(data_path)
        .seed(cfg.seed)
        .deterministic(cfg.deterministic)
        .config(snapshot)
        .write(&out.join("manifest.json"), &outputs)?;
    for entry in outcome.front.entries() {
        let text = sqr_core::expr::format_expr(&entry.expr, printable);
        println!("{}\t{:?}\t{}", entry.complexity, entry.loss, text);
    }
    Ok(())
}

/// Feature columns of `table` for `model`: the model's named features
/// when all are present, otherwise every column except `target`.
fn feature_columns(table: data::Table, model_features: &[String], target: Option<&str>) -> Outcome<(Matrix, Vec<String>)> {
    let mut header = table.header;
    let mut columns = table.columns;
    if !model_features.is_empty() && model_features.iter().all(|f| header.contains(f)) {
        let picked: Vec<Vec<f64>> = model_features
            .iter()
            .map(|f| columns[header.iter().position(|h| h == f).expect("checked")].clone())
            .collect();
        return Ok((Matrix::from_columns(picked)?, model_features.to_vec()));
    }
    if let Some(t) = target {
        let i = header
            .iter()
            .position(|h| h == t)
            .ok_or_else(|| Failure::data(format!("unknown target column `{t}`")))?;
        header.remove(i);
        columns.remove(i);
    }
    if columns.is_empty() {
        return Err(Failure::data("no feature columns"));
    }
    Ok((Matrix::from_columns(columns)?, header))
}

fn predict(model_path: &Path, data_path: &Path, out: &Path, target: Option<&str>) -> Outcome {
    let table = data::read_table(data_path)?;
    let model = FittedModel::load(model_path, Some(&table.header))?;
    let (x, names) = feature_columns(table, model.features(), target)?;
    let predictions = model.predict(&x, Some(&names))?;
    let mut text = String::from("prediction\n");
    for p in &predictions {
        text.push_str(&format!("{p:?}\n"));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, text)?;
    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".manifest.json");
    ManifestBuilder::new("predict")
        .input(model_path)
        .input(data_path)
        .write(Path::new(&manifest_path), &[out.to_path_buf()])?;
    Ok(())
}

fn evaluate(model_path: &Path, data_path: &Path, tau: Option<f64>, target: Option<&str>) -> Outcome {
    let dataset: Dataset = data::load_csv(data_path, target)?;
    let model = FittedModel::load(model_path, Some(&dataset.names))?;
    let tau = tau_level(tau.or(model.tau().map(f64::from)))?;
    let predictions = model.predict(&dataset.x, Some(&dataset.names))?;
    let parsimony = model.parsimony()?;
    let m = MetricRecord::compute(tau, &dataset.y, &predictions, Some(parsimony))?;
    println!("tau: {}", tau.value());
    println!("nql: {}", m.nql);
    println!("coverage: {}", m.coverage);
    println!("ace: {}", m.ace);
    println!("parsimony: {parsimony}");
    println!("mean_pinball: {}", m.mean_pinball);
    Ok(())
}

fn benchmark(config: &Path, out: &Path, seed: Option<u64>, deterministic: bool) -> Outcome {
    let mut cfg = BenchmarkConfig::from_toml(&read_config(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.deterministic |= deterministic;
    let base = config.parent().unwrap_or(Path::new("."));
    let datasets = bench::load_datasets(&cfg, base)?;
    let report = bench::run(&cfg, &datasets, base)?;
    let outputs = report.write(out)?;
    let mut manifest = ManifestBuilder::new("benchmark")
        .input(config)
        .seed(cfg.seed)
        .deterministic(cfg.deterministic)
        .config(serde_json::to_value(&cfg).expect("config serializes"));
    for d in &cfg.datasets {
        if let Some(p) = &d.path {
            manifest = manifest.input(base.join(p));
        }
    }
    manifest.write(&out.join("manifest.json"), &outputs)?;
    for a in &report.aggregates {
        println!(
            "{}\ttau={}\tnql={:.4}±{:.4}\tace={:.4}±{:.4}",
            a.model, a.tau, a.nql.mean, a.nql.sd, a.ace.mean, a.ace.sd
        );
    }
    Ok(())
}

fn synth(kind: &str, n: usize, seed: u64, out: &Path) -> Outcome {
    let generator =
        Generator::from_kind(kind).ok_or_else(|| Failure::config(format!("unknown generator `{kind}`")))?;
    let dataset = generator.sample(n, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    dataset.write_csv(out)?;
    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".manifest.json");
    ManifestBuilder::new("synth")
        .seed(seed)
        .deterministic(true)
        .config(serde_json::json!({ "generator": generator, "n": n }))
        .write(Path::new(&manifest_path), &[out.to_path_buf()])?;
    Ok(())
}
