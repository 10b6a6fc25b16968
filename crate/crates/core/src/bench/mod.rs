//! Cross-validated benchmark: models x datasets x folds x quantile levels,
//! per-dataset fold averages, aggregates over datasets and a two-stage
//! rank-test analysis.
//!
//! Datasets are weighted equally in aggregates regardless of their size.
//! Wall time covers model fitting only.

pub mod stats;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::linear::fit_linear_quantile;
use crate::baselines::tree::{fit_quantile_tree, fit_quantile_tree_grid, LEAF_GRID};
use crate::data::{self, Dataset, Generator};
use crate::error::{Error, Result};
use crate::loss::{MetricRecord, QuantileLevel};
use crate::model::FittedModel;
use crate::pareto::Selection;
use crate::search::{evolve, SearchConfig};

pub use stats::{bonferroni, friedman_test, wilcoxon_signed_rank, TestResult, WilcoxonResult};

fn default_k() -> usize {
    5
}

fn default_taus() -> Vec<f64> {
    vec![0.5, 0.9]
}

fn default_alpha() -> f64 {
    0.05
}

fn default_leaf() -> usize {
    5
}

fn default_grid() -> Vec<usize> {
    LEAF_GRID.to_vec()
}

fn default_inner_folds() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub models: Vec<ModelSpec>,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Runs cells one at a time and forces single-threaded search.
    #[serde(default)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Sqr {
        name: Option<String>,
        /// Path to a search configuration file; `search` takes precedence.
        config: Option<PathBuf>,
        search: Option<SearchConfig>,
        max_train_rows: Option<usize>,
        #[serde(default = "default_selection")]
        selection: Selection,
    },
    Lqr {
        name: Option<String>,
    },
    Qdt {
        name: Option<String>,
        #[serde(default = "default_leaf")]
        min_samples_leaf: usize,
    },
    QdtGrid {
        name: Option<String>,
        #[serde(default = "default_grid")]
        grid: Vec<usize>,
        #[serde(default = "default_inner_folds")]
        inner_folds: usize,
    },
    /// Predictions computed elsewhere, read from CSV files with columns
    /// `row,fold,tau,prediction`. `{dataset}` in the path is replaced by
    /// the dataset name.
    External {
        name: String,
        predictions: String,
    },
}

fn default_selection() -> Selection {
    Selection::Elbow
}

impl ModelSpec {
    pub fn name(&self) -> String {
        let (given, fallback) = match self {
            ModelSpec::Sqr { name, .. } => (name, "SQR"),
            ModelSpec::Lqr { name } => (name, "LQR"),
            ModelSpec::Qdt { name, .. } => (name, "QDT"),
            ModelSpec::QdtGrid { name, .. } => (name, "QDT-grid"),
            ModelSpec::External { name, .. } => return name.clone(),
        };
        given.clone().unwrap_or_else(|| fallback.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// CSV file; the target is `target` or the last column.
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    pub generator: Option<GeneratorSpec>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

/// A generator given by kind name with default parameters, or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSpec {
    Kind(String),
    Full(Generator),
}

impl GeneratorSpec {
    pub fn resolve(&self) -> Result<Generator> {
        match self {
            GeneratorSpec::Full(g) => Ok(*g),
            GeneratorSpec::Kind(k) => {
                Generator::from_kind(k).ok_or_else(|| Error::Config(format!("unknown generator `{k}`")))
            }
        }
    }
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("benchmark needs at least one model".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("benchmark needs at least one dataset".into()));
        }
        if self.taus.is_empty() {
            return Err(Error::Config("benchmark needs at least one quantile level".into()));
        }
        for &t in &self.taus {
            QuantileLevel::new(t)?;
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.models {
            if !seen.insert(m.name()) {
                return Err(Error::Config(format!("duplicate model name `{}`", m.name())));
            }
            match m {
                ModelSpec::Qdt { min_samples_leaf: 0, .. } => {
                    return Err(Error::Config("min_samples_leaf must be at least 1".into()))
                }
                ModelSpec::QdtGrid { grid, inner_folds, .. } if grid.is_empty() || grid.contains(&0) || *inner_folds < 2 => {
                    return Err(Error::Config("leaf grid must be non-empty and positive, inner_folds at least 2".into()))
                }
                ModelSpec::Sqr { search: Some(s), .. } => s.validate()?,
                _ => {}
            }
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.datasets {
            if !names.insert(&d.name) {
                return Err(Error::Config(format!("duplicate dataset name `{}`", d.name)));
            }
            match (&d.path, &d.generator) {
                (Some(_), None) => {}
                (None, Some(g)) => {
                    g.resolve()?;
                    if d.n.is_none() {
                        return Err(Error::Config(format!("synthetic dataset `{}` needs `n`", d.name)));
                    }
                }
                _ => {
                    return Err(Error::Config(format!(
                        "dataset `{}` needs exactly one of `path` or `generator`",
                        d.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Loads the datasets and resolves relative paths against `base`.
pub fn load_datasets(cfg: &BenchmarkConfig, base: &Path) -> Result<Vec<(String, Dataset)>> {
    cfg.datasets
        .iter()
        .map(|d| {
            let data = match (&d.path, &d.generator) {
                (Some(p), _) => data::load_csv(base.join(p), d.target.as_deref())?,
                (None, Some(g)) => g.resolve()?.sample(d.n.unwrap_or(0), d.seed.unwrap_or(cfg.seed))?,
                (None, None) => return Err(Error::Config(format!("dataset `{}` has no source", d.name))),
            };
            Ok((d.name.clone(), data))
        })
        .collect()
}

/// Search configurations referenced by file, resolved once up front.
fn resolve_search_configs(cfg: &BenchmarkConfig, base: &Path) -> Result<Vec<Option<SearchConfig>>> {
    cfg.models
        .iter()
        .map(|m| match m {
            ModelSpec::Sqr { search: Some(s), .. } => Ok(Some(s.clone())),
            ModelSpec::Sqr { config: Some(p), .. } => {
                let text = std::fs::read_to_string(base.join(p))?;
                Ok(Some(SearchConfig::from_toml(&text)?))
            }
            ModelSpec::Sqr { .. } => Ok(Some(SearchConfig::default())),
            _ => Ok(None),
        })
        .collect()
}

/// External predictions keyed by (fold, tau bits, row).
type PredictionTable = HashMap<(usize, u64, usize), f64>;

fn load_predictions(template: &str, dataset: &str, base: &Path) -> Result<PredictionTable> {
    let path = base.join(template.replace("{dataset}", dataset));
    let table = data::read_table(&path)?;
    let col = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| Error::Model(format!("{}: missing column `{name}`", path.display())))
    };
    let (r, f, t, p) = (col("row")?, col("fold")?, col("tau")?, col("prediction")?);
    let mut out = HashMap::new();
    for i in 0..table.nrows() {
        let row = table.columns[r][i];
        let fold = table.columns[f][i];
        if row < 0.0 || fold < 0.0 || row.fract() != 0.0 || fold.fract() != 0.0 {
            return Err(Error::Parse {
                line: i + 2,
                msg: "row and fold must be non-negative integers".into(),
            });
        }
        out.insert((fold as usize, table.columns[t][i].to_bits(), row as usize), table.columns[p][i]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Skipped,
}

/// One fold of one (model, dataset, tau) cell, or a skip record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub model: String,
    pub dataset: String,
    /// `None` when the whole dataset was skipped.
    pub fold: Option<usize>,
    pub tau: f64,
    pub status: Status,
    pub nql: Option<f64>,
    pub ace: Option<f64>,
    pub coverage: Option<f64>,
    pub parsimony: Option<f64>,
    pub wall_time_ms: Option<f64>,
    pub reason: Option<String>,
}

impl FoldRow {
    fn skipped(model: &str, dataset: &str, fold: Option<usize>, tau: f64, reason: String) -> Self {
        Self {
            model: model.to_string(),
            dataset: dataset.to_string(),
            fold,
            tau,
            status: Status::Skipped,
            nql: None,
            ace: None,
            coverage: None,
            parsimony: None,
            wall_time_ms: None,
            reason: Some(reason),
        }
    }
}

/// Fold scores averaged for one (model, dataset, tau).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub model: String,
    pub dataset: String,
    pub tau: f64,
    pub folds: usize,
    pub nql: f64,
    pub ace: f64,
    pub coverage: f64,
    pub parsimony: Option<f64>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

/// Per (model, tau) summary over datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub tau: f64,
    pub datasets: usize,
    pub nql: MeanSd,
    pub ace: MeanSd,
    pub coverage: MeanSd,
    pub parsimony: Option<MeanSd>,
    pub wall_time_ms: MeanSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nql,
    Ace,
    Parsimony,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Nql, Metric::Ace, Metric::Parsimony];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Nql => "nql",
            Metric::Ace => "ace",
            Metric::Parsimony => "parsimony",
        }
    }

    fn of(self, s: &DatasetScore) -> Option<f64> {
        match self {
            Metric::Nql => Some(s.nql),
            Metric::Ace => Some(s.ace),
            Metric::Parsimony => s.parsimony,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanOutcome {
    pub metric: Metric,
    pub tau: f64,
    pub models: Vec<String>,
    /// Datasets scored by every listed model.
    pub datasets: usize,
    pub result: Option<TestResult>,
    pub alpha: f64,
    pub significant: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseOutcome {
    pub metric: Metric,
    pub tau: f64,
    pub model_a: String,
    pub model_b: String,
    pub result: Option<WilcoxonResult>,
    pub alpha: f64,
    pub significant: bool,
    /// Model with the lower mean score over the shared datasets.
    pub better: Option<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<FoldRow>,
    pub dataset_scores: Vec<DatasetScore>,
    pub aggregates: Vec<Aggregate>,
    pub friedman: Vec<FriedmanOutcome>,
    /// Pairwise tests, only for (metric, tau) cells whose Friedman test is
    /// significant at the corrected level.
    pub pairwise: Vec<PairwiseOutcome>,
    pub friedman_alpha: f64,
    pub pairwise_alpha: f64,
}

fn cell_seed(seed: u64, dataset: usize, fold: usize) -> u64 {
    seed ^ ((dataset as u64) << 32) ^ (fold as u64).wrapping_mul(0x9E37_79B9)
}

struct Cell<'a> {
    model: usize,
    dataset: usize,
    fold: usize,
    tau: QuantileLevel,
    train: &'a [usize],
    test: &'a [usize],
}

struct Context<'a> {
    cfg: &'a BenchmarkConfig,
    names: Vec<String>,
    datasets: &'a [(String, Dataset)],
    search: Vec<Option<SearchConfig>>,
    external: HashMap<(usize, usize), std::result::Result<PredictionTable, String>>,
}

impl Context<'_> {
    fn fit(&self, cell: &Cell<'_>, train: &Dataset) -> Result<FittedModel> {
        let tau = cell.tau;
        let features = train.names.clone();
        Ok(match &self.cfg.models[cell.model] {
            ModelSpec::Sqr {
                max_train_rows,
                selection,
                ..
            } => {
                let mut search = self.search[cell.model].clone().unwrap_or_default();
                search.seed = cell_seed(search.seed ^ self.cfg.seed, cell.dataset, cell.fold);
                search.deterministic |= self.cfg.deterministic;
                let sample = match max_train_rows {
                    Some(m) => data::subsample(train, *m, search.seed),
                    None => train.clone(),
                };
                let outcome = evolve(&sample, tau, &search)?;
                crate::model::from_front(&outcome.front, *selection, &features)?
            }
            ModelSpec::Lqr { .. } => FittedModel::Linear {
                model: fit_linear_quantile(&train.x, &train.y, tau)?,
                features,
            },
            ModelSpec::Qdt { min_samples_leaf, .. } => FittedModel::Tree {
                model: fit_quantile_tree(&train.x, &train.y, tau, *min_samples_leaf)?,
                features,
            },
            ModelSpec::QdtGrid { grid, inner_folds, .. } => FittedModel::Tree {
                model: fit_quantile_tree_grid(
                    &train.x,
                    &train.y,
                    tau,
                    grid,
                    *inner_folds,
                    cell_seed(self.cfg.seed, cell.dataset, cell.fold),
                )?,
                features,
            },
            ModelSpec::External { .. } => unreachable!("external models are not fitted"),
        })
    }

    fn run(&self, cell: &Cell<'_>) -> FoldRow {
        let name = &self.names[cell.model];
        let (dname, data) = &self.datasets[cell.dataset];
        let tau = cell.tau.value();
        let skip = |reason: String| FoldRow::skipped(name, dname, Some(cell.fold), tau, reason);
        let y_test: Vec<f64> = cell.test.iter().map(|&i| data.y[i]).collect();
        if y_test.iter().all(|v| *v == y_test[0]) {
            return skip("degenerate test target range".into());
        }
        let (pred, parsimony, wall) = if let ModelSpec::External { .. } = self.cfg.models[cell.model] {
            let table = match &self.external[&(cell.model, cell.dataset)] {
                Ok(t) => t,
                Err(e) => return skip(e.clone()),
            };
            let pred: Option<Vec<f64>> = cell
                .test
                .iter()
                .map(|&r| table.get(&(cell.fold, tau.to_bits(), r)).copied())
                .collect();
            match pred {
                Some(p) => (p, None, None),
                None => return skip(format!("missing external predictions for fold {}", cell.fold)),
            }
        } else {
            let train = data.subset(cell.train);
            let start = Instant::now();
            let fitted = self.fit(cell, &train);
            let wall = start.elapsed().as_secs_f64() * 1e3;
            let model = match fitted {
                Ok(m) => m,
                Err(e) => return skip(format!("fit failed: {e}")),
            };
            let test = data.subset(cell.test);
            let pred = match model.predict(&test.x, None) {
                Ok(p) => p,
                Err(e) => return skip(format!("predict failed: {e}")),
            };
            let parsimony = match model.parsimony() {
                Ok(p) => p,
                Err(e) => return skip(format!("parsimony failed: {e}")),
            };
            (pred, Some(parsimony), Some(wall))
        };
        match MetricRecord::compute(cell.tau, &y_test, &pred, parsimony) {
            Ok(m) => FoldRow {
                model: name.clone(),
                dataset: dname.clone(),
                fold: Some(cell.fold),
                tau,
                status: Status::Ok,
                nql: Some(m.nql),
                ace: Some(m.ace),
                coverage: Some(m.coverage),
                parsimony: m.parsimony.map(f64::from),
                wall_time_ms: wall,
                reason: None,
            },
            Err(e) => skip(format!("scoring failed: {e}")),
        }
    }
}

/// Runs every cell and assembles the report. `base` resolves relative
/// paths in the configuration.
pub fn run(cfg: &BenchmarkConfig, datasets: &[(String, Dataset)], base: &Path) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let taus: Vec<QuantileLevel> = cfg.taus.iter().map(|&t| QuantileLevel::new(t)).collect::<Result<_>>()?;
    let names: Vec<String> = cfg.models.iter().map(ModelSpec::name).collect();
    let mut external = HashMap::new();
    for (mi, m) in cfg.models.iter().enumerate() {
        if let ModelSpec::External { predictions, .. } = m {
            for (di, (dname, _)) in datasets.iter().enumerate() {
                let table = load_predictions(predictions, dname, base).map_err(|e| e.to_string());
                external.insert((mi, di), table);
            }
        }
    }
    let ctx = Context {
        cfg,
        names: names.clone(),
        datasets,
        search: resolve_search_configs(cfg, base)?,
        external,
    };

    let mut rows = Vec::new();
    let mut plans = Vec::new();
    for (di, (dname, d)) in datasets.iter().enumerate() {
        match data::kfold(d.nrows(), cfg.k, cfg.seed) {
            Ok(plan) => {
                let splits: Vec<(Vec<usize>, Vec<usize>)> =
                    (0..cfg.k).map(|f| (plan.train_indices(f), plan.test_indices(f))).collect();
                plans.push((di, splits));
            }
            Err(e) => {
                for name in &names {
                    for t in &cfg.taus {
                        rows.push(FoldRow::skipped(name, dname, None, *t, e.to_string()));
                    }
                }
            }
        }
    }
    let mut cells = Vec::new();
    for (di, splits) in &plans {
        for model in 0..cfg.models.len() {
            for &tau in &taus {
                for (fold, (train, test)) in splits.iter().enumerate() {
                    cells.push(Cell {
                        model,
                        dataset: *di,
                        fold,
                        tau,
                        train,
                        test,
                    });
                }
            }
        }
    }
    let results: Vec<FoldRow> = if cfg.deterministic {
        cells.iter().map(|c| ctx.run(c)).collect()
    } else {
        cells.par_iter().map(|c| ctx.run(c)).collect()
    };
    rows.extend(results);
    rows.sort_by(|a, b| {
        let key = |r: &FoldRow| {
            (
                names.iter().position(|n| *n == r.model),
                datasets.iter().position(|(d, _)| *d == r.dataset),
                cfg.taus.iter().position(|t| *t == r.tau),
                r.fold,
            )
        };
        key(a).cmp(&key(b))
    });
    Ok(assemble(rows, &names, &cfg.taus, cfg.alpha))
}

/// Builds dataset scores, aggregates and tests from fold rows.
pub fn assemble(rows: Vec<FoldRow>, models: &[String], taus: &[f64], alpha: f64) -> BenchmarkReport {
    let dataset_scores = dataset_scores(&rows);
    let aggregates = aggregate(&dataset_scores, models, taus);
    let friedman_alpha = bonferroni(alpha, Metric::ALL.len() * taus.len());
    let pairs = models.len() * models.len().saturating_sub(1) / 2;
    let pairwise_alpha = bonferroni(alpha, Metric::ALL.len() * taus.len() * pairs.max(1));
    let mut friedman = Vec::new();
    let mut pairwise = Vec::new();
    for &tau in taus {
        for metric in Metric::ALL {
            let table = score_table(&dataset_scores, metric, tau);
            let present: Vec<&String> = models.iter().filter(|m| table.values().any(|r| r.contains_key(*m))).collect();
            let complete: Vec<Vec<f64>> = table
                .values()
                .filter(|r| present.iter().all(|m| r.contains_key(*m)))
                .map(|r| present.iter().map(|m| r[*m]).collect())
                .collect();
            let (result, note) = match friedman_test(&complete) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let significant = result.is_some_and(|r| r.p_value < friedman_alpha);
            friedman.push(FriedmanOutcome {
                metric,
                tau,
                models: present.iter().map(|s| s.to_string()).collect(),
                datasets: complete.len(),
                result,
                alpha: friedman_alpha,
                significant,
                note,
            });
            if !significant {
                continue;
            }
            for i in 0..present.len() {
                for j in i + 1..present.len() {
                    let a: Vec<f64> = complete.iter().map(|r| r[i]).collect();
                    let b: Vec<f64> = complete.iter().map(|r| r[j]).collect();
                    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                    let better = match mean(&a).partial_cmp(&mean(&b)) {
                        Some(std::cmp::Ordering::Less) => Some(present[i].clone()),
                        Some(std::cmp::Ordering::Greater) => Some(present[j].clone()),
                        _ => None,
                    };
                    let (result, note) = match wilcoxon_signed_rank(&a, &b) {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    pairwise.push(PairwiseOutcome {
                        metric,
                        tau,
                        model_a: present[i].clone(),
                        model_b: present[j].clone(),
                        significant: result.is_some_and(|r| !r.all_zero && r.p_value < pairwise_alpha),
                        result,
                        alpha: pairwise_alpha,
                        better,
                        note,
                    });
                }
            }
        }
    }
    BenchmarkReport {
        rows,
        dataset_scores,
        aggregates,
        friedman,
        pairwise,
        friedman_alpha,
        pairwise_alpha,
    }
}

/// dataset -> model -> score, for one metric and tau.
fn score_table(scores: &[DatasetScore], metric: Metric, tau: f64) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.tau == tau) {
        if let Some(v) = metric.of(s) {
            table.entry(s.dataset.clone()).or_default().insert(s.model.clone(), v);
        }
    }
    table
}

/// Averages the successful folds of each (model, dataset, tau).
pub fn dataset_scores(rows: &[FoldRow]) -> Vec<DatasetScore> {
    let mut groups: Vec<((String, String, u64), Vec<&FoldRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.status == Status::Ok) {
        let key = (r.model.clone(), r.dataset.clone(), r.tau.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((model, dataset, tau), rs)| {
            let n = rs.len() as f64;
            let mean = |f: fn(&FoldRow) -> Option<f64>| rs.iter().map(|r| f(r).unwrap_or(0.0)).sum::<f64>() / n;
            DatasetScore {
                model,
                dataset,
                tau: f64::from_bits(tau),
                folds: rs.len(),
                nql: mean(|r| r.nql),
                ace: mean(|r| r.ace),
                coverage: mean(|r| r.coverage),
                parsimony: rs.iter().all(|r| r.parsimony.is_some()).then(|| mean(|r| r.parsimony)),
                wall_time_ms: mean(|r| r.wall_time_ms),
            }
        })
        .collect()
}

pub fn aggregate(scores: &[DatasetScore], models: &[String], taus: &[f64]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for model in models {
        for &tau in taus {
            let s: Vec<&DatasetScore> = scores.iter().filter(|s| s.model == *model && s.tau == tau).collect();
            let col = |f: fn(&DatasetScore) -> f64| s.iter().map(|d| f(d)).collect::<Vec<f64>>();
            let Some(nql) = MeanSd::of(&col(|d| d.nql)) else { continue };
            let pars: Option<Vec<f64>> = s.iter().map(|d| d.parsimony).collect();
            out.push(Aggregate {
                model: model.clone(),
                tau,
                datasets: s.len(),
                nql,
                ace: MeanSd::of(&col(|d| d.ace)).expect("non-empty"),
                coverage: MeanSd::of(&col(|d| d.coverage)).expect("non-empty"),
                parsimony: pars.and_then(|p| MeanSd::of(&p)),
                wall_time_ms: MeanSd::of(&col(|d| d.wall_time_ms)).expect("non-empty"),
            });
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl BenchmarkReport {
    pub const ROW_HEADER: [&'static str; 11] = [
        "model",
        "dataset",
        "fold",
        "tau",
        "status",
        "nql",
        "ace",
        "coverage",
        "parsimony",
        "wall_time_ms",
        "reason",
    ];

    pub const AGGREGATE_HEADER: [&'static str; 13] = [
        "model",
        "tau",
        "datasets",
        "nql_mean",
        "nql_sd",
        "ace_mean",
        "ace_sd",
        "coverage_mean",
        "coverage_sd",
        "parsimony_mean",
        "parsimony_sd",
        "wall_time_ms_mean",
        "wall_time_ms_sd",
    ];

    pub fn rows_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::ROW_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.dataset.clone(),
                r.fold.map(|f| f.to_string()).unwrap_or_default(),
                format!("{:?}", r.tau),
                match r.status {
                    Status::Ok => "ok".into(),
                    Status::Skipped => "skipped".into(),
                },
                opt(r.nql),
                opt(r.ace),
                opt(r.coverage),
                opt(r.parsimony),
                opt(r.wall_time_ms),
                r.reason.clone().unwrap_or_default(),
            ])?;
        }
        finish(w)
    }

    pub fn aggregates_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::AGGREGATE_HEADER)?;
        for a in &self.aggregates {
            w.write_record([
                a.model.clone(),
                format!("{:?}", a.tau),
                a.datasets.to_string(),
                format!("{:?}", a.nql.mean),
                format!("{:?}", a.nql.sd),
                format!("{:?}", a.ace.mean),
                format!("{:?}", a.ace.sd),
                format!("{:?}", a.coverage.mean),
                format!("{:?}", a.coverage.sd),
                opt(a.parsimony.map(|p| p.mean)),
                opt(a.parsimony.map(|p| p.sd)),
                format!("{:?}", a.wall_time_ms.mean),
                format!("{:?}", a.wall_time_ms.sd),
            ])?;
        }
        finish(w)
    }

    /// Aggregates, dataset scores and tests; fold rows live in the CSV.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            aggregates: &'a [Aggregate],
            dataset_scores: &'a [DatasetScore],
            friedman_alpha: f64,
            pairwise_alpha: f64,
            friedman: &'a [FriedmanOutcome],
            pairwise: &'a [PairwiseOutcome],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            aggregates: &self.aggregates,
            dataset_scores: &self.dataset_scores,
            friedman_alpha: self.friedman_alpha,
            pairwise_alpha: self.pairwise_alpha,
            friedman: &self.friedman,
            pairwise: &self.pairwise,
        })?)
    }

    /// Writes `rows.csv`, `aggregates.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let files = [
            ("rows.csv", self.rows_csv()?),
            ("aggregates.csv", self.aggregates_csv()?),
            ("summary.json", self.summary_json()? + "\n"),
        ];
        let mut paths = Vec::new();
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            paths.push(p);
        }
        Ok(paths)
    }

    pub fn aggregate(&self, model: &str, tau: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.model == model && a.tau == tau)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
