//! Datasets: CSV ingestion, fold plans, subsampling and synthetic generators.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::error::{Error, Result};
use crate::loss::QuantileLevel;
use crate::matrix::Matrix;

/// Feature matrix plus target. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, names: Vec<String>, target_name: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.nrows(),
                right: y.len(),
            });
        }
        if names.len() != x.ncols() {
            return Err(Error::LengthMismatch {
                left: x.ncols(),
                right: names.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InsufficientData("dataset needs at least one feature column".into()));
        }
        if y.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "dataset needs at least 2 rows, got {}",
                y.len()
            )));
        }
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                if !x.get(i, j).is_finite() {
                    return Err(Error::Parse {
                        line: i + 2,
                        msg: format!("non-finite value in column `{}`", names[j]),
                    });
                }
            }
            if !y[i].is_finite() {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: "non-finite target value".into(),
                });
            }
        }
        Ok(Self {
            x,
            y,
            names,
            target_name: target_name.into(),
        })
    }

    /// Dataset with default names `x0..x{d-1}` and target `y`.
    pub fn from_parts(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names, "y")
    }

    pub fn nrows(&self) -> usize {
        self.y.len()
    }

    pub fn nfeatures(&self) -> usize {
        self.x.ncols()
    }

    /// Rows in the given order; bypasses the minimum-size check so that
    /// small folds remain representable.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            names: self.names.clone(),
            target_name: self.target_name.clone(),
        }
    }

    pub fn distinct_targets(&self) -> usize {
        let mut v = self.y.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    }

    /// Writes the dataset as CSV with the target as the last column. Values
    /// are printed in shortest round-trip form.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.nrows() {
            for j in 0..self.nfeatures() {
                write!(w, "{:?},", self.x.get(i, j))?;
            }
            writeln!(w, "{:?}", self.y[i])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A numeric table as read from CSV, before a target column is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads a header row plus numeric cells. Any missing, non-numeric or
/// non-finite cell is reported with its 1-based line number.
pub fn read_table(path: impl AsRef<Path>) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput("CSV has no header row".into()));
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} cells, found {}", header.len(), rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column `{}`: `{cell}` is not a number", header[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column `{}`: non-finite value `{cell}`", header[j]),
                });
            }
            columns[j].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::EmptyInput("CSV has no data rows".into()));
    }
    Ok(Table { header, columns })
}

/// Loads a dataset; the target is the named column, or the last column.
pub fn load_csv(path: impl AsRef<Path>, target: Option<&str>) -> Result<Dataset> {
    let table = read_table(path)?;
    dataset_from_table(table, target)
}

pub fn dataset_from_table(mut table: Table, target: Option<&str>) -> Result<Dataset> {
    if table.header.len() < 2 {
        return Err(Error::InsufficientData(
            "CSV needs at least one feature column and a target column".into(),
        ));
    }
    let t = match target {
        Some(name) => table
            .column_index(name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))?,
        None => table.header.len() - 1,
    };
    let target_name = table.header.remove(t);
    let y = table.columns.remove(t);
    let x = Matrix::from_columns(table.columns)?;
    Dataset::new(x, y, table.header, target_name)
}

/// Assignment of rows to `k` cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Shuffled k-fold assignment; fold sizes differ by at most one.
pub fn kfold(nrows: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count must be at least 2, got {k}")));
    }
    if k > nrows {
        return Err(Error::InsufficientData(format!(
            "cannot split {nrows} rows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..nrows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; nrows];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// Uniform sample of `max_rows` rows without replacement (original order
/// kept); returns the input unchanged when it is already small enough.
pub fn subsample(data: &Dataset, max_rows: usize, seed: u64) -> Dataset {
    let n = data.nrows();
    if n <= max_rows {
        return data.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, max_rows).into_vec();
    rows.sort_unstable();
    data.subset(&rows)
}

/// Synthetic generator families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `y = beta x + x sigma eps`, `x ~ U(0, 1)`: spread grows with `x`.
    Heteroskedastic { beta: f64, sigma: f64 },
    /// `y = intercept + slopes . x + sigma eps`, `x ~ U(0, 1)^2`.
    Linear {
        intercept: f64,
        slope0: f64,
        slope1: f64,
        sigma: f64,
    },
    /// `y = amplitude sin(frequency x) + sigma eps`, `x ~ U(-3, 3)`.
    Trigonometric {
        amplitude: f64,
        frequency: f64,
        sigma: f64,
    },
}

impl Generator {
    pub fn heteroskedastic() -> Self {
        Generator::Heteroskedastic { beta: 2.0, sigma: 1.0 }
    }

    pub fn linear() -> Self {
        Generator::Linear {
            intercept: 1.0,
            slope0: 2.0,
            slope1: -1.5,
            sigma: 0.3,
        }
    }

    pub fn trigonometric() -> Self {
        Generator::Trigonometric {
            amplitude: 2.0,
            frequency: 1.0,
            sigma: 0.3,
        }
    }

    pub fn from_kind(kind: &str) -> Option<Self> {
        match kind {
            "heteroskedastic" | "hetero" => Some(Self::heteroskedastic()),
            "linear" => Some(Self::linear()),
            "trigonometric" | "trig" => Some(Self::trigonometric()),
            _ => None,
        }
    }

    pub fn nfeatures(&self) -> usize {
        match self {
            Generator::Linear { .. } => 2,
            _ => 1,
        }
    }

    /// Draws `n` rows.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n < 10 {
            return Err(Error::InsufficientData(format!("synthetic data needs n >= 10, got {n}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.nfeatures();
        let mut x = Matrix::zeros(n, d);
        let mut y = Vec::with_capacity(n);
        match *self {
            Generator::Heteroskedastic { beta, sigma } => {
                check_sigma(sigma)?;
                let u = Uniform::new(0.0, 1.0).expect("valid range");
                for i in 0..n {
                    let xi: f64 = rng.sample(u);
                    let eps: f64 = rng.sample(StandardNormal);
                    x.set(i, 0, xi);
                    y.push(beta * xi + xi * sigma * eps);
                }
            }
            Generator::Linear {
                intercept,
                slope0,
                slope1,
                sigma,
            } => {
                check_sigma(sigma)?;
                let u = Uniform::new(0.0, 1.0).expect("valid range");
                let noise = Normal::new(0.0, sigma).expect("valid sigma");
                for i in 0..n {
                    let (a, b): (f64, f64) = (rng.sample(u), rng.sample(u));
                    x.set(i, 0, a);
                    x.set(i, 1, b);
                    y.push(intercept + slope0 * a + slope1 * b + rng.sample(noise));
                }
            }
            Generator::Trigonometric {
                amplitude,
                frequency,
                sigma,
            } => {
                check_sigma(sigma)?;
                let u = Uniform::new(-3.0, 3.0).expect("valid range");
                let noise = Normal::new(0.0, sigma).expect("valid sigma");
                for i in 0..n {
                    let xi: f64 = rng.sample(u);
                    x.set(i, 0, xi);
                    y.push(amplitude * (frequency * xi).sin() + rng.sample(noise));
                }
            }
        }
        Dataset::from_parts(x, y)
    }

    /// Closed-form conditional `tau`-quantile at a feature row.
    pub fn quantile(&self, tau: QuantileLevel, row: &[f64]) -> f64 {
        let z = standard_normal_quantile(tau);
        match *self {
            Generator::Heteroskedastic { beta, sigma } => beta * row[0] + row[0] * sigma * z,
            Generator::Linear {
                intercept,
                slope0,
                slope1,
                sigma,
            } => intercept + slope0 * row[0] + slope1 * row[1] + sigma * z,
            Generator::Trigonometric {
                amplitude,
                frequency,
                sigma,
            } => amplitude * (frequency * row[0]).sin() + sigma * z,
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("noise scale must be positive, got {sigma}")))
    }
}

pub fn standard_normal_quantile(tau: QuantileLevel) -> f64 {
    NormalDist::standard().inverse_cdf(tau.value())
}

/// Heteroskedastic sample plus its analytic quantile function.
pub fn synth_heteroskedastic(n: usize, beta: f64, sigma: f64, seed: u64) -> Result<(Dataset, Generator)> {
    let generator = Generator::Heteroskedastic { beta, sigma };
    Ok((generator.sample(n, seed)?, generator))
}
