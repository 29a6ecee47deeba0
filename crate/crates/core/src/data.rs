//! Datasets, the fold protocol, and standardization.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

/// Test-grid size of the cubic toy problem.
pub const TOY_TEST_POINTS: usize = 100;
pub const TOY_X_RANGE: (f64, f64) = (-4.0, 4.0);

/// Minimum number of rows the fold protocol accepts.
pub const MIN_ROWS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} targets",
                x.rows(),
                y.len()
            )));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite values in dataset".into()));
        }
        let q = x.cols();
        Ok(Dataset {
            name: name.into(),
            x,
            y,
            feature_names: (0..q).map(|i| format!("x{i}")).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Cubic toy problem: `y = x³ + ε` on uniformly drawn `x ∈ [−4, 4]` for
/// training, and a noiseless evenly spaced grid for testing.
pub fn gen_toy(rng: &Rng, n_train: usize, noise_std: f64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 {
        return Err(Error::Config("toy training set must be nonempty".into()));
    }
    let (lo, hi) = TOY_X_RANGE;
    let mut xs_rng = rng.substream("toy-x");
    let mut noise_rng = rng.substream("toy-noise");
    let xs: Vec<f64> = (0..n_train).map(|_| xs_rng.uniform(lo, hi)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| {
            x.powi(3)
                + if noise_std > 0.0 {
                    noise_rng.normal(0.0, noise_std)
                } else {
                    0.0
                }
        })
        .collect();
    let train = Dataset::new("toy", Matrix::column(&xs), ys)?;

    let step = (hi - lo) / (TOY_TEST_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..TOY_TEST_POINTS).map(|i| lo + step * i as f64).collect();
    let truth = grid.iter().map(|x| x.powi(3)).collect();
    let test = Dataset::new("toy", Matrix::column(&grid), truth)?;
    Ok((train, test))
}

#[derive(Clone, Debug)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    /// Rows dropped because some cell did not parse as a number.
    pub rejected_rows: usize,
}

/// Reads a headered numeric CSV; every column other than `target_column`
/// becomes a feature.
pub fn load_csv(path: &Path, target_column: &str) -> Result<LoadedCsv> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::Data(format!("{}: no column named '{target_column}'", path.display())))?;

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rejected = 0;
    let mut target_failures = 0;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        rows += 1;
        let parsed: Vec<Option<f64>> = record
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        if parsed.len() != headers.len() || parsed.iter().any(Option::is_none) {
            if parsed.get(target).is_none_or(Option::is_none) {
                target_failures += 1;
            }
            rejected += 1;
            continue;
        }
        for (i, v) in parsed.into_iter().enumerate() {
            let v = v.expect("checked above");
            if i == target {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if rows > 0 && target_failures == rows {
        return Err(Error::Data(format!(
            "{}: target column '{target_column}' is not numeric",
            path.display()
        )));
    }
    if ys.is_empty() {
        return Err(Error::Data(format!("{}: no usable rows", path.display())));
    }
    let q = headers.len() - 1;
    let x = Matrix::from_vec(ys.len(), q, xs)?;
    let name = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut dataset = Dataset::new(name, x, ys)?;
    dataset.feature_names = headers
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, h)| h)
        .collect();
    Ok(LoadedCsv {
        dataset,
        rejected_rows: rejected,
    })
}

/// `(N, Q)` of the benchmark datasets as published with the reference results.
pub const BENCHMARK_SHAPES: &[(&str, usize, usize)] = &[
    ("boston", 506, 13),
    ("concrete", 1030, 8),
    ("energy", 768, 8),
    ("kin8nm", 8192, 8),
    ("naval", 11934, 16),
    ("power", 9568, 4),
    ("protein", 45730, 9),
    ("wine", 1599, 11),
];

pub fn benchmark_shape(name: &str) -> Option<(usize, usize)> {
    BENCHMARK_SHAPES
        .iter()
        .find(|(n, ..)| *n == name)
        .map(|&(_, n, q)| (n, q))
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    /// CSV path, relative to the manifest's directory.
    pub path: PathBuf,
    pub target: String,
    pub n: usize,
    pub q: usize,
    /// Fold count; defaults to 20.
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Manifest {
    #[serde(skip)]
    pub root: PathBuf,
    #[serde(rename = "dataset", default)]
    pub datasets: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses a manifest and checks declared shapes against [`BENCHMARK_SHAPES`].
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Manifest::parse(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        for e in &m.datasets {
            if let Some((n, q)) = benchmark_shape(&e.name) {
                if (e.n, e.q) != (n, q) {
                    return Err(Error::Data(format!(
                        "manifest entry '{}' declares N={}, Q={} but the benchmark has N={n}, Q={q}",
                        e.name, e.n, e.q
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn entry(&self, name: &str) -> Result<&ManifestEntry> {
        self.datasets
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Data(format!("dataset '{name}' not in manifest")))
    }

    /// Loads an entry's CSV and verifies its shape matches the declaration.
    pub fn load_dataset(&self, entry: &ManifestEntry) -> Result<Dataset> {
        let path = self.root.join(&entry.path);
        let mut loaded = load_csv(&path, &entry.target)?.dataset;
        if (loaded.len(), loaded.num_features()) != (entry.n, entry.q) {
            return Err(Error::Data(format!(
                "{}: expected N={}, Q={}, found N={}, Q={}",
                entry.name,
                entry.n,
                entry.q,
                loaded.len(),
                loaded.num_features()
            )));
        }
        loaded.name = entry.name.clone();
        Ok(loaded)
    }
}

/// One random train / validation / test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    /// Training and validation rows together, for the final refit.
    pub fn train_and_validation(&self) -> Vec<usize> {
        self.train.iter().chain(&self.validation).copied().collect()
    }
}

/// Fraction of rows held out for testing in every fold.
pub const TEST_FRACTION: f64 = 0.1;

/// Builds `n_folds` independent permutations of `0..n`. The last
/// `⌊0.1 n⌋` indices are test; of the remainder the last
/// `⌊val_fraction · remainder⌋` are validation.
pub fn make_folds(n: usize, n_folds: usize, rng: &Rng, val_fraction: f64) -> Result<Vec<FoldSplit>> {
    if n < MIN_ROWS {
        return Err(Error::Data(format!("need at least {MIN_ROWS} rows for folds, got {n}")));
    }
    if n_folds == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} outside [0, 1)"
        )));
    }
    let n_test = (TEST_FRACTION * n as f64).floor() as usize;
    let rest = n - n_test;
    let n_val = (val_fraction * rest as f64).floor() as usize;
    let n_train = rest - n_val;
    if n_test == 0 || n_train == 0 {
        return Err(Error::Data(format!("{n} rows cannot produce nonempty splits")));
    }
    Ok((0..n_folds)
        .map(|fold| {
            let perm = rng.indexed("fold", fold as u64).permutation(n);
            FoldSplit {
                fold,
                train: perm[..n_train].to_vec(),
                validation: perm[n_train..rest].to_vec(),
                test: perm[rest..].to_vec(),
            }
        })
        .collect())
}

/// Training-set statistics for inputs and target.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Fits on `train`; zero-variance columns get identity statistics.
    pub fn fit(train: &Dataset) -> Result<Standardizer> {
        if train.len() < 2 {
            return Err(Error::Data("standardization needs at least 2 rows".into()));
        }
        let q = train.num_features();
        let mut x_mean = vec![0.0; q];
        let mut x_std = vec![1.0; q];
        for c in 0..q {
            let (m, s) = mean_std((0..train.len()).map(|r| train.x.get(r, c)));
            if s > 0.0 {
                x_mean[c] = m;
                x_std[c] = s;
            }
        }
        let (y_mean, y_std) = match mean_std(train.y.iter().copied()) {
            (m, s) if s > 0.0 => (m, s),
            _ => (0.0, 1.0),
        };
        Ok(Standardizer {
            x_mean,
            x_std,
            y_mean,
            y_std,
        })
    }

    /// Identity transform for `q` features.
    pub fn identity(q: usize) -> Standardizer {
        Standardizer {
            x_mean: vec![0.0; q],
            x_std: vec![1.0; q],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    pub fn transform_x(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.x_mean[c]) / self.x_std[c];
            }
        }
        out
    }

    pub fn transform_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn inverse_y(&self, z: f64) -> f64 {
        z * self.y_std + self.y_mean
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        Dataset {
            name: data.name.clone(),
            x: self.transform_x(&data.x),
            y: data.y.iter().map(|&y| self.transform_y(y)).collect(),
            feature_names: data.feature_names.clone(),
        }
    }
}

pub fn standardize(train: &Dataset) -> Result<(Standardizer, Dataset)> {
    let s = Standardizer::fit(train)?;
    let t = s.transform(train);
    Ok((s, t))
}

/// Converts a density NLL from standardized to original target units.
pub fn nll_rescale(nll_std: f64, y_std: f64) -> f64 {
    nll_std + y_std.ln()
}
