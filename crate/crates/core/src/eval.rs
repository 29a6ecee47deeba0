//! Metrics, dropout-rate selection and fold aggregation.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{benchmark_shape, Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::model::{Metrics, Regressor, TrainSettings};
use crate::numcore::Rng;

pub use crate::model::rmse;

/// Dropout grid searched per fold.
pub const DROPOUT_GRID: [f64; 4] = [0.005, 0.01, 0.05, 0.1];

/// One fold's test metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub dataset: String,
    pub fold: usize,
    pub head: HeadKind,
    pub dropout: f64,
    pub rmse: f64,
    pub nll: f64,
    pub seed: u64,
    /// Wall-clock seconds; kept out of the results file so reruns stay
    /// byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// A fold whose training or evaluation failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub dataset: String,
    pub fold: usize,
    pub head: HeadKind,
    pub seed: u64,
    pub error: String,
}

/// One line of a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResultRecord {
    Ok(FoldResult),
    Failed(FoldFailure),
}

/// Mean and standard error of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Standard error is the sample standard deviation over `√n`.
    pub fn of(values: &[f64]) -> MeanSe {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        MeanSe { mean, se }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub head: HeadKind,
    pub folds: usize,
    pub rmse: MeanSe,
    pub nll: MeanSe,
}

/// Per `(dataset, head)` mean ± standard error; rows sorted by key.
pub fn summarize(results: &[FoldResult]) -> Result<Vec<SummaryRow>> {
    if results.is_empty() {
        return Err(Error::Data("no fold results to summarize".into()));
    }
    let mut groups: BTreeMap<(String, &'static str), Vec<&FoldResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.dataset.clone(), r.head.as_str())).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((dataset, _), mut group) in groups {
        group.sort_by_key(|r| r.fold);
        let rmse: Vec<f64> = group.iter().map(|r| r.rmse).collect();
        let nll: Vec<f64> = group.iter().map(|r| r.nll).collect();
        rows.push(SummaryRow {
            dataset,
            head: group[0].head,
            folds: group.len(),
            rmse: MeanSe::of(&rmse),
            nll: MeanSe::of(&nll),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Model selection

/// Something that can be trained at a dropout rate and scored.
pub trait Trainer: Sync {
    type Model;
    fn fit(&self, train: &Dataset, rate: f64, rng: &Rng) -> Result<Self::Model>;
    fn score(&self, model: &Self::Model, data: &Dataset, rng: &Rng) -> Result<Metrics>;
}

/// The production trainer: a [`Regressor`] with fixed settings.
#[derive(Clone, Debug)]
pub struct ModelTrainer {
    pub head: HeadKind,
    pub settings: TrainSettings,
    pub forwards: usize,
}

impl Trainer for ModelTrainer {
    type Model = Regressor;

    fn fit(&self, train: &Dataset, rate: f64, rng: &Rng) -> Result<Regressor> {
        Regressor::fit(train, self.head, rate, &self.settings, rng)
    }

    fn score(&self, model: &Regressor, data: &Dataset, rng: &Rng) -> Result<Metrics> {
        model.evaluate(data, self.forwards, rng)
    }
}

/// Train / validation / test rows of one fold. The test rows are only
/// reachable through [`GuardedSplit::test`], which counts every access.
#[derive(Debug)]
pub struct GuardedSplit {
    pub fold: usize,
    train: Dataset,
    validation: Dataset,
    test: Dataset,
    test_reads: AtomicUsize,
}

impl GuardedSplit {
    pub fn new(data: &Dataset, split: &FoldSplit) -> Self {
        GuardedSplit {
            fold: split.fold,
            train: data.subset(&split.train),
            validation: data.subset(&split.validation),
            test: data.subset(&split.test),
            test_reads: AtomicUsize::new(0),
        }
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn validation(&self) -> &Dataset {
        &self.validation
    }

    pub fn train_and_validation(&self) -> Dataset {
        let mut joined = self.train.clone();
        let mut rows: Vec<Vec<f64>> = (0..joined.len()).map(|r| joined.x.row(r).to_vec()).collect();
        rows.extend((0..self.validation.len()).map(|r| self.validation.x.row(r).to_vec()));
        joined.x = crate::numcore::Matrix::from_rows(&rows).expect("same feature count");
        joined.y.extend_from_slice(&self.validation.y);
        joined
    }

    pub fn test(&self) -> &Dataset {
        self.test_reads.fetch_add(1, Ordering::SeqCst);
        &self.test
    }

    pub fn test_reads(&self) -> usize {
        self.test_reads.load(Ordering::SeqCst)
    }
}

/// Stream used for the selection fits of one fold.
pub fn selection_rng(fold_rng: &Rng) -> Rng {
    fold_rng.substream("select")
}

/// Validation NLL of a model trained on the fold's training rows.
pub fn validation_nll<T: Trainer>(trainer: &T, split: &GuardedSplit, rate: f64, fold_rng: &Rng) -> Result<f64> {
    let rng = selection_rng(fold_rng);
    let model = trainer.fit(split.train(), rate, &rng)?;
    let nll = trainer.score(&model, split.validation(), &rng.substream("eval"))?.nll;
    if nll.is_nan() {
        return Err(Error::Numeric(format!("NaN validation NLL at dropout {rate}")));
    }
    Ok(nll)
}

/// Arg-min over rates; exact ties go to the smallest rate.
pub fn pick_rate(rates: &[f64], nlls: &[f64]) -> Result<f64> {
    if rates.is_empty() || rates.len() != nlls.len() {
        return Err(Error::Config("dropout grid is empty".into()));
    }
    let mut best = 0;
    for i in 1..rates.len() {
        if nlls[i] < nlls[best] || (nlls[i] == nlls[best] && rates[i] < rates[best]) {
            best = i;
        }
    }
    Ok(rates[best])
}

/// Chooses the dropout rate with the lowest validation NLL. A single
/// candidate is returned without training.
pub fn select_dropout<T: Trainer>(trainer: &T, split: &GuardedSplit, rates: &[f64], fold_rng: &Rng) -> Result<f64> {
    match rates {
        [] => Err(Error::Config("dropout grid is empty".into())),
        [only] => Ok(*only),
        _ => {
            let nlls = rates
                .iter()
                .map(|&r| validation_nll(trainer, split, r, fold_rng))
                .collect::<Result<Vec<_>>>()?;
            pick_rate(rates, &nlls)
        }
    }
}

/// Refits on train + validation at `rate` and scores the test rows.
pub fn final_fit<T: Trainer>(trainer: &T, split: &GuardedSplit, rate: f64, fold_rng: &Rng) -> Result<Metrics> {
    let rng = fold_rng.substream("final");
    let model = trainer.fit(&split.train_and_validation(), rate, &rng)?;
    trainer.score(&model, split.test(), &rng.substream("eval"))
}

/// Full per-fold protocol: select, refit, test.
pub fn run_fold<T: Trainer>(
    trainer: &T,
    split: &GuardedSplit,
    rates: &[f64],
    fold_rng: &Rng,
) -> Result<(f64, Metrics)> {
    let rate = select_dropout(trainer, split, rates, fold_rng)?;
    Ok((rate, final_fit(trainer, split, rate, fold_rng)?))
}

// ---------------------------------------------------------------------------
// Published reference numbers

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Rmse,
    Nll,
}

/// A published `mean ± SE` for one dataset, head and metric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reference {
    pub dataset: &'static str,
    pub head: HeadKind,
    pub metric: Metric,
    pub mean: f64,
    pub se: f64,
}

impl Reference {
    /// Accepted band: `mean ± max(3·SE, 15% of |mean|)`.
    pub fn tolerance(&self) -> f64 {
        (3.0 * self.se).max(0.15 * self.mean.abs())
    }

    pub fn accepts(&self, value: f64) -> bool {
        (value - self.mean).abs() <= self.tolerance()
    }
}

macro_rules! refs {
    ($($ds:literal $head:ident $metric:ident $mean:literal $se:literal),* $(,)?) => {
        &[$(Reference { dataset: $ds, head: HeadKind::$head, metric: Metric::$metric, mean: $mean, se: $se }),*]
    };
}

/// Spiking-network results published for the benchmark suite.
pub const REFERENCE_RESULTS: &[Reference] = refs![
    "boston" Gaussian Rmse 3.35 0.17, "boston" Rac Rmse 3.40 0.19,
    "concrete" Gaussian Rmse 5.79 0.11, "concrete" Rac Rmse 5.08 0.10,
    "energy" Gaussian Rmse 2.09 0.13, "energy" Rac Rmse 1.26 0.02,
    "kin8nm" Gaussian Rmse 0.08 0.00, "kin8nm" Rac Rmse 0.08 0.00,
    "naval" Gaussian Rmse 0.01 0.00, "naval" Rac Rmse 0.00 0.00,
    "power" Gaussian Rmse 5.13 0.08, "power" Rac Rmse 4.39 0.03,
    "protein" Gaussian Rmse 4.31 0.02, "protein" Rac Rmse 4.13 0.03,
    "wine" Gaussian Rmse 0.62 0.01, "wine" Rac Rmse 0.64 0.01,
    "boston" Gaussian Nll 2.74 0.04, "boston" Rac Nll 2.59 0.02,
    "concrete" Gaussian Nll 3.17 0.02, "concrete" Rac Nll 3.08 0.01,
    "energy" Gaussian Nll 1.93 0.08, "energy" Rac Nll 1.52 0.01,
    "kin8nm" Gaussian Nll -1.13 0.00, "kin8nm" Rac Nll -0.75 0.00,
    "naval" Gaussian Nll -3.76 0.23, "naval" Rac Nll -4.30 0.00,
    "power" Gaussian Nll 3.19 0.02, "power" Rac Nll 3.05 0.00,
    "protein" Gaussian Nll 2.79 0.03, "protein" Rac Nll 2.32 0.01,
    "wine" Gaussian Nll 1.28 0.04, "wine" Rac Nll 0.21 0.03,
];

pub fn reference(dataset: &str, head: HeadKind, metric: Metric) -> Option<&'static Reference> {
    REFERENCE_RESULTS
        .iter()
        .find(|r| r.dataset == dataset && r.head == head && r.metric == metric)
}

// ---------------------------------------------------------------------------
// Result files

/// `# config_hash=<hash> seed=<seed>` header shared by every artifact.
pub fn header_line(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}")
}

/// Line-delimited JSON, one record per fold, after a header comment.
pub fn write_results(path: &Path, records: &[ResultRecord], config_hash: &str, seed: u64) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header_line(config_hash, seed));
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

/// CSV laid out like the published tables, with the reference value
/// alongside when one exists.
pub fn format_summary_csv(rows: &[SummaryRow], config_hash: &str, seed: u64) -> String {
    let mut buf = Vec::new();
    writeln!(buf, "{}", header_line(config_hash, seed)).unwrap();
    writeln!(
        buf,
        "dataset,N,Q,head,folds,rmse_mean,rmse_se,nll_mean,nll_se,ref_rmse_mean,ref_rmse_se,ref_nll_mean,ref_nll_se"
    )
    .unwrap();
    for r in rows {
        let (n, q) =
            benchmark_shape(&r.dataset).map_or((String::new(), String::new()), |(n, q)| (n.to_string(), q.to_string()));
        let fmt_ref = |m| {
            reference(&r.dataset, r.head, m).map_or((String::new(), String::new()), |x| {
                (format!("{:.2}", x.mean), format!("{:.2}", x.se))
            })
        };
        let (rr, rrs) = fmt_ref(Metric::Rmse);
        let (rn, rns) = fmt_ref(Metric::Nll);
        writeln!(
            buf,
            "{},{n},{q},{},{},{:.6},{:.6},{:.6},{:.6},{rr},{rrs},{rn},{rns}",
            r.dataset, r.head, r.folds, r.rmse.mean, r.rmse.se, r.nll.mean, r.nll.se
        )
        .unwrap();
    }
    String::from_utf8(buf).expect("utf-8")
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow], config_hash: &str, seed: u64) -> Result<()> {
    std::fs::write(path, format_summary_csv(rows, config_hash, seed)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_folds;
    use crate::numcore::Matrix;
    use std::collections::HashMap;

    fn result(ds: &str, fold: usize, rmse: f64, nll: f64) -> FoldResult {
        FoldResult {
            dataset: ds.into(),
            fold,
            head: HeadKind::Gaussian,
            dropout: 0.05,
            rmse,
            nll,
            seed: 0,
            wall_seconds: 1.0,
        }
    }

    #[test]
    fn summary_examples() {
        let same = vec![result("a", 0, 2.0, 1.0), result("a", 1, 2.0, 1.0)];
        let s = summarize(&same).unwrap();
        assert_eq!(s[0].rmse.se, 0.0);
        let two = vec![result("a", 0, 1.0, 0.0), result("a", 1, 3.0, 0.0)];
        let s = summarize(&two).unwrap();
        assert!((s[0].rmse.mean - 2.0).abs() < 1e-12);
        assert!((s[0].rmse.se - 1.0).abs() < 1e-12);
        let mut shuffled = vec![
            result("a", 2, 5.0, 1.0),
            result("b", 0, 1.0, 2.0),
            result("a", 0, 1.0, 3.0),
            result("a", 1, 4.0, 0.5),
            result("b", 1, 2.0, 2.5),
        ];
        let s1 = summarize(&shuffled).unwrap();
        shuffled.reverse();
        assert_eq!(s1, summarize(&shuffled).unwrap());
        assert!(summarize(&[]).is_err());
    }

    /// Returns preset validation NLLs keyed by rate.
    struct FakeTrainer {
        nll: HashMap<u64, f64>,
    }

    impl Trainer for FakeTrainer {
        type Model = f64;
        fn fit(&self, _train: &Dataset, rate: f64, _rng: &Rng) -> Result<f64> {
            Ok(rate)
        }
        fn score(&self, rate: &f64, _data: &Dataset, _rng: &Rng) -> Result<Metrics> {
            Ok(Metrics {
                rmse: 0.0,
                nll: self.nll[&rate.to_bits()],
            })
        }
    }

    fn split() -> GuardedSplit {
        let x = Matrix::from_vec(20, 1, (0..20).map(f64::from).collect()).unwrap();
        let d = Dataset::new("d", x, (0..20).map(f64::from).collect()).unwrap();
        GuardedSplit::new(&d, &make_folds(20, 1, &Rng::new(0), 0.2).unwrap()[0])
    }

    #[test]
    fn selection_is_argmin() {
        let rates: [f64; 3] = [0.01, 0.05, 0.1];
        let t = FakeTrainer {
            nll: rates.iter().map(|r| r.to_bits()).zip([3.0, 1.0, 2.0]).collect(),
        };
        let s = split();
        assert_eq!(select_dropout(&t, &s, &rates, &Rng::new(1)).unwrap(), 0.05);
        assert_eq!(s.test_reads(), 0);
        assert_eq!(select_dropout(&t, &s, &[0.1], &Rng::new(1)).unwrap(), 0.1);
        assert_eq!(pick_rate(&[0.1, 0.01], &[1.0, 1.0]).unwrap(), 0.01);
        assert!(select_dropout(&t, &s, &[], &Rng::new(1)).is_err());
    }

    #[test]
    fn final_fit_reads_test_once() {
        let t = FakeTrainer {
            nll: [(0.1f64.to_bits(), 0.5)].into_iter().collect(),
        };
        let s = split();
        run_fold(&t, &s, &[0.1], &Rng::new(0)).unwrap();
        assert_eq!(s.test_reads(), 1);
        assert_eq!(s.train_and_validation().len(), s.train().len() + s.validation().len());
    }

    #[test]
    fn reference_band() {
        let r = reference("boston", HeadKind::Gaussian, Metric::Rmse).unwrap();
        assert_eq!((r.mean, r.se), (3.35, 0.17));
        // max(0.51, 0.5025)
        assert!((r.tolerance() - 0.51).abs() < 1e-12);
        assert!(r.accepts(3.8) && !r.accepts(3.9));
        let e = reference("energy", HeadKind::Rac, Metric::Nll).unwrap();
        assert_eq!((e.mean, e.se), (1.52, 0.01));
    }

    #[test]
    fn results_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let recs = vec![
            ResultRecord::Ok(result("a", 0, 1.5, 2.5)),
            ResultRecord::Failed(FoldFailure {
                dataset: "a".into(),
                fold: 1,
                head: HeadKind::Rac,
                seed: 0,
                error: "boom".into(),
            }),
        ];
        write_results(&path, &recs, "abcd", 7).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abcd seed=7\n"));
        assert!(!text.contains("wall_seconds"));
        let back = read_results(&path).unwrap();
        match (&back[0], &back[1]) {
            (ResultRecord::Ok(r), ResultRecord::Failed(f)) => {
                assert_eq!(r.rmse, 1.5);
                assert_eq!(f.error, "boom");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
