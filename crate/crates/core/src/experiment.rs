//! Toy and benchmark experiment runners and their on-disk artifacts.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{gen_toy, make_folds, Dataset, Manifest};
use crate::error::{Error, Result};
use crate::eval::{
    final_fit, header_line, pick_rate, summarize, validation_nll, write_results, write_summary_csv, FoldFailure,
    FoldResult, GuardedSplit, ModelTrainer, ResultRecord, SummaryRow,
};
use crate::heads::HeadKind;
use crate::model::{Metrics, Regressor};
use crate::numcore::Rng;

/// Interior region used to read off the toy model's noise estimate.
pub const TOY_INTERIOR: (f64, f64) = (-2.0, 2.0);
/// Number of evenly spaced points during toy training at which the
/// interior noise estimate is recorded.
pub const TOY_TRACE_POINTS: usize = 10;

fn write_artifact(path: &Path, cfg: &ExperimentConfig, body: &str) -> Result<()> {
    let mut text = header_line(&cfg.hash(), cfg.seed);
    text.push('\n');
    text.push_str(body);
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---------------------------------------------------------------------------
// Toy

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyRow {
    pub x: f64,
    pub y_true: f64,
    pub y_pred: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyHeadOutcome {
    pub head: HeadKind,
    pub metrics: Metrics,
    /// Mean predictive standard deviation over test points in [`TOY_INTERIOR`].
    pub interior_sigma: f64,
    /// `(epoch, interior_sigma)` recorded while training.
    pub sigma_trace: Vec<(usize, f64)>,
    pub rows: Vec<ToyRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyOutcome {
    pub seed: u64,
    pub heads: Vec<ToyHeadOutcome>,
}

impl ToyOutcome {
    pub fn head(&self, head: HeadKind) -> Option<&ToyHeadOutcome> {
        self.heads.iter().find(|h| h.head == head)
    }
}

fn interior_sigma(model: &Regressor, test: &Dataset, forwards: usize, rng: &Rng) -> Result<f64> {
    let dists = model.predict(&test.x, forwards, rng)?;
    let (lo, hi) = TOY_INTERIOR;
    let inside: Vec<f64> = dists
        .iter()
        .enumerate()
        .filter(|(r, _)| (lo..=hi).contains(&test.x.get(*r, 0)))
        .map(|(_, d)| d.variance().sqrt())
        .collect();
    if inside.is_empty() {
        return Err(Error::Data("no toy test points in the interior region".into()));
    }
    Ok(inside.iter().sum::<f64>() / inside.len() as f64)
}

/// Trains every configured head on the toy cubic and scores it on the
/// noiseless test grid.
pub fn run_toy(cfg: &ExperimentConfig) -> Result<ToyOutcome> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let (train, test) = gen_toy(&root.substream("toy"), cfg.toy_train_points, cfg.toy_noise_std)?;
    let rate = cfg.dropout_rates[0];
    let mut heads = Vec::new();
    for &head in &cfg.heads {
        let settings = cfg.train_settings(head);
        let fit_rng = root.substream("fit").substream(head.as_str());
        let eval_rng = root.substream("eval").substream(head.as_str());
        let every = (settings.epochs / TOY_TRACE_POINTS).max(1);
        let mut trace = Vec::new();
        let model = Regressor::fit_monitored(&train, head, rate, &settings, &fit_rng, |epoch, m| {
            if (epoch + 1) % every == 0 {
                trace.push((
                    epoch + 1,
                    interior_sigma(m, &test, cfg.forwards, &eval_rng.substream("trace"))?,
                ));
            }
            Ok(())
        })?;
        let metrics = model.evaluate(&test, cfg.forwards, &eval_rng)?;
        let dists = model.predict(&test.x, cfg.forwards, &eval_rng)?;
        let rows = dists
            .iter()
            .enumerate()
            .map(|(r, d)| {
                let (lower, upper) = d.band();
                ToyRow {
                    x: test.x.get(r, 0),
                    y_true: test.y[r],
                    y_pred: d.mean(),
                    lower,
                    upper,
                }
            })
            .collect();
        heads.push(ToyHeadOutcome {
            head,
            metrics,
            interior_sigma: interior_sigma(&model, &test, cfg.forwards, &eval_rng)?,
            sigma_trace: trace,
            rows,
        });
    }
    Ok(ToyOutcome { seed: cfg.seed, heads })
}

/// Writes `toy_metrics.csv`, `toy_sigma_trace.csv` and one
/// `toy_<head>.csv` plot table per head. Returns the written paths.
pub fn write_toy_artifacts(outcome: &ToyOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();

    let mut metrics = String::from("head,rmse,nll,interior_sigma\n");
    let mut trace = String::from("head,epoch,interior_sigma\n");
    for h in &outcome.heads {
        metrics.push_str(&format!(
            "{},{},{},{}\n",
            h.head, h.metrics.rmse, h.metrics.nll, h.interior_sigma
        ));
        for (epoch, s) in &h.sigma_trace {
            trace.push_str(&format!("{},{epoch},{s}\n", h.head));
        }
    }
    for (name, body) in [("toy_metrics.csv", metrics), ("toy_sigma_trace.csv", trace)] {
        let path = dir.join(name);
        write_artifact(&path, cfg, &body)?;
        written.push(path);
    }

    for h in &outcome.heads {
        let mut body = String::from("x,y_true,y_pred,sigma_lower,sigma_upper\n");
        for r in &h.rows {
            body.push_str(&format!("{},{},{},{},{}\n", r.x, r.y_true, r.y_pred, r.lower, r.upper));
        }
        let path = dir.join(format!("toy_{}.csv", h.head));
        write_artifact(&path, cfg, &body)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Benchmarks

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JobTiming {
    pub dataset: String,
    pub head: HeadKind,
    pub fold: usize,
    /// `None` for the final refit.
    pub rate: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub records: Vec<ResultRecord>,
    pub summary: Vec<SummaryRow>,
    pub timings: Vec<JobTiming>,
}

impl BenchOutcome {
    pub fn results(&self) -> impl Iterator<Item = &FoldResult> {
        self.records.iter().filter_map(|r| match r {
            ResultRecord::Ok(f) => Some(f),
            ResultRecord::Failed(_) => None,
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = &FoldFailure> {
        self.records.iter().filter_map(|r| match r {
            ResultRecord::Failed(f) => Some(f),
            ResultRecord::Ok(_) => None,
        })
    }
}

struct Prepared {
    name: String,
    splits: Vec<GuardedSplit>,
}

/// Resolves the dataset selector against the manifest.
pub fn selected_datasets(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<Vec<String>> {
    match cfg.dataset.trim() {
        "toy" => Err(Error::Config("dataset 'toy' is run with the toy command".into())),
        "all" => Ok(manifest.datasets.iter().map(|e| e.name.clone()).collect()),
        list => list
            .split(',')
            .map(|n| manifest.entry(n.trim()).map(|e| e.name.clone()))
            .collect(),
    }
}

/// Seed stream for one (dataset, head, fold) job family.
pub fn fold_rng(seed: u64, dataset: &str, head: HeadKind, fold: usize) -> Rng {
    Rng::new(seed)
        .substream(dataset)
        .substream(head.as_str())
        .indexed("fold", fold as u64)
}

/// Runs the fold protocol for every selected dataset and head.
///
/// Every dataset is loaded and shape-checked before any training starts.
/// Selection fits (one per dataset, head, fold and rate) run first, then
/// the final refits; both phases use a pool of `workers` threads and are
/// merged in key order.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let mut prepared = Vec::new();
    for name in selected_datasets(cfg, &manifest)? {
        let entry = manifest.entry(&name)?;
        let data = manifest.load_dataset(entry)?;
        let n_folds = if cfg.folds > 0 { cfg.folds } else { entry.folds };
        let folds = make_folds(
            data.len(),
            n_folds,
            &Rng::new(cfg.seed).substream(&name),
            cfg.validation_fraction,
        )?;
        let splits = folds.iter().map(|f| GuardedSplit::new(&data, f)).collect();
        prepared.push(Prepared { name, splits });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let trainers: BTreeMap<HeadKind, ModelTrainer> = cfg
        .heads
        .iter()
        .map(|&h| {
            (
                h,
                ModelTrainer {
                    head: h,
                    settings: cfg.train_settings(h),
                    forwards: cfg.forwards,
                },
            )
        })
        .collect();

    // (dataset index, head, fold index)
    let mut fold_keys = Vec::new();
    for (d, p) in prepared.iter().enumerate() {
        for &head in &cfg.heads {
            for f in 0..p.splits.len() {
                fold_keys.push((d, head, f));
            }
        }
    }

    let rates = &cfg.dropout_rates;
    let search = rates.len() > 1;
    let select_jobs: Vec<(usize, HeadKind, usize, f64)> = if search {
        fold_keys
            .iter()
            .flat_map(|&(d, h, f)| rates.iter().map(move |&r| (d, h, f, r)))
            .collect()
    } else {
        Vec::new()
    };

    let selected: Vec<(Result<f64>, f64)> = pool.install(|| {
        select_jobs
            .par_iter()
            .map(|&(d, h, f, r)| {
                let split = &prepared[d].splits[f];
                let start = Instant::now();
                let out = validation_nll(
                    &trainers[&h],
                    split,
                    r,
                    &fold_rng(cfg.seed, &prepared[d].name, h, split.fold),
                );
                (out, start.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut timings = Vec::new();
    let mut chosen: Vec<std::result::Result<f64, String>> = Vec::with_capacity(fold_keys.len());
    if search {
        for (k, chunk) in selected.chunks(rates.len()).enumerate() {
            let (d, h, f) = fold_keys[k];
            let mut nlls = Vec::with_capacity(rates.len());
            let mut failure = None;
            for (i, (res, secs)) in chunk.iter().enumerate() {
                timings.push(JobTiming {
                    dataset: prepared[d].name.clone(),
                    head: h,
                    fold: prepared[d].splits[f].fold,
                    rate: Some(rates[i]),
                    seconds: *secs,
                });
                match res {
                    Ok(v) => nlls.push(*v),
                    Err(e) => {
                        failure.get_or_insert_with(|| format!("selection at dropout {}: {e}", rates[i]));
                    }
                }
            }
            chosen.push(match failure {
                Some(e) => Err(e),
                None => pick_rate(rates, &nlls).map_err(|e| e.to_string()),
            });
        }
    } else {
        chosen.extend(fold_keys.iter().map(|_| Ok(rates[0])));
    }

    let finals: Vec<(ResultRecord, f64)> = pool.install(|| {
        fold_keys
            .par_iter()
            .zip(chosen.par_iter())
            .map(|(&(d, h, f), rate)| {
                let split = &prepared[d].splits[f];
                let name = &prepared[d].name;
                let start = Instant::now();
                let out = rate.clone().and_then(|rate| {
                    final_fit(&trainers[&h], split, rate, &fold_rng(cfg.seed, name, h, split.fold))
                        .map(|m| (rate, m))
                        .map_err(|e| e.to_string())
                });
                let secs = start.elapsed().as_secs_f64();
                let record = match out {
                    Ok((rate, m)) => ResultRecord::Ok(FoldResult {
                        dataset: name.clone(),
                        fold: split.fold,
                        head: h,
                        dropout: rate,
                        rmse: m.rmse,
                        nll: m.nll,
                        seed: cfg.seed,
                        wall_seconds: secs,
                    }),
                    Err(e) => ResultRecord::Failed(FoldFailure {
                        dataset: name.clone(),
                        fold: split.fold,
                        head: h,
                        seed: cfg.seed,
                        error: e,
                    }),
                };
                (record, secs)
            })
            .collect()
    });

    let mut records = Vec::with_capacity(finals.len());
    for (&(d, h, f), (rec, secs)) in fold_keys.iter().zip(finals) {
        timings.push(JobTiming {
            dataset: prepared[d].name.clone(),
            head: h,
            fold: prepared[d].splits[f].fold,
            rate: None,
            seconds: secs,
        });
        records.push(rec);
    }

    let ok: Vec<FoldResult> = records
        .iter()
        .filter_map(|r| match r {
            ResultRecord::Ok(f) => Some(f.clone()),
            ResultRecord::Failed(_) => None,
        })
        .collect();
    let summary = if ok.is_empty() { Vec::new() } else { summarize(&ok)? };
    Ok(BenchOutcome {
        records,
        summary,
        timings,
    })
}

/// Writes `results.jsonl`, `summary.csv` and `timings.csv`.
pub fn write_bench_artifacts(outcome: &BenchOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let hash = cfg.hash();
    let results = dir.join("results.jsonl");
    write_results(&results, &outcome.records, &hash, cfg.seed)?;
    let summary = dir.join("summary.csv");
    write_summary_csv(&summary, &outcome.summary, &hash, cfg.seed)?;

    let mut body = Vec::new();
    writeln!(body, "dataset,head,fold,rate,seconds").unwrap();
    for t in &outcome.timings {
        let rate = t.rate.map_or("final".to_string(), |r| r.to_string());
        writeln!(body, "{},{},{},{rate},{:.3}", t.dataset, t.head, t.fold, t.seconds).unwrap();
    }
    let timings = dir.join("timings.csv");
    write_artifact(&timings, cfg, &String::from_utf8(body).expect("ascii"))?;
    Ok(vec![results, summary, timings])
}

/// Writes the emitted config next to the artifacts.
pub fn write_config_artifact(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("config.txt");
    write_artifact(&path, cfg, &cfg.emit())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_toy() -> ExperimentConfig {
        let mut c = ExperimentConfig::toy();
        c.epochs_gaussian = 20;
        c.epochs_rac = 20;
        c.hidden = 8;
        c.bins = 10;
        c
    }

    #[test]
    fn toy_artifacts_have_header_and_100_rows() {
        let cfg = quick_toy();
        let out = run_toy(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_toy_artifacts(&out, &cfg, dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        for p in &paths {
            let text = std::fs::read_to_string(p).unwrap();
            assert!(text.starts_with(&header_line(&cfg.hash(), cfg.seed)));
        }
        let plot = std::fs::read_to_string(dir.path().join("toy_gaussian.csv")).unwrap();
        assert_eq!(plot.lines().count(), 102);
        assert_eq!(plot.lines().nth(1).unwrap(), "x,y_true,y_pred,sigma_lower,sigma_upper");
        let g = out.head(HeadKind::Gaussian).unwrap();
        assert_eq!(g.sigma_trace.len(), TOY_TRACE_POINTS);
    }

    #[test]
    fn rac_band_stays_in_training_range() {
        let cfg = quick_toy();
        let out = run_toy(&cfg).unwrap();
        let (train, _) = gen_toy(
            &Rng::new(cfg.seed).substream("toy"),
            cfg.toy_train_points,
            cfg.toy_noise_std,
        )
        .unwrap();
        let lo = train.y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = train.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for r in &out.head(HeadKind::Rac).unwrap().rows {
            assert!(r.lower >= lo - 1e-9 && r.upper <= hi + 1e-9 && r.lower <= r.upper);
        }
    }

    #[test]
    fn toy_is_seed_sensitive() {
        let a = quick_toy();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(run_toy(&a).unwrap(), run_toy(&b).unwrap());
    }
}
