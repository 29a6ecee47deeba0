//! Experiment configuration as a flat `key = value` file.
//!
//! Lines starting with `#` are comments. Lists are comma separated.
//! Unknown keys are rejected. Keys, in emission order:
//!
//! | key | meaning |
//! |-----|---------|
//! | `dataset` | `toy`, a manifest name, a comma list of names, or `all` |
//! | `heads` | `gaussian`, `rac`, or both comma separated |
//! | `steps` | simulation steps per forward pass |
//! | `hidden` | PLIF neurons in the hidden layer |
//! | `bins` | RAC bin count |
//! | `distance_power` | exponent of the bin-distance penalty |
//! | `entropy_weight` | weight of the entropy term in the RAC loss |
//! | `entropy_term` | `bonus` (subtract) or `penalty` (add) |
//! | `dropout_rates` | grid searched per fold; one value disables search |
//! | `epochs_gaussian`, `epochs_rac` | training epochs per head |
//! | `batch_size` | minibatch rows |
//! | `learning_rate` | Adam step size |
//! | `folds` | fold count; 0 uses the manifest value |
//! | `validation_fraction` | share of non-test rows used for selection |
//! | `seed` | root seed |
//! | `workers` | parallel jobs |
//! | `out_dir` | artifact directory |
//! | `manifest` | benchmark manifest path |
//! | `readout_leak` | `learnable` or `accumulate` |
//! | `standardize_target` | standardize `y` for the Gaussian head |
//! | `forwards` | stochastic passes pooled at prediction time |
//! | `toy_train_points`, `toy_noise_std` | toy problem |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::heads::{EntropyTerm, HeadKind, RacLoss};
use crate::model::TrainSettings;
use crate::numcore::AdamConfig;
use crate::snn::ReadoutLeak;

/// Environment variable that overrides `out_dir` (flags still win).
pub const OUT_DIR_ENV: &str = "AOTSNN_OUT_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub heads: Vec<HeadKind>,
    pub steps: usize,
    pub hidden: usize,
    pub bins: usize,
    pub distance_power: f64,
    pub entropy_weight: f64,
    pub entropy_term: EntropyTerm,
    pub dropout_rates: Vec<f64>,
    pub epochs_gaussian: usize,
    pub epochs_rac: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub folds: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub manifest: PathBuf,
    pub readout_leak: ReadoutLeak,
    pub standardize_target: bool,
    pub forwards: usize,
    pub toy_train_points: usize,
    pub toy_noise_std: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::bench()
    }
}

impl ExperimentConfig {
    /// Benchmark protocol defaults.
    pub fn bench() -> Self {
        ExperimentConfig {
            dataset: "all".into(),
            heads: vec![HeadKind::Gaussian, HeadKind::Rac],
            steps: 8,
            hidden: 200,
            bins: 50,
            distance_power: 1.0,
            entropy_weight: 1.0,
            entropy_term: EntropyTerm::Bonus,
            dropout_rates: crate::eval::DROPOUT_GRID.to_vec(),
            epochs_gaussian: 600,
            epochs_rac: 200,
            batch_size: 100,
            learning_rate: 1e-3,
            folds: 0,
            validation_fraction: 0.2,
            seed: 0,
            workers: 1,
            out_dir: PathBuf::from("results"),
            manifest: PathBuf::from("data/manifest.toml"),
            readout_leak: ReadoutLeak::Learnable,
            standardize_target: true,
            forwards: 1,
            toy_train_points: 100,
            toy_noise_std: 3.0,
        }
    }

    /// Toy problem defaults.
    pub fn toy() -> Self {
        ExperimentConfig {
            dataset: "toy".into(),
            hidden: 100,
            bins: 150,
            dropout_rates: vec![0.05],
            epochs_gaussian: 3000,
            epochs_rac: 3000,
            ..Self::bench()
        }
    }

    pub fn rac_loss(&self) -> RacLoss {
        RacLoss {
            q: self.distance_power,
            tau: self.entropy_weight,
            entropy: self.entropy_term,
        }
    }

    pub fn train_settings(&self, head: HeadKind) -> TrainSettings {
        TrainSettings {
            steps: self.steps,
            hidden: self.hidden,
            bins: self.bins,
            rac_loss: self.rac_loss(),
            epochs: match head {
                HeadKind::Gaussian => self.epochs_gaussian,
                HeadKind::Rac => self.epochs_rac,
            },
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            leak: self.readout_leak,
            standardize_target: self.standardize_target,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dataset.trim().is_empty() {
            return fail("dataset must not be empty".into());
        }
        if self.heads.is_empty() {
            return fail("at least one head is required".into());
        }
        if self.steps < 1 {
            return fail("steps must be at least 1".into());
        }
        if self.hidden < 1 {
            return fail("hidden must be at least 1".into());
        }
        if self.heads.contains(&HeadKind::Rac) && self.bins < 2 {
            return fail(format!("bins must be at least 2 for the rac head, got {}", self.bins));
        }
        if !(self.distance_power > 0.0 && self.distance_power.is_finite()) {
            return fail("distance_power must be positive".into());
        }
        if !(self.entropy_weight > 0.0 && self.entropy_weight.is_finite()) {
            return fail("entropy_weight must be positive".into());
        }
        if self.dropout_rates.is_empty() || self.dropout_rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return fail(format!(
                "dropout_rates must be a nonempty subset of [0, 1), got {:?}",
                self.dropout_rates
            ));
        }
        if self.epochs_gaussian < 1 || self.epochs_rac < 1 || self.batch_size < 1 {
            return fail("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive".into());
        }
        if self.folds == 1 {
            return fail("folds must be 0 (manifest default) or at least 2".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)".into());
        }
        if self.workers < 1 || self.forwards < 1 {
            return fail("workers and forwards must be at least 1".into());
        }
        if self.toy_train_points < 1 || !(self.toy_noise_std >= 0.0) {
            return fail("toy_train_points must be positive and toy_noise_std non-negative".into());
        }
        Ok(())
    }

    /// Serializes every field in a fixed order.
    pub fn emit(&self) -> String {
        let join_f = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let heads = self.heads.iter().map(|h| h.as_str()).collect::<Vec<_>>().join(",");
        let leak = match self.readout_leak {
            ReadoutLeak::Learnable => "learnable",
            ReadoutLeak::Accumulate => "accumulate",
        };
        let entropy = match self.entropy_term {
            EntropyTerm::Bonus => "bonus",
            EntropyTerm::Penalty => "penalty",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("dataset", self.dataset.clone());
        kv("heads", heads);
        kv("steps", self.steps.to_string());
        kv("hidden", self.hidden.to_string());
        kv("bins", self.bins.to_string());
        kv("distance_power", self.distance_power.to_string());
        kv("entropy_weight", self.entropy_weight.to_string());
        kv("entropy_term", entropy.into());
        kv("dropout_rates", join_f(&self.dropout_rates));
        kv("epochs_gaussian", self.epochs_gaussian.to_string());
        kv("epochs_rac", self.epochs_rac.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("folds", self.folds.to_string());
        kv("validation_fraction", self.validation_fraction.to_string());
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("manifest", self.manifest.display().to_string());
        kv("readout_leak", leak.into());
        kv("standardize_target", self.standardize_target.to_string());
        kv("forwards", self.forwards.to_string());
        kv("toy_train_points", self.toy_train_points.to_string());
        kv("toy_noise_std", self.toy_noise_std.to_string());
        s
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
        }
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = v.to_string(),
            "heads" | "head" => {
                self.heads = if v == "both" {
                    vec![HeadKind::Gaussian, HeadKind::Rac]
                } else {
                    v.split(',').map(|h| h.trim().parse()).collect::<Result<_>>()?
                }
            }
            "steps" => self.steps = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "bins" => self.bins = num(key, v)?,
            "distance_power" => self.distance_power = num(key, v)?,
            "entropy_weight" => self.entropy_weight = num(key, v)?,
            "entropy_term" => self.entropy_term = v.parse()?,
            "dropout_rates" => self.dropout_rates = v.split(',').map(|r| num(key, r.trim())).collect::<Result<_>>()?,
            "epochs_gaussian" => self.epochs_gaussian = num(key, v)?,
            "epochs_rac" => self.epochs_rac = num(key, v)?,
            "epochs" => {
                let e = num(key, v)?;
                self.epochs_gaussian = e;
                self.epochs_rac = e;
            }
            "batch_size" => self.batch_size = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "folds" => self.folds = num(key, v)?,
            "validation_fraction" => self.validation_fraction = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "workers" => self.workers = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "manifest" => self.manifest = PathBuf::from(v),
            "readout_leak" => {
                self.readout_leak = match v {
                    "learnable" => ReadoutLeak::Learnable,
                    "accumulate" => ReadoutLeak::Accumulate,
                    other => return Err(Error::Config(format!("readout_leak: unknown value '{other}'"))),
                }
            }
            "standardize_target" => self.standardize_target = num(key, v)?,
            "forwards" => self.forwards = num(key, v)?,
            "toy_train_points" => self.toy_train_points = num(key, v)?,
            "toy_noise_std" => self.toy_noise_std = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::bench();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// First 16 hex digits of the SHA-256 of [`ExperimentConfig::emit`],
    /// leaving out `out_dir` and `workers`, which do not affect results.
    pub fn hash(&self) -> String {
        let text: String = self
            .emit()
            .lines()
            .filter(|l| !l.starts_with("out_dir ") && !l.starts_with("workers "))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
