//! Output heads: heteroscedastic Gaussian and regression-as-classification.
//!
//! Both turn the per-step readout potentials of one forward pass into a
//! predictive density, and both provide a per-step training loss whose
//! gradient is handed back to the network.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Lower bound added to every predicted variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Density floor applied before taking the log in [`rac_nll`].
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Gaussian,
    Rac,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Gaussian => "gaussian",
            HeadKind::Rac => "rac",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(HeadKind::Gaussian),
            "rac" => Ok(HeadKind::Rac),
            other => Err(Error::Config(format!("unknown head '{other}' (expected gaussian|rac)"))),
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    crate::snn::sigmoid(x)
}

// ---------------------------------------------------------------------------
// Gaussian head

/// One step's mean and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianStepOutput {
    pub mean: f64,
    pub var: f64,
}

impl GaussianStepOutput {
    /// Maps the two raw readout potentials to `(μ, softplus(raw) + floor)`.
    pub fn from_raw(mean_raw: f64, var_raw: f64) -> Self {
        GaussianStepOutput {
            mean: mean_raw,
            var: softplus(var_raw) + VARIANCE_FLOOR,
        }
    }
}

/// `½ log(2πσ²) + (y − μ)² / (2σ²)`.
pub fn gaussian_nll(y: f64, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::Domain(format!("variance must be positive, got {var}")));
    }
    let r = y - mean;
    Ok(0.5 * (2.0 * PI * var).ln() + r * r / (2.0 * var))
}

/// `(∂NLL/∂μ, ∂NLL/∂σ²)`.
pub fn gaussian_nll_grad(y: f64, mean: f64, var: f64) -> (f64, f64) {
    let r = y - mean;
    (-r / var, 0.5 / var - r * r / (2.0 * var * var))
}

/// Mixture moments over time steps: mean of means, and mean of second
/// moments minus the squared mean.
pub fn aggregate_gaussian(per_step: &[GaussianStepOutput]) -> Result<PredictiveDistribution> {
    if per_step.is_empty() {
        return Err(Error::Domain("no time steps to aggregate".into()));
    }
    let t = per_step.len() as f64;
    let mean = per_step.iter().map(|s| s.mean).sum::<f64>() / t;
    let mean_var = per_step.iter().map(|s| s.var).sum::<f64>() / t;
    // mean σ² + spread of μ; algebraically equal to E[σ²+μ²] − μ*² but
    // without the cancellation
    let spread = per_step.iter().map(|s| (s.mean - mean).powi(2)).sum::<f64>() / t;
    Ok(PredictiveDistribution::Gaussian {
        mean,
        var: mean_var + spread,
    })
}

/// Batch-mean Gaussian NLL for one step and its gradient w.r.t. the raw
/// readout potentials (`outputs` is `batch × 2`).
pub fn gaussian_step_loss(outputs: &Matrix, targets: &[f64]) -> Result<(f64, Matrix)> {
    if outputs.cols() != 2 || outputs.rows() != targets.len() {
        return Err(Error::Dimension {
            op: "gaussian_step_loss",
            lhs: outputs.shape(),
            rhs: (targets.len(), 2),
        });
    }
    let n = targets.len() as f64;
    let mut grad = Matrix::zeros(outputs.rows(), 2);
    let mut loss = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let raw = outputs.row(i);
        let step = GaussianStepOutput::from_raw(raw[0], raw[1]);
        loss += gaussian_nll(y, step.mean, step.var)?;
        let (d_mean, d_var) = gaussian_nll_grad(y, step.mean, step.var);
        let g = grad.row_mut(i);
        g[0] = d_mean / n;
        g[1] = d_var * logistic(raw[1]) / n;
    }
    Ok((loss / n, grad))
}

// ---------------------------------------------------------------------------
// Regression as classification

/// `K` equal-width bins over `[y_min, y_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    k: usize,
    y_min: f64,
    y_max: f64,
}

impl BinSpec {
    pub fn new(k: usize, y_min: f64, y_max: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 bins, got {k}")));
        }
        if !(y_max > y_min) || !y_min.is_finite() || !y_max.is_finite() {
            return Err(Error::Data(format!("degenerate target range [{y_min}, {y_max}]")));
        }
        Ok(BinSpec { k, y_min, y_max })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        (self.y_max - self.y_min) / self.k as f64
    }

    /// `b_1 .. b_{K+1}`, with the end points pinned to the range.
    pub fn boundaries(&self) -> Vec<f64> {
        let w = self.width();
        (0..=self.k)
            .map(|i| match i {
                0 => self.y_min,
                i if i == self.k => self.y_max,
                i => self.y_min + w * i as f64,
            })
            .collect()
    }

    /// `m_k = (b_k + b_{k+1}) / 2`.
    pub fn midpoints(&self) -> Vec<f64> {
        self.boundaries().windows(2).map(|b| (b[0] + b[1]) / 2.0).collect()
    }

    /// Bin containing `y`; boundary points go to the lower bin and values
    /// outside the range clamp to the end bins.
    pub fn containing_bin(&self, y: f64) -> usize {
        if y <= self.y_min {
            return 0;
        }
        let b = self.boundaries();
        // first k with y <= b_{k+1}
        b[1..].iter().position(|&upper| y <= upper).unwrap_or(self.k - 1)
    }
}

pub fn make_bins(y_train: &[f64], k: usize) -> Result<BinSpec> {
    let y_min = y_train.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y_train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if y_train.len() < 2 || y_min == y_max {
        return Err(Error::Data("targets need at least two distinct values".into()));
    }
    BinSpec::new(k, y_min, y_max)
}

/// Index of the nearest midpoint, smallest index on ties.
pub fn discretize(y: f64, bins: &BinSpec) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, m) in bins.midpoints().iter().enumerate() {
        let d = (y - m).abs();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Row-wise softmax of each step's logits.
pub fn softmax_probs(per_step_logits: &[Matrix]) -> Vec<Matrix> {
    per_step_logits
        .iter()
        .map(|m| {
            let mut out = Matrix::zeros(m.rows(), m.cols());
            for r in 0..m.rows() {
                out.row_mut(r).copy_from_slice(&softmax(m.row(r)));
            }
            out
        })
        .collect()
}

/// Arithmetic mean of per-step probability vectors.
pub fn average_probs(per_step: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_step
        .first()
        .ok_or_else(|| Error::Domain("no time steps to average".into()))?;
    let mut out = vec![0.0; first.len()];
    for p in per_step {
        if p.len() != out.len() {
            return Err(Error::Dimension {
                op: "average_probs",
                lhs: (1, out.len()),
                rhs: (1, p.len()),
            });
        }
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let t = per_step.len() as f64;
    out.iter_mut().for_each(|o| *o /= t);
    Ok(out)
}

/// Piecewise-uniform density: bin `k` carries probability `p_k` spread
/// evenly over its width.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseUniform {
    pub bins: BinSpec,
    pub probs: Vec<f64>,
}

impl PiecewiseUniform {
    /// `f_k = p_k / (b_{k+1} − b_k)`.
    pub fn densities(&self) -> Vec<f64> {
        let w = self.bins.width();
        self.probs.iter().map(|p| p / w).collect()
    }

    pub fn density_at(&self, y: f64) -> f64 {
        self.probs[self.bins.containing_bin(y)] / self.bins.width()
    }

    /// `Σ p_k m_k`.
    pub fn expectation(&self) -> f64 {
        self.probs.iter().zip(self.bins.midpoints()).map(|(p, m)| p * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let w = self.bins.width();
        let mean = self.expectation();
        let second: f64 = self
            .probs
            .iter()
            .zip(self.bins.midpoints())
            .map(|(p, m)| p * (m * m + w * w / 12.0))
            .sum();
        (second - mean * mean).max(0.0)
    }

    /// Inverse CDF, clamped to `[y_min, y_max]`.
    pub fn quantile(&self, level: f64) -> f64 {
        let b = self.bins.boundaries();
        let mut acc = 0.0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > 0.0 && acc + p >= level {
                let frac = ((level - acc) / p).clamp(0.0, 1.0);
                return b[k] + frac * (b[k + 1] - b[k]);
            }
            acc += p;
        }
        self.bins.y_max()
    }
}

pub fn rac_density(probs: &[f64], bins: &BinSpec) -> Result<PiecewiseUniform> {
    if probs.len() != bins.k() {
        return Err(Error::Dimension {
            op: "rac_density",
            lhs: (1, probs.len()),
            rhs: (1, bins.k()),
        });
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "probabilities must be non-negative and sum to 1 (sum {total})"
        )));
    }
    Ok(PiecewiseUniform {
        bins: bins.clone(),
        probs: probs.to_vec(),
    })
}

pub fn rac_expectation(probs: &[f64], bins: &BinSpec) -> f64 {
    probs.iter().zip(bins.midpoints()).map(|(p, m)| p * m).sum()
}

/// `−log max(f_{k(y)}, 1e-12)`.
pub fn rac_nll(y: f64, dist: &PiecewiseUniform) -> f64 {
    -dist.density_at(y).max(DENSITY_FLOOR).ln()
}

/// `−Σ p log p` with `0 log 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `Σ_k |k − j|^q p_k + τ H(p)`.
pub fn distance_loss(probs: &[f64], true_bin: usize, q: f64, tau: f64) -> f64 {
    distance_penalty(probs, true_bin, q) + tau * entropy(probs)
}

fn distance_penalty(probs: &[f64], true_bin: usize, q: f64) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 - true_bin as f64).abs().powf(q) * p)
        .sum()
}

/// `∂(distance_loss)/∂p_k = |k − j|^q − τ (log p_k + 1)`.
pub fn distance_loss_grad(probs: &[f64], true_bin: usize, q: f64, tau: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, p)| (k as f64 - true_bin as f64).abs().powf(q) - tau * (p.ln() + 1.0))
        .collect()
}

/// Sign with which the entropy term enters the RAC training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyTerm {
    /// `L_dis + τH`: the literal distance loss, sharpening predictions.
    Penalty,
    /// `L_dis − τH`: rewards spread, giving a Gibbs-shaped optimum.
    #[default]
    Bonus,
}

impl EntropyTerm {
    pub fn sign(self) -> f64 {
        match self {
            EntropyTerm::Penalty => 1.0,
            EntropyTerm::Bonus => -1.0,
        }
    }
}

impl std::str::FromStr for EntropyTerm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "penalty" => Ok(EntropyTerm::Penalty),
            "bonus" => Ok(EntropyTerm::Bonus),
            other => Err(Error::Config(format!(
                "unknown entropy term '{other}' (expected penalty|bonus)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RacLoss {
    pub q: f64,
    pub tau: f64,
    pub entropy: EntropyTerm,
}

impl Default for RacLoss {
    fn default() -> Self {
        RacLoss {
            q: 1.0,
            tau: 1.0,
            entropy: EntropyTerm::default(),
        }
    }
}

impl RacLoss {
    /// Objective for one probability vector.
    pub fn value(&self, probs: &[f64], true_bin: usize) -> f64 {
        distance_penalty(probs, true_bin, self.q) + self.entropy.sign() * self.tau * entropy(probs)
    }

    /// Objective and its gradient w.r.t. the logits, computed through
    /// `log_softmax` so empty bins never produce `0 · ∞`.
    pub fn with_logit_grad(&self, logits: &[f64], true_bin: usize) -> (f64, Vec<f64>) {
        let log_p = log_softmax(logits);
        let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let s = self.entropy.sign() * self.tau;
        // ∂L/∂p_k
        let dl_dp: Vec<f64> = log_p
            .iter()
            .enumerate()
            .map(|(k, lp)| (k as f64 - true_bin as f64).abs().powf(self.q) - s * (lp + 1.0))
            .collect();
        let mean: f64 = p.iter().zip(&dl_dp).map(|(a, b)| a * b).sum();
        let grad = p.iter().zip(&dl_dp).map(|(pk, g)| pk * (g - mean)).collect();
        let ent: f64 = -p.iter().zip(&log_p).map(|(a, b)| a * b).sum::<f64>();
        let loss = distance_penalty(&p, true_bin, self.q) + s * ent;
        (loss, grad)
    }

    /// Batch-mean objective for one step and its gradient w.r.t. the logits.
    pub fn step_loss(&self, logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
        if logits.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "rac step loss",
                lhs: logits.shape(),
                rhs: (labels.len(), logits.cols()),
            });
        }
        let n = labels.len() as f64;
        let mut grad = Matrix::zeros(logits.rows(), logits.cols());
        let mut loss = 0.0;
        for (i, &j) in labels.iter().enumerate() {
            let (l, g) = self.with_logit_grad(logits.row(i), j);
            loss += l;
            for (o, v) in grad.row_mut(i).iter_mut().zip(g) {
                *o = v / n;
            }
        }
        Ok((loss / n, grad))
    }
}

/// `(1/T) Σ_t l(t)`.
pub fn aot_loss(per_step: &[f64]) -> Result<f64> {
    if per_step.is_empty() {
        return Err(Error::Domain("no time steps".into()));
    }
    Ok(per_step.iter().sum::<f64>() / per_step.len() as f64)
}

// ---------------------------------------------------------------------------

/// Predictive density for one input.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictiveDistribution {
    Gaussian { mean: f64, var: f64 },
    PiecewiseUniform(PiecewiseUniform),
}

impl PredictiveDistribution {
    /// Point prediction: `μ*` or the bin expectation.
    pub fn mean(&self) -> f64 {
        match self {
            PredictiveDistribution::Gaussian { mean, .. } => *mean,
            PredictiveDistribution::PiecewiseUniform(d) => d.expectation(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            PredictiveDistribution::Gaussian { var, .. } => *var,
            PredictiveDistribution::PiecewiseUniform(d) => d.variance(),
        }
    }

    pub fn nll(&self, y: f64) -> f64 {
        match self {
            PredictiveDistribution::Gaussian { mean, var } => {
                gaussian_nll(y, *mean, *var).expect("aggregated variance is positive")
            }
            PredictiveDistribution::PiecewiseUniform(d) => rac_nll(y, d),
        }
    }

    /// Plotting band: `μ* ± 2σ*` for the Gaussian head, the central 95%
    /// interval for the piecewise-uniform head.
    pub fn band(&self) -> (f64, f64) {
        match self {
            PredictiveDistribution::Gaussian { mean, var } => {
                let s = var.sqrt();
                (mean - 2.0 * s, mean + 2.0 * s)
            }
            PredictiveDistribution::PiecewiseUniform(d) => (d.quantile(0.025), d.quantile(0.975)),
        }
    }

    /// Affine change of units `y ↦ scale·y + shift` (only meaningful for the
    /// Gaussian head, whose network works in standardized units).
    pub fn rescaled(&self, shift: f64, scale: f64) -> PredictiveDistribution {
        match self {
            PredictiveDistribution::Gaussian { mean, var } => PredictiveDistribution::Gaussian {
                mean: mean * scale + shift,
                var: var * scale * scale,
            },
            other => other.clone(),
        }
    }
}
