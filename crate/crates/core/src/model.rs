//! A trainable regressor: spiking network plus one uncertainty head.

use crate::data::{nll_rescale, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::heads::{
    aggregate_gaussian, average_probs, discretize, gaussian_step_loss, make_bins, rac_density, softmax, BinSpec,
    GaussianStepOutput, HeadKind, PredictiveDistribution, RacLoss,
};
use crate::numcore::{AdamConfig, Matrix, Rng};
use crate::snn::{DropoutPlan, NetShape, Network, ReadoutLeak};

/// Rows per inference chunk.
const PREDICT_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub hidden: usize,
    pub bins: usize,
    pub rac_loss: RacLoss,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub leak: ReadoutLeak,
    /// Train the Gaussian head on a standardized target.
    pub standardize_target: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 8,
            hidden: 200,
            bins: 50,
            rac_loss: RacLoss::default(),
            epochs: 600,
            batch_size: 100,
            adam: AdamConfig::default(),
            leak: ReadoutLeak::Learnable,
            standardize_target: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum HeadState {
    Gaussian,
    Rac(BinSpec),
}

/// Test-set metrics in original target units.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub nll: f64,
}

#[derive(Clone, Debug)]
pub struct Regressor {
    net: Network,
    head: HeadState,
    scaler: Standardizer,
    dropout_rate: f64,
    steps: usize,
}

pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Dimension {
            op: "rmse",
            lhs: (predictions.len(), 1),
            rhs: (targets.len(), 1),
        });
    }
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / targets.len() as f64;
    Ok(mse.sqrt())
}

impl Regressor {
    pub fn fit(
        train: &Dataset,
        head: HeadKind,
        dropout_rate: f64,
        settings: &TrainSettings,
        rng: &Rng,
    ) -> Result<Regressor> {
        Self::fit_monitored(train, head, dropout_rate, settings, rng, |_, _| Ok(()))
    }

    /// Like [`Regressor::fit`], calling `monitor(epoch, &model)` after every epoch.
    pub fn fit_monitored<F>(
        train: &Dataset,
        head: HeadKind,
        dropout_rate: f64,
        settings: &TrainSettings,
        rng: &Rng,
        mut monitor: F,
    ) -> Result<Regressor>
    where
        F: FnMut(usize, &Regressor) -> Result<()>,
    {
        if settings.steps == 0 || settings.epochs == 0 || settings.batch_size == 0 || settings.hidden == 0 {
            return Err(Error::Config(
                "steps, epochs, batch size and hidden width must be positive".into(),
            ));
        }
        let fitted = Standardizer::fit(train)?;
        let (scaler, head_state, outputs) = match head {
            HeadKind::Gaussian => {
                let mut s = fitted;
                if !settings.standardize_target {
                    s.y_mean = 0.0;
                    s.y_std = 1.0;
                }
                (s, HeadState::Gaussian, 2)
            }
            HeadKind::Rac => {
                let bins = make_bins(&train.y, settings.bins)?;
                let mut s = fitted;
                s.y_mean = 0.0;
                s.y_std = 1.0;
                (s, HeadState::Rac(bins), settings.bins)
            }
        };
        let shape = NetShape {
            inputs: train.num_features(),
            hidden: settings.hidden,
            outputs,
        };
        let mut model = Regressor {
            net: Network::new(shape, settings.leak, rng),
            head: head_state,
            scaler,
            dropout_rate,
            steps: settings.steps,
        };

        let x = model.scaler.transform_x(&train.x);
        let targets: Vec<f64> = train.y.iter().map(|&y| model.scaler.transform_y(y)).collect();
        let labels: Vec<usize> = match &model.head {
            HeadState::Rac(bins) => train.y.iter().map(|&y| discretize(y, bins)).collect(),
            HeadState::Gaussian => Vec::new(),
        };

        let n = train.len();
        let batch = settings.batch_size.min(n);
        let mut dropout_rng = rng.substream("dropout");
        for epoch in 0..settings.epochs {
            let order = rng.indexed("shuffle", epoch as u64).permutation(n);
            for chunk in order.chunks(batch) {
                let xb = x.select_rows(chunk);
                let plan = DropoutPlan::sample(
                    dropout_rate,
                    settings.steps,
                    chunk.len(),
                    settings.hidden,
                    &mut dropout_rng,
                )?;
                let trace = model.net.forward(&xb, &plan)?;
                let scale = 1.0 / settings.steps as f64;
                let mut grads = Vec::with_capacity(settings.steps);
                for out in trace.outputs() {
                    let (_, mut g) = match &model.head {
                        HeadState::Gaussian => {
                            let yb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
                            gaussian_step_loss(out, &yb)?
                        }
                        HeadState::Rac(_) => {
                            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                            settings.rac_loss.step_loss(out, &lb)?
                        }
                    };
                    g.scale(scale);
                    grads.push(g);
                }
                model.net.backward(&trace, &grads)?;
                model.net.params_mut().adam_step(&settings.adam)?;
            }
            monitor(epoch, &model)?;
        }
        Ok(model)
    }

    pub fn head(&self) -> HeadKind {
        match self.head {
            HeadState::Gaussian => HeadKind::Gaussian,
            HeadState::Rac(_) => HeadKind::Rac,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn bins(&self) -> Option<&BinSpec> {
        match &self.head {
            HeadState::Rac(b) => Some(b),
            HeadState::Gaussian => None,
        }
    }

    pub fn scaler(&self) -> &Standardizer {
        &self.scaler
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// Per-row predictive distributions in the head's working units
    /// (standardized for the Gaussian head), with dropout active. Each
    /// of the `forwards` passes contributes all its time steps.
    fn predict_working(&self, x: &Matrix, forwards: usize, rng: &Rng) -> Result<Vec<PredictiveDistribution>> {
        let forwards = forwards.max(1);
        let xs = self.scaler.transform_x(x);
        let mut dropout_rng = rng.substream("predict-dropout");
        let hidden = self.net.shape().hidden;
        let mut out = Vec::with_capacity(x.rows());
        let rows: Vec<usize> = (0..x.rows()).collect();
        for chunk in rows.chunks(PREDICT_CHUNK) {
            let xb = xs.select_rows(chunk);
            let mut step_outputs: Vec<Matrix> = Vec::with_capacity(self.steps * forwards);
            for _ in 0..forwards {
                let plan = DropoutPlan::sample(self.dropout_rate, self.steps, chunk.len(), hidden, &mut dropout_rng)?;
                let trace = self.net.forward(&xb, &plan)?;
                step_outputs.extend(trace.outputs().cloned());
            }
            for r in 0..chunk.len() {
                let dist = match &self.head {
                    HeadState::Gaussian => {
                        let per_step: Vec<GaussianStepOutput> = step_outputs
                            .iter()
                            .map(|o| GaussianStepOutput::from_raw(o.get(r, 0), o.get(r, 1)))
                            .collect();
                        aggregate_gaussian(&per_step)?
                    }
                    HeadState::Rac(bins) => {
                        let per_step: Vec<Vec<f64>> = step_outputs.iter().map(|o| softmax(o.row(r))).collect();
                        let mut probs = average_probs(&per_step)?;
                        let total: f64 = probs.iter().sum();
                        probs.iter_mut().for_each(|p| *p /= total);
                        PredictiveDistribution::PiecewiseUniform(rac_density(&probs, bins)?)
                    }
                };
                out.push(dist);
            }
        }
        Ok(out)
    }

    /// Predictive distributions in original target units.
    pub fn predict(&self, x: &Matrix, forwards: usize, rng: &Rng) -> Result<Vec<PredictiveDistribution>> {
        let (shift, scale) = (self.scaler.y_mean, self.scaler.y_std);
        Ok(self
            .predict_working(x, forwards, rng)?
            .into_iter()
            .map(|d| d.rescaled(shift, scale))
            .collect())
    }

    /// RMSE and mean NLL in original units.
    ///
    /// The Gaussian NLL is computed in standardized units and moved back
    /// with the change-of-variables term.
    pub fn evaluate(&self, data: &Dataset, forwards: usize, rng: &Rng) -> Result<Metrics> {
        let working = self.predict_working(&data.x, forwards, rng)?;
        let mut preds = Vec::with_capacity(working.len());
        let mut nll = 0.0;
        for (d, &y) in working.iter().zip(&data.y) {
            preds.push(self.scaler.inverse_y(d.mean()));
            nll += d.nll(self.scaler.transform_y(y));
        }
        let nll = nll_rescale(nll / data.len() as f64, self.scaler.y_std);
        if !nll.is_finite() {
            return Err(Error::Numeric("non-finite evaluation NLL".into()));
        }
        Ok(Metrics {
            rmse: rmse(&preds, &data.y)?,
            nll,
        })
    }
}
