use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

/// Width parameter of the arctan surrogate.
pub const SURROGATE_ALPHA: f64 = 2.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Smooth spike function whose derivative is the arctan surrogate.
pub fn surrogate_spike(x: f64) -> f64 {
    (PI * SURROGATE_ALPHA * x / 2.0).atan() / PI + 0.5
}

/// `α / (2 (1 + (π α x / 2)²))`.
pub fn surrogate_grad(x: f64) -> f64 {
    let z = PI * SURROGATE_ALPHA * x / 2.0;
    SURROGATE_ALPHA / (2.0 * (1.0 + z * z))
}

/// How the hidden layer turns membrane potential into spikes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SpikeMode {
    /// Heaviside step; backward uses the surrogate derivative.
    #[default]
    Exact,
    /// Forward uses the smooth surrogate itself so the whole network is
    /// differentiable and finite-difference checkable.
    Surrogate,
}

/// Result of one PLIF update.
#[derive(Clone, Debug)]
pub struct PlifStep {
    /// Charged potential before reset.
    pub charged: Matrix,
    pub spikes: Matrix,
}

/// Parametric LIF neurons sharing one learnable time constant.
///
/// `τ = 1 / sigmoid(tau_param)`, so `τ ≥ 1` always.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlifLayer {
    pub tau_param: f64,
    pub threshold: f64,
}

impl Default for PlifLayer {
    fn default() -> Self {
        // tau_param = 0 gives τ = 2
        PlifLayer {
            tau_param: 0.0,
            threshold: 1.0,
        }
    }
}

impl PlifLayer {
    pub fn inv_tau(&self) -> f64 {
        sigmoid(self.tau_param)
    }

    pub fn tau(&self) -> f64 {
        1.0 / self.inv_tau()
    }

    /// Charges, fires and hard-resets `potential` in place.
    pub fn step(&self, potential: &mut Matrix, current: &Matrix, mode: SpikeMode) -> Result<PlifStep> {
        if !potential.same_shape(current) {
            return Err(Error::Dimension {
                op: "plif_step",
                lhs: potential.shape(),
                rhs: current.shape(),
            });
        }
        let k = self.inv_tau();
        let (rows, cols) = current.shape();
        let mut charged = Matrix::zeros(rows, cols);
        let mut spikes = Matrix::zeros(rows, cols);
        let v = potential.as_mut_slice();
        let h = charged.as_mut_slice();
        let s = spikes.as_mut_slice();
        for (i, &cur) in current.as_slice().iter().enumerate() {
            let hi = v[i] + k * (cur - v[i]);
            if !hi.is_finite() {
                return Err(Error::Numeric("non-finite membrane potential".into()));
            }
            let si = match mode {
                SpikeMode::Exact => {
                    if hi >= self.threshold {
                        1.0
                    } else {
                        0.0
                    }
                }
                SpikeMode::Surrogate => surrogate_spike(hi - self.threshold),
            };
            h[i] = hi;
            s[i] = si;
            v[i] = hi * (1.0 - si);
        }
        Ok(PlifStep { charged, spikes })
    }
}

/// How the readout integrator leaks between steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReadoutLeak {
    /// `κ = sigmoid(leak_param)`, trained.
    #[default]
    Learnable,
    /// `κ = 1`: pure accumulation.
    Accumulate,
}

/// Non-spiking integrator; its potentials are the network outputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReadoutLayer {
    pub leak_param: f64,
    pub leak: ReadoutLeak,
}

impl Default for ReadoutLayer {
    fn default() -> Self {
        ReadoutLayer {
            leak_param: 0.0,
            leak: ReadoutLeak::Learnable,
        }
    }
}

impl ReadoutLayer {
    pub fn kappa(&self) -> f64 {
        match self.leak {
            ReadoutLeak::Learnable => sigmoid(self.leak_param),
            ReadoutLeak::Accumulate => 1.0,
        }
    }

    /// `d κ / d leak_param`.
    pub fn kappa_grad(&self) -> f64 {
        match self.leak {
            ReadoutLeak::Learnable => {
                let k = self.kappa();
                k * (1.0 - k)
            }
            ReadoutLeak::Accumulate => 0.0,
        }
    }

    /// `U ← κ U + drive`, where `drive` is the affine image of the incoming spikes.
    pub fn step(&self, potential: &mut Matrix, drive: &Matrix) -> Result<()> {
        if !potential.same_shape(drive) {
            return Err(Error::Dimension {
                op: "readout_step",
                lhs: potential.shape(),
                rhs: drive.shape(),
            });
        }
        let k = self.kappa();
        for (u, d) in potential.as_mut_slice().iter_mut().zip(drive.as_slice()) {
            *u = k * *u + d;
        }
        Ok(())
    }
}

/// Per-step inverted-dropout masks for the hidden spikes.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutPlan {
    pub rate: f64,
    pub masks: Vec<Matrix>,
}

impl DropoutPlan {
    /// All-ones masks.
    pub fn disabled(steps: usize, batch: usize, hidden: usize) -> Self {
        DropoutPlan {
            rate: 0.0,
            masks: vec![Matrix::filled(batch, hidden, 1.0); steps],
        }
    }

    /// Fresh Bernoulli mask for every step, values in `{0, 1/(1-rate)}`.
    pub fn sample(rate: f64, steps: usize, batch: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(Self::disabled(steps, batch, hidden));
        }
        let keep = 1.0 / (1.0 - rate);
        let masks = (0..steps)
            .map(|_| {
                let data = (0..batch * hidden)
                    .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
                    .collect();
                Matrix::from_vec(batch, hidden, data).expect("sized by construction")
            })
            .collect();
        Ok(DropoutPlan { rate, masks })
    }

    pub fn steps(&self) -> usize {
        self.masks.len()
    }
}
