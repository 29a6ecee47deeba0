use crate::error::{Error, Result};
use crate::numcore::{init_bias, init_dense, Matrix, ParamStore, Rng};

use super::layers::{surrogate_grad, DropoutPlan, PlifLayer, ReadoutLayer, ReadoutLeak, SpikeMode};

pub const INPUT_WEIGHT: &str = "hidden.weight";
pub const INPUT_BIAS: &str = "hidden.bias";
pub const TAU_PARAM: &str = "hidden.tau_param";
pub const READOUT_WEIGHT: &str = "readout.weight";
pub const READOUT_BIAS: &str = "readout.bias";
pub const LEAK_PARAM: &str = "readout.leak_param";

const W_IN: usize = 0;
const B_IN: usize = 1;
const TAU: usize = 2;
const W_OUT: usize = 3;
const B_OUT: usize = 4;
const LEAK: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

/// Everything recorded at one simulation step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// Hidden potential entering the step.
    pub potential_before: Matrix,
    /// Charged potential before reset.
    pub charged: Matrix,
    /// Hidden potential after reset.
    pub potential_after: Matrix,
    pub spikes: Matrix,
    /// Spikes after the dropout mask, i.e. what the readout sees.
    pub dropped: Matrix,
    /// Readout potential entering the step.
    pub readout_before: Matrix,
    /// Readout potential after the step: the step's output.
    pub output: Matrix,
}

/// Full forward record; enough to run exact BPTT.
#[derive(Clone, Debug)]
pub struct NetForwardTrace {
    pub input: Matrix,
    pub current: Matrix,
    pub dropout: DropoutPlan,
    pub steps: Vec<StepRecord>,
}

impl NetForwardTrace {
    pub fn outputs(&self) -> impl Iterator<Item = &Matrix> {
        self.steps.iter().map(|s| &s.output)
    }

    pub fn batch(&self) -> usize {
        self.input.rows()
    }
}

/// input → affine → PLIF → per-step dropout → affine → readout integrator.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    shape: NetShape,
    params: ParamStore,
    threshold: f64,
    leak: ReadoutLeak,
    spike_mode: SpikeMode,
}

impl Network {
    pub fn new(shape: NetShape, leak: ReadoutLeak, rng: &Rng) -> Self {
        let mut w = rng.substream("weights");
        let mut params = ParamStore::new();
        params.add(INPUT_WEIGHT, init_dense(&mut w, shape.inputs, shape.hidden));
        params.add(INPUT_BIAS, init_bias(&mut w, shape.inputs, shape.hidden));
        params.add(TAU_PARAM, Matrix::zeros(1, 1));
        params.add(READOUT_WEIGHT, init_dense(&mut w, shape.hidden, shape.outputs));
        params.add(READOUT_BIAS, init_bias(&mut w, shape.hidden, shape.outputs));
        params.add(LEAK_PARAM, Matrix::zeros(1, 1));
        Network {
            shape,
            params,
            threshold: 1.0,
            leak,
            spike_mode: SpikeMode::Exact,
        }
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_params(shape: NetShape, params: ParamStore, threshold: f64, leak: ReadoutLeak) -> Result<Self> {
        let expected = [
            (INPUT_WEIGHT, (shape.inputs, shape.hidden)),
            (INPUT_BIAS, (1, shape.hidden)),
            (TAU_PARAM, (1, 1)),
            (READOUT_WEIGHT, (shape.hidden, shape.outputs)),
            (READOUT_BIAS, (1, shape.outputs)),
            (LEAK_PARAM, (1, 1)),
        ];
        if params.len() != expected.len() {
            return Err(Error::Structure(format!(
                "expected {} parameter slots, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (i, (name, dims)) in expected.iter().enumerate() {
            let slot = params.slot(i);
            if slot.name != *name || slot.value.shape() != *dims {
                return Err(Error::Structure(format!(
                    "slot {i}: expected {name} {dims:?}, found {} {:?}",
                    slot.name,
                    slot.value.shape()
                )));
            }
        }
        Ok(Network {
            shape,
            params,
            threshold,
            leak,
            spike_mode: SpikeMode::Exact,
        })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn leak(&self) -> ReadoutLeak {
        self.leak
    }

    pub fn spike_mode(&self) -> SpikeMode {
        self.spike_mode
    }

    pub fn set_spike_mode(&mut self, mode: SpikeMode) {
        self.spike_mode = mode;
    }

    pub fn plif(&self) -> PlifLayer {
        PlifLayer {
            tau_param: self.params.value(TAU).as_slice()[0],
            threshold: self.threshold,
        }
    }

    pub fn readout(&self) -> ReadoutLayer {
        ReadoutLayer {
            leak_param: self.params.value(LEAK).as_slice()[0],
            leak: self.leak,
        }
    }

    /// Samples per-step dropout masks from `rng` and runs [`Network::forward`].
    pub fn forward_sampled(&self, x: &Matrix, steps: usize, rate: f64, rng: &mut Rng) -> Result<NetForwardTrace> {
        let plan = DropoutPlan::sample(rate, steps, x.rows(), self.shape.hidden, rng)?;
        self.forward(x, &plan)
    }

    /// Simulates `dropout.steps()` steps from rest, with `x` injected as a
    /// constant current at every step.
    pub fn forward(&self, x: &Matrix, dropout: &DropoutPlan) -> Result<NetForwardTrace> {
        let steps = dropout.steps();
        if steps == 0 {
            return Err(Error::Domain("at least one time step is required".into()));
        }
        if x.cols() != self.shape.inputs {
            return Err(Error::Dimension {
                op: "forward",
                lhs: x.shape(),
                rhs: (x.rows(), self.shape.inputs),
            });
        }
        let batch = x.rows();
        for m in &dropout.masks {
            if m.shape() != (batch, self.shape.hidden) {
                return Err(Error::Dimension {
                    op: "forward dropout mask",
                    lhs: m.shape(),
                    rhs: (batch, self.shape.hidden),
                });
            }
        }

        let mut current = x.matmul(self.params.value(W_IN))?;
        current.add_row_broadcast(self.params.value(B_IN))?;

        let plif = self.plif();
        let readout = self.readout();
        let mut v = Matrix::zeros(batch, self.shape.hidden);
        let mut u = Matrix::zeros(batch, self.shape.outputs);
        let mut records = Vec::with_capacity(steps);
        for mask in &dropout.masks {
            let potential_before = v.clone();
            let fired = plif.step(&mut v, &current, self.spike_mode)?;
            let dropped = fired.spikes.zip_map(mask, |s, m| s * m)?;
            let mut drive = dropped.matmul(self.params.value(W_OUT))?;
            drive.add_row_broadcast(self.params.value(B_OUT))?;
            let readout_before = u.clone();
            readout.step(&mut u, &drive)?;
            if !u.is_finite() {
                return Err(Error::Numeric("non-finite readout potential".into()));
            }
            records.push(StepRecord {
                potential_before,
                charged: fired.charged,
                potential_after: v.clone(),
                spikes: fired.spikes,
                dropped,
                readout_before,
                output: u.clone(),
            });
        }
        Ok(NetForwardTrace {
            input: x.clone(),
            current,
            dropout: dropout.clone(),
            steps: records,
        })
    }

    /// Backpropagates `output_grads[t] = ∂L/∂output_t` through the unrolled
    /// simulation and accumulates into the parameter gradients.
    pub fn backward(&mut self, trace: &NetForwardTrace, output_grads: &[Matrix]) -> Result<()> {
        let steps = trace.steps.len();
        let batch = trace.batch();
        let NetShape {
            inputs,
            hidden,
            outputs,
        } = self.shape;
        if output_grads.len() != steps {
            return Err(Error::Structure(format!(
                "{} output gradients for a {steps}-step trace",
                output_grads.len()
            )));
        }
        if trace.input.cols() != inputs || trace.current.shape() != (batch, hidden) {
            return Err(Error::Structure("trace does not match network shape".into()));
        }
        for (g, rec) in output_grads.iter().zip(&trace.steps) {
            if g.shape() != (batch, outputs) || rec.output.shape() != (batch, outputs) {
                return Err(Error::Structure("output gradient shape mismatch".into()));
            }
        }

        let k = self.plif().inv_tau();
        let threshold = self.threshold;
        let readout = self.readout();
        let kappa = readout.kappa();

        let mut d_w_out = Matrix::zeros(hidden, outputs);
        let mut d_b_out = Matrix::zeros(1, outputs);
        let mut d_kappa = 0.0;
        let mut d_current = Matrix::zeros(batch, hidden);
        let mut d_k = 0.0;

        // ∂L/∂U_t and ∂L/∂V_t carried back from step t+1
        let mut g_u_next = Matrix::zeros(batch, outputs);
        let mut g_v = Matrix::zeros(batch, hidden);

        for t in (0..steps).rev() {
            let rec = &trace.steps[t];
            let mask = &trace.dropout.masks[t];

            let mut g_u = output_grads[t].clone();
            if t + 1 < steps {
                for (a, b) in g_u.as_mut_slice().iter_mut().zip(g_u_next.as_slice()) {
                    *a += kappa * b;
                }
            }

            d_w_out.add_assign(&rec.dropped.t_matmul(&g_u)?)?;
            d_b_out.add_assign(&g_u.sum_rows())?;
            d_kappa += g_u.frobenius_dot(&rec.readout_before)?;

            let g_dropped = g_u.matmul_t(self.params.value(W_OUT))?;

            let mut g_v_prev = Matrix::zeros(batch, hidden);
            {
                let gd = g_dropped.as_slice();
                let m = mask.as_slice();
                let h = rec.charged.as_slice();
                let s = rec.spikes.as_slice();
                let vp = rec.potential_before.as_slice();
                let cur = trace.current.as_slice();
                let gv = g_v.as_slice();
                let dc = d_current.as_mut_slice();
                let gvp = g_v_prev.as_mut_slice();
                for i in 0..gd.len() {
                    // V_t = H_t (1 - S_t),  D_t = S_t M_t
                    let g_s = gd[i] * m[i] - gv[i] * h[i];
                    let g_h = g_s * surrogate_grad(h[i] - threshold) + gv[i] * (1.0 - s[i]);
                    // H_t = V_{t-1} + k (I - V_{t-1})
                    dc[i] += g_h * k;
                    d_k += g_h * (cur[i] - vp[i]);
                    gvp[i] = g_h * (1.0 - k);
                }
            }
            g_v = g_v_prev;
            g_u_next = g_u;
        }

        let d_w_in = trace.input.t_matmul(&d_current)?;
        let d_b_in = d_current.sum_rows();
        let d_tau_param = d_k * k * (1.0 - k);
        let d_leak_param = d_kappa * readout.kappa_grad();

        let p = &mut self.params;
        p.grad_mut(W_IN).add_assign(&d_w_in)?;
        p.grad_mut(B_IN).add_assign(&d_b_in)?;
        p.grad_mut(TAU).as_mut_slice()[0] += d_tau_param;
        p.grad_mut(W_OUT).add_assign(&d_w_out)?;
        p.grad_mut(B_OUT).add_assign(&d_b_out)?;
        p.grad_mut(LEAK).as_mut_slice()[0] += d_leak_param;
        Ok(())
    }
}
