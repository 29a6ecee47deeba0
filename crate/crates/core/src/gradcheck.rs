//! Finite-difference check of the full training gradient for both heads.
//!
//! A three-neuron network runs three steps in surrogate-forward mode with a
//! frozen dropout plan, so the loss is a smooth deterministic function of
//! the parameters.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heads::{aot_loss, discretize, gaussian_step_loss, make_bins, HeadKind, RacLoss};
use crate::numcore::{finite_diff_grad, Matrix, Rng};
use crate::snn::{DropoutPlan, NetForwardTrace, NetShape, Network, ReadoutLeak, SpikeMode, INPUT_WEIGHT};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
const STEP: f64 = 1e-6;
const REL_FLOOR: f64 = 1e-3;
const HIDDEN: usize = 3;
const STEPS: usize = 3;
const BATCH: usize = 4;
const INPUTS: usize = 2;
const RAC_BINS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotCheck {
    pub head: HeadKind,
    pub slot: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub slots: Vec<SlotCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.slots.iter().all(|s| s.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &SlotCheck> {
        self.slots.iter().filter(|s| s.max_rel_error > self.tolerance)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("head,slot,max_rel_error,status\n");
        for c in &self.slots {
            let status = if c.max_rel_error <= self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            s.push_str(&format!("{},{},{:.3e},{status}\n", c.head, c.slot, c.max_rel_error));
        }
        s
    }
}

struct Problem {
    head: HeadKind,
    x: Matrix,
    y: Vec<f64>,
    labels: Vec<usize>,
    plan: DropoutPlan,
    rac: RacLoss,
}

impl Problem {
    fn loss_and_grads(&self, trace: &NetForwardTrace) -> Result<(f64, Vec<Matrix>)> {
        let scale = 1.0 / trace.steps.len() as f64;
        let mut losses = Vec::with_capacity(trace.steps.len());
        let mut grads = Vec::with_capacity(trace.steps.len());
        for out in trace.outputs() {
            let (l, mut g) = match self.head {
                HeadKind::Gaussian => gaussian_step_loss(out, &self.y)?,
                HeadKind::Rac => self.rac.step_loss(out, &self.labels)?,
            };
            g.scale(scale);
            losses.push(l);
            grads.push(g);
        }
        Ok((aot_loss(&losses)?, grads))
    }
}

/// Compares analytic and central-difference gradients for every parameter
/// slot. `corrupt` names a slot whose analytic gradient is perturbed before
/// comparison, which must make that slot fail.
pub fn run_gradcheck(seed: u64, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let mut slots = Vec::new();
    for head in [HeadKind::Gaussian, HeadKind::Rac] {
        slots.extend(check_head(head, seed, corrupt)?);
    }
    if let Some(name) = corrupt {
        if !slots.iter().any(|s| s.slot == name) {
            return Err(Error::Config(format!("no parameter slot named '{name}'")));
        }
    }
    Ok(GradCheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        slots,
    })
}

fn check_head(head: HeadKind, seed: u64, corrupt: Option<&str>) -> Result<Vec<SlotCheck>> {
    let rng = Rng::new(seed).substream(head.as_str());
    let outputs = match head {
        HeadKind::Gaussian => 2,
        HeadKind::Rac => RAC_BINS,
    };
    let mut net = Network::new(
        NetShape {
            inputs: INPUTS,
            hidden: HIDDEN,
            outputs,
        },
        ReadoutLeak::Learnable,
        &rng,
    );
    net.set_spike_mode(SpikeMode::Surrogate);
    // Larger input weights keep hidden potentials near threshold.
    let w_in = net.params().index_of(INPUT_WEIGHT).expect("input weight slot");
    net.params_mut().value_mut(w_in).scale(4.0);

    let mut data_rng = rng.substream("data");
    let x = Matrix::from_vec(
        BATCH,
        INPUTS,
        (0..BATCH * INPUTS).map(|_| data_rng.normal(0.0, 1.0)).collect(),
    )?;
    let y: Vec<f64> = (0..BATCH).map(|_| data_rng.normal(0.0, 1.0)).collect();
    let bins = make_bins(&y, RAC_BINS)?;
    let labels = y.iter().map(|&v| discretize(v, &bins)).collect();
    let plan = DropoutPlan::sample(0.3, STEPS, BATCH, HIDDEN, &mut rng.substream("dropout"))?;
    let problem = Problem {
        head,
        x,
        y,
        labels,
        plan,
        rac: RacLoss::default(),
    };

    let trace = net.forward(&problem.x, &problem.plan)?;
    let (_, grads) = problem.loss_and_grads(&trace)?;
    net.params_mut().zero_grad();
    net.backward(&trace, &grads)?;

    if let Some(name) = corrupt {
        if let Some(idx) = net.params().index_of(name) {
            let g = net.params_mut().grad_mut(idx);
            let bump = 1e-2 * (1.0 + g.max_abs());
            g.as_mut_slice()[0] += bump;
        }
    }

    let template = net.clone();
    let numeric = finite_diff_grad(
        |p| {
            let mut probe = template.clone();
            *probe.params_mut() = p.clone();
            probe
                .forward(&problem.x, &problem.plan)
                .and_then(|t| problem.loss_and_grads(&t))
                .map_or(f64::NAN, |(l, _)| l)
        },
        net.params(),
        STEP,
    )?;

    Ok(numeric
        .iter()
        .enumerate()
        .map(|(idx, num)| {
            let ana = net.params().grad(idx);
            let max_rel_error = ana
                .as_slice()
                .iter()
                .zip(num.as_slice())
                .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
                .fold(0.0, f64::max);
            SlotCheck {
                head,
                slot: net.params().slot(idx).name.clone(),
                max_rel_error,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_gradients_pass() {
        let report = run_gradcheck(0, None).unwrap();
        assert_eq!(report.slots.len(), 12);
        assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn corruption_is_caught_and_named() {
        let report = run_gradcheck(0, Some("readout.leak_param")).unwrap();
        assert!(!report.passed());
        assert!(report.failures().all(|f| f.slot == "readout.leak_param"));
        assert_eq!(report.failures().count(), 2);
        assert!(run_gradcheck(0, Some("no.such.slot")).is_err());
    }
}
