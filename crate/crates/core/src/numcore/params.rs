use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Named parameters with gradient accumulators and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    slots: Vec<ParamSlot>,
    step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            slots: Vec::new(),
            step: 0,
        }
    }

    /// Registers a parameter and returns its slot index.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let (r, c) = value.shape();
        self.slots.push(ParamSlot {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        });
        self.slots.len() - 1
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, idx: usize) -> &ParamSlot {
        &self.slots[idx]
    }

    pub fn value(&self, idx: usize) -> &Matrix {
        &self.slots[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.slots[idx].value
    }

    pub fn grad(&self, idx: usize) -> &Matrix {
        &self.slots[idx].grad
    }

    pub fn grad_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.slots[idx].grad
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// One bias-corrected Adam update; gradients are zeroed afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(bad) = self.slots.iter().find(|s| !s.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient of '{}'", bad.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for s in &mut self.slots {
            let g = s.grad.as_slice();
            let m = s.m.as_mut_slice();
            let v = s.v.as_mut_slice();
            let p = s.value.as_mut_slice();
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            s.grad.fill(0.0);
        }
        Ok(())
    }
}

/// Central finite-difference gradient of `loss` for every scalar parameter.
///
/// Returns one matrix per slot, shaped like the parameter.
pub fn finite_diff_grad<F>(mut loss: F, store: &ParamStore, h: f64) -> Result<Vec<Matrix>>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for idx in 0..store.len() {
        let (r, c) = store.value(idx).shape();
        let mut g = Matrix::zeros(r, c);
        for k in 0..r * c {
            let orig = store.value(idx).as_slice()[k];
            probe.value_mut(idx).as_mut_slice()[k] = orig + h;
            let up = loss(&probe);
            probe.value_mut(idx).as_mut_slice()[k] = orig - h;
            let down = loss(&probe);
            probe.value_mut(idx).as_mut_slice()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing '{}'[{k}]",
                    store.slot(idx).name
                )));
            }
            g.as_mut_slice()[k] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Uniform initialization on `±sqrt(1/fan_in)`, shaped `fan_in × fan_out`.
pub fn init_dense(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches by construction")
}

/// Bias row initialized from the same family as the weights.
pub fn init_bias(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (1.0 / fan_in as f64).sqrt();
    let data = (0..fan_out).map(|_| rng.uniform(-bound, bound)).collect();
    Matrix::from_vec(1, fan_out, data).expect("length matches by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Matrix::filled(1, 1, theta));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.3);
        s.add("w", Matrix::filled(2, 3, -1.5));
        let before = s.clone();
        s.adam_step(&AdamConfig::default()).unwrap();
        for (a, b) in s.slots().iter().zip(before.slots()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let mut s = scalar_store(1.0);
        s.grad_mut(0).as_mut_slice()[0] = 1.0;
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        s.adam_step(&cfg).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.value(0).as_slice()[0] - expected).abs() < 1e-15);
        assert_eq!(s.grad(0).as_slice()[0], 0.0);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = scalar_store(2.0);
        let mut b = scalar_store(2.0);
        for g in [0.5, -1.0, 3.0] {
            a.grad_mut(0).as_mut_slice()[0] = g;
            b.grad_mut(0).as_mut_slice()[0] = g;
            a.adam_step(&AdamConfig::default()).unwrap();
            b.adam_step(&AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_slot() {
        let mut s = scalar_store(0.0);
        s.add("readout.bias", Matrix::zeros(1, 2));
        s.grad_mut(1).as_mut_slice()[1] = f64::NAN;
        let err = s.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("readout.bias"));
    }

    #[test]
    fn finite_diff_square() {
        let s = scalar_store(3.0);
        let g = finite_diff_grad(|p| p.value(0).as_slice()[0].powi(2), &s, 1e-4).unwrap();
        assert!((g[0].as_slice()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_and_sine() {
        let s = scalar_store(0.0);
        let g = finite_diff_grad(|_| 4.2, &s, 1e-4).unwrap();
        assert_eq!(g[0].as_slice()[0], 0.0);
        let g = finite_diff_grad(|p| p.value(0).as_slice()[0].sin(), &s, 1e-4).unwrap();
        assert!((g[0].as_slice()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_cubic_is_second_order() {
        // error of the central difference on x^3 is exactly h^2
        let h = 1e-3;
        for &x in &[-2.0, 0.5, 1.7] {
            let s = scalar_store(x);
            let g = finite_diff_grad(
                |p| {
                    let t = p.value(0).as_slice()[0];
                    2.0 * t * t * t - t * t + 4.0 * t - 1.0
                },
                &s,
                h,
            )
            .unwrap();
            let analytic = 6.0 * x * x - 2.0 * x + 4.0;
            assert!((g[0].as_slice()[0] - analytic).abs() <= 2.0 * h * h * 1.0001 + 1e-9);
        }
    }

    #[test]
    fn finite_diff_rejects_non_finite_loss() {
        let s = scalar_store(0.0);
        assert!(finite_diff_grad(|_| f64::INFINITY, &s, 1e-4).is_err());
    }

    #[test]
    fn init_bounds_and_reproducibility() {
        let m = init_dense(&mut Rng::new(3), 1, 500);
        assert!(m.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        let a = init_dense(&mut Rng::new(9), 4, 6);
        let b = init_dense(&mut Rng::new(9), 4, 6);
        assert_eq!(a, b);
        let wide = init_dense(&mut Rng::new(9), 16, 64);
        assert!(wide.max_abs() <= 0.25);
    }

    #[test]
    fn init_mean_is_zero_within_three_sigma() {
        // U(-1,1) has variance 1/3; std error of the mean over n draws is sqrt(1/(3n)).
        let n = 100_000;
        let m = init_dense(&mut Rng::new(2024), 1, n);
        let mean = m.sum() / n as f64;
        let se = (1.0 / (3.0 * n as f64)).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }
}
