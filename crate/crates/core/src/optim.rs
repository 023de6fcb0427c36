//! Adam with bias correction, and the step learning-rate schedule.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::Param;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments per parameter tensor plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Param<T>], config: AdamConfig) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One Adam update of `params` with `grads` at learning rate `lr`.
///
/// The whole step is refused, leaving weights and moments untouched, if any
/// gradient is non-finite.
pub fn adam_step<T: Real>(params: &mut [Param<T>], grads: &[Tensor<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::ShapeMismatch { op: "adam_step", left: p.value.shape(), right: g.shape() });
        }
        if g.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - libm::pow(c.beta1, t as f64);
    let bias2 = 1.0 - libm::pow(c.beta2, t as f64);
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
    let (inv_bias1, inv_bias2) = (T::from_f64(1.0 / bias1), T::from_f64(1.0 / bias2));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(c.epsilon));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let w = p.value.data_mut();
        for (((w, &g), m), v) in w.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m * inv_bias1;
            let v_hat = *v * inv_bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { lr0: 1e-4, decay_factor: 0.2, decay_every: 7 }
    }
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { lr0: lr, decay_factor: 1.0, decay_every: usize::MAX }
    }

    /// Learning rate of the 1-indexed `epoch`: `lr0 · factor^⌊(epoch−1)/every⌋`.
    pub fn lr(&self, epoch: usize) -> f64 {
        let k = epoch.saturating_sub(1) / self.decay_every.max(1);
        // Dividing by the exact reciprocal (5 for 0.2) keeps the familiar
        // decimal values, e.g. 1e-4 → 2e-5 → 4e-6, exact in binary.
        self.lr0 / libm::pow(1.0 / self.decay_factor, k as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use alloc::string::String;
    use alloc::vec;

    fn one_param(w: f32) -> Vec<Param<f32>> {
        vec![Param { name: String::from("w"), value: Tensor::scalar(w) }]
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut p = one_param(1.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[Tensor::scalar(2.0)], &mut s, 1e-3).unwrap();
        let dw = p[0].value.item() as f64 - 1.0;
        // m̂ = 2, v̂ = 4: Δw = −lr · 2 / (2 + 1e-8).
        assert!((dw - (-1e-3 * 2.0 / (2.0 + 1e-8))).abs() < 1e-7, "{dw}");
        let mut p64 = vec![Param { name: String::from("w"), value: Tensor::<f64>::scalar(1.0) }];
        let mut s64 = AdamState::new(&p64, AdamConfig::default());
        adam_step(&mut p64, &[Tensor::scalar(2.0)], &mut s64, 1e-3).unwrap();
        assert!((p64[0].value.item() - 1.0 - (-9.99999995e-4)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut p = one_param(0.25);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut s, 1e-3).unwrap();
        assert_eq!(p[0].value.item(), 0.25);
    }

    #[test]
    fn non_finite_gradient_names_weight_and_aborts() {
        let mut p = one_param(0.25);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let err = adam_step(&mut p, &[Tensor::scalar(f32::NAN)], &mut s, 1e-3).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient(String::from("w")));
        assert_eq!(s.step, 0);
        assert_eq!(p[0].value.item(), 0.25);
        let bad = Tensor::zeros(Shape::new(&[2]).unwrap());
        assert!(adam_step(&mut p, &[bad], &mut s, 1e-3).is_err());
    }

    #[test]
    fn schedule_breakpoints() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(1), 1e-4);
        assert_eq!(s.lr(7), 1e-4);
        assert_eq!(s.lr(8), 2e-5);
        assert_eq!(s.lr(14), 2e-5);
        assert_eq!(s.lr(15), 4e-6);
        assert!(s.lr(22) < s.lr(21));
        assert_eq!(LrSchedule::constant(1e-4).lr(500), 1e-4);
    }
}
