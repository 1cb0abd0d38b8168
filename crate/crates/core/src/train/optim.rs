//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates, one pair per parameter, shaped like the parameter's data.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Float> OptimState<T> {
    pub fn new<U: Float>(store: &ParamStore<U>, config: AdamWConfig) -> Self {
        let zeros = || store.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        OptimState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    fn check_layout<U: Float>(&self, store: &ParamStore<U>) -> Result<()> {
        let ok = self.m.len() == store.len()
            && self.v.len() == store.len()
            && store
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| m.len() == p.value.numel() && v.len() == p.value.numel());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("optimizer state does not match parameter layout".into()))
        }
    }
}

/// One AdamW update at rate `lr`:
/// `p ← p − lr·(m̂/(√v̂ + eps) + wd·p)` with bias-corrected moments.
///
/// Every parameter must carry a gradient; nothing is modified otherwise.
pub fn adamw_step<T: Float>(store: &mut ParamStore<T>, state: &mut OptimState<T>, lr: f64) -> Result<()> {
    state.check_layout(store)?;
    if let Some(p) = store.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient(p.name.clone()));
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.as_deref().expect("checked above");
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = m.as_f64() / bias1;
            let v_hat = v.as_f64() / bias2;
            let wv = w.as_f64();
            *w = T::of(wv - lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * wv));
        }
    }
    Ok(())
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))`.
pub fn cosine_anneal_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs total > 0".into()));
    }
    if step > total {
        return Err(Error::InvalidArgument(format!("step {step} beyond schedule length {total}")));
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * step as f64 / total as f64).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(p: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(p));
        s.get_mut(id).grad = Some(vec![g]);
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut s = scalar_store(0.7, 0.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(&s, cfg);
        adamw_step(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.item(), 0.7);
    }

    #[test]
    fn decoupled_decay_single_step() {
        let mut s = scalar_store(1.0, 0.0);
        let mut st = OptimState::new(&s, AdamWConfig::default());
        adamw_step(&mut s, &mut st, 0.1).unwrap();
        assert!((s.iter().next().unwrap().value.item() - 0.999).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.5, 1.0);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimState::new(&s, cfg);
        adamw_step(&mut s, &mut st, 1e-3).unwrap();
        let p = s.iter().next().unwrap().value.item();
        assert!((0.5 - p - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut s = scalar_store(1.0, 0.0);
        s.add("q", Tensor::scalar(2.0));
        let mut st = OptimState::new(&s, AdamWConfig::default());
        assert!(matches!(adamw_step(&mut s, &mut st, 0.1), Err(Error::MissingGradient(n)) if n == "q"));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_anneal_lr(0, 100, 2e-4, 1e-6).unwrap(), 2e-4);
        assert_eq!(cosine_anneal_lr(100, 100, 2e-4, 1e-6).unwrap(), 1e-6);
        assert!((cosine_anneal_lr(50, 100, 2e-4, 1e-6).unwrap() - (2e-4 + 1e-6) / 2.0).abs() < 1e-18);
        assert!(cosine_anneal_lr(0, 0, 1.0, 0.0).is_err());
    }
}
