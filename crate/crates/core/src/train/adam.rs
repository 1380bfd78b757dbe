//! Adam optimizer with bias correction.
//!
//! State is kept in parameter-registry order and updated sequentially, so
//! a step is bitwise deterministic for a given gradient set. Gradients
//! are consumed by the step: every parameter must carry one, and all
//! gradients are cleared afterwards so stale values can never leak into
//! the next iteration.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::ParamRegistry;

/// First-moment decay rate.
pub const BETA1: f64 = 0.9;
/// Second-moment decay rate.
pub const BETA2: f64 = 0.999;
/// Denominator fuzz keeping updates finite at zero curvature.
pub const EPS: f64 = 1e-8;

struct Slot<E: Element> {
    name: String,
    m: Vec<E>,
    v: Vec<E>,
}

/// Moment estimates for every registered parameter, plus the step count.
pub struct AdamState<E: Element> {
    slots: Vec<Slot<E>>,
    t: u64,
}

impl<E: Element> AdamState<E> {
    /// Fresh zeroed state matching `registry`'s parameters in order.
    pub fn new(registry: &ParamRegistry<E>) -> AdamState<E> {
        let slots = registry
            .entries()
            .iter()
            .map(|(name, tensor)| Slot {
                name: name.clone(),
                m: vec![E::zero(); tensor.numel()],
                v: vec![E::zero(); tensor.numel()],
            })
            .collect();
        AdamState { slots, t: 0 }
    }

    /// Completed optimizer steps.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn set_t(&mut self, t: u64) {
        self.t = t;
    }

    /// Moment vectors for one parameter, in (m, v) order.
    pub fn moments(&self, name: &str) -> Option<(&[E], &[E])> {
        self.slots
            .iter()
            .find(|s| s.name == name)
            .map(|s| (s.m.as_slice(), s.v.as_slice()))
    }

    /// Parameter names in state order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    /// Overwrites one parameter's moment vectors (used when resuming).
    pub fn restore(&mut self, name: &str, m: Vec<E>, v: Vec<E>) -> Result<()> {
        let slot = self
            .slots
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::contract(format!("no optimizer slot named '{name}'")))?;
        if m.len() != slot.m.len() || v.len() != slot.v.len() {
            return Err(Error::contract(format!(
                "optimizer slot '{name}' holds {} elements, got m={} v={}",
                slot.m.len(),
                m.len(),
                v.len()
            )));
        }
        slot.m = m;
        slot.v = v;
        Ok(())
    }

    /// Applies one Adam update at learning rate `lr` using the gradients
    /// currently stored on the registry's parameters, then clears them.
    ///
    /// A parameter without a gradient is a caller bug (the backward pass
    /// should have delivered zeros even to unused leaves) and is reported
    /// by name.
    pub fn step(&mut self, registry: &ParamRegistry<E>, lr: f64) -> Result<()> {
        if registry.len() != self.slots.len() {
            return Err(Error::contract(format!(
                "optimizer state holds {} slots but registry has {} parameters",
                self.slots.len(),
                registry.len()
            )));
        }
        self.t += 1;
        let t = self.t;

        let b1 = E::from_f64(BETA1);
        let b2 = E::from_f64(BETA2);
        let k1 = E::from_f64(1.0 - BETA1);
        let k2 = E::from_f64(1.0 - BETA2);
        let c1 = E::from_f64(1.0 / (1.0 - BETA1.powi(t.min(1 << 30) as i32)));
        let c2 = E::from_f64(1.0 / (1.0 - BETA2.powi(t.min(1 << 30) as i32)));
        let lr_e = E::from_f64(lr);
        let eps = E::from_f64(EPS);

        for (slot, (name, param)) in self.slots.iter_mut().zip(registry.entries()) {
            if slot.name != *name {
                return Err(Error::contract(format!(
                    "optimizer state expects parameter '{}' but registry has '{}'",
                    slot.name, name
                )));
            }
            let grad = param.grad().ok_or_else(|| {
                Error::contract(format!("parameter '{name}' has no gradient to apply"))
            })?;
            param.map_data_mut(|p| {
                for i in 0..p.len() {
                    let g = grad[i];
                    slot.m[i] = b1 * slot.m[i] + k1 * g;
                    slot.v[i] = b2 * slot.v[i] + k2 * g * g;
                    let mhat = slot.m[i] * c1;
                    let vhat = slot.v[i] * c2;
                    p[i] = p[i] - lr_e * mhat / (vhat.sqrt() + eps);
                }
            });
        }
        registry.zero_all_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape::Shape;
    use crate::tensor::Tensor;

    fn single_param_registry(values: Vec<f64>) -> ParamRegistry<f64> {
        let mut registry = ParamRegistry::new();
        let n = values.len();
        let t = Tensor::from_data(Shape::new(1, 1, 1, n), values).unwrap();
        registry.register("w".into(), t).unwrap();
        registry
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // With zeroed moments the bias-corrected update collapses to
        // g / (|g| + eps), i.e. very nearly the sign of the gradient.
        let registry = single_param_registry(vec![0.0, 0.0]);
        let mut adam = AdamState::new(&registry);
        let w = registry.get("w").unwrap().clone();
        w.accumulate_grad(&[0.3, -0.7]);
        adam.step(&registry, 0.01).unwrap();
        let got = w.to_vec();
        assert!((got[0] + 0.01).abs() < 1e-7, "got {got:?}");
        assert!((got[1] - 0.01).abs() < 1e-7, "got {got:?}");
        assert_eq!(adam.t(), 1);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimize w^2: gradient 2w, start at 1, lr 0.1.
        let registry = single_param_registry(vec![1.0]);
        let mut adam = AdamState::new(&registry);
        let w = registry.get("w").unwrap().clone();
        for _ in 0..200 {
            let cur = w.to_vec()[0];
            w.accumulate_grad(&[2.0 * cur]);
            adam.step(&registry, 0.1).unwrap();
        }
        let final_w = w.to_vec()[0].abs();
        assert!(final_w < 1e-3, "did not converge: |w| = {final_w}");
    }

    #[test]
    fn missing_gradient_is_reported_by_name() {
        let registry = single_param_registry(vec![0.0]);
        let mut adam = AdamState::new(&registry);
        let err = adam.step(&registry, 0.01).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(err.to_string().contains("'w'"));
    }

    #[test]
    fn gradients_are_cleared_after_step() {
        let registry = single_param_registry(vec![0.5]);
        let mut adam = AdamState::new(&registry);
        let w = registry.get("w").unwrap().clone();
        w.accumulate_grad(&[1.0]);
        adam.step(&registry, 0.01).unwrap();
        assert!(w.grad().is_none());
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let registry = single_param_registry(vec![0.25, -0.5, 1.5]);
            let mut adam = AdamState::new(&registry);
            let w = registry.get("w").unwrap().clone();
            for k in 0..50 {
                let cur = w.to_vec();
                let g: Vec<f64> = cur.iter().map(|&x| 2.0 * x + (k as f64).sin()).collect();
                w.accumulate_grad(&g);
                adam.step(&registry, 0.02).unwrap();
            }
            w.to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn restore_checks_names_and_lengths() {
        let registry = single_param_registry(vec![0.0, 0.0]);
        let mut adam = AdamState::new(&registry);
        assert!(adam.restore("w", vec![0.1, 0.2], vec![0.3, 0.4]).is_ok());
        assert!(adam.restore("nope", vec![], vec![]).is_err());
        assert!(adam.restore("w", vec![0.1], vec![0.3, 0.4]).is_err());
        let (m, _) = adam.moments("w").unwrap();
        assert_eq!(m, [0.1, 0.2]);
    }
}
