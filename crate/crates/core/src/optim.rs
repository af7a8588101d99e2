//! Adam with bias correction plus the triangular cyclic learning-rate
//! schedule. Accumulator math runs elementwise in f64 regardless of the
//! parameter precision, so trajectories don't depend on summation order or
//! thread count.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Optimizer hyperparameters. The learning-rate bounds ride along so a
/// checkpoint can restore the schedule it was trained with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_min: f64,
    pub lr_max: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, lr_min: 0.0005, lr_max: 0.003 }
    }
}

/// First/second-moment accumulators keyed by parameter name, created lazily
/// with the parameter's shape on first update.
#[derive(Clone, Debug)]
pub struct OptimState<S: Scalar = f32> {
    pub hyper: AdamHyper,
    pub step: u64,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(hyper: AdamHyper) -> Self {
        Self { hyper, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor<S>, &Tensor<S>)> {
        self.m.iter().map(|(name, m)| (name.as_str(), m, &self.v[name]))
    }

    /// Reinstall accumulators saved in a checkpoint.
    pub fn restore_moments(
        &mut self,
        name: &str,
        m: Tensor<S>,
        v: Tensor<S>,
    ) -> Result<()> {
        if m.shape() != v.shape() {
            return Err(Error::shape(format!(
                "moment shapes for {name} disagree: {:?} vs {:?}",
                m.shape(),
                v.shape()
            )));
        }
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
        Ok(())
    }
}

/// Triangular schedule: linear climb from `lr_min` to `lr_max` over
/// `half_cycle` iterations, linear descent back, repeating forever. The
/// endpoints are hit exactly — phase 0 evaluates to `lr_min` and phase
/// `half_cycle` to `lr_max` with no rounding residue.
pub fn cyclic_lr(iteration: u64, lr_min: f64, lr_max: f64, half_cycle: u64) -> f64 {
    assert!(half_cycle >= 1, "half_cycle must be at least 1");
    let phase = iteration % (2 * half_cycle);
    let ascending = phase <= half_cycle;
    let offset = if ascending { phase } else { 2 * half_cycle - phase };
    let t = offset as f64 / half_cycle as f64;
    lr_min * (1.0 - t) + lr_max * t
}

/// One bias-corrected Adam update over every parameter in the store.
/// Missing gradients count as zero (an unused parameter still decays its
/// moments but never moves while they are zero); non-finite gradients
/// abort, naming the parameter.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &BTreeMap<String, Tensor<S>>,
    state: &mut OptimState<S>,
    lr: f64,
) -> Result<()> {
    for (name, _) in grads {
        if !params.contains(name) {
            return Err(Error::config(format!("gradient for unknown parameter {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bias1 = 1.0 - h.beta1.powi(t);
    let bias2 = 1.0 - h.beta2.powi(t);

    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in &names {
        let param = params.get_mut(name)?;
        let shape = param.shape().to_vec();
        if let Some(g) = grads.get(name) {
            if g.shape() != shape.as_slice() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} for {name} does not match parameter {:?}",
                    g.shape(),
                    shape
                )));
            }
            if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient {bad} for parameter {name}"
                )));
            }
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape).expect("parameter shape is valid"));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape).expect("parameter shape is valid"));
        let zero = S::zero();
        let grad = grads.get(name);
        for i in 0..param.data().len() {
            let g = grad.map_or(zero, |g| g.data()[i]).as_f64();
            let mi = h.beta1 * m.data()[i].as_f64() + (1.0 - h.beta1) * g;
            let vi = h.beta2 * v.data()[i].as_f64() + (1.0 - h.beta2) * g * g;
            m.data_mut()[i] = S::from_f64(mi);
            v.data_mut()[i] = S::from_f64(vi);
            let update = lr * (mi / bias1) / ((vi / bias2).sqrt() + h.eps);
            let p = param.data()[i].as_f64() - update;
            param.data_mut()[i] = S::from_f64(p);
        }
    }
    Ok(())
}
