use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::Result;

/// `p <- p - lr * g` for every parameter.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, lr: f64) {
    let lr = T::from_f64(lr);
    let grads = params.grads().to_vec();
    for (p, g) in params.tensors_mut().iter_mut().zip(&grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
}

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, state: &mut AdamState<T>, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
    let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(state.eps));
    let grads = params.grads().to_vec();
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, pv) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1t * m[j] + ob1 * g[j];
            v[j] = b2t * v[j] + ob2 * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *pv -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Which update rule a training loop applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// An update rule bound to its state.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T> {
    Sgd,
    Adam(AdamState<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &ParamSet<T>) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, lr: f64) {
        match self {
            Optimizer::Sgd => sgd_step(params, lr),
            Optimizer::Adam(s) => adam_step(params, s, lr),
        }
    }

    /// Applies `grads` (computed elsewhere, e.g. at adapted parameters) to `params`.
    pub fn apply(&mut self, params: &mut ParamSet<T>, grads: Vec<Tensor<T>>, lr: f64) -> Result<()> {
        params.set_grads(grads)?;
        self.step(params, lr);
        Ok(())
    }

    pub fn adam_state(&self) -> Option<&AdamState<T>> {
        match self {
            Optimizer::Adam(s) => Some(s),
            Optimizer::Sgd => None,
        }
    }
}
