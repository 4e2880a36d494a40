use std::collections::BTreeMap;

use crate::autodiff::Gradients;
use crate::error::{dim_err, Error, Result};
use crate::net::{BoundParams, ParamStore};
use crate::tensor::RealTensor;

/// Gradients keyed by parameter name.
pub type NamedGrads = BTreeMap<String, RealTensor>;

/// Looks up the gradient of every bound parameter.
pub fn named_gradients(bound: &BoundParams, grads: &Gradients) -> Result<NamedGrads> {
    bound.iter().map(|(name, v)| Ok((name.to_string(), grads.get(v)?.clone()))).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (RealTensor, RealTensor)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// First and second moments of one parameter, if it has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&RealTensor, &RealTensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }
}

/// One bias-corrected Adam update of every parameter in `params`.
pub fn adam_step(state: &mut AdamState, params: &mut ParamStore, grads: &NamedGrads, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Contract(format!("learning rate must be > 0, got {lr}")));
    }
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for parameter '{name}'")))?;
        if g.shape() != p.shape() {
            return Err(dim_err!("gradient {:?} for parameter '{}' of shape {:?}", g.shape(), name, p.shape()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let g = &grads[&name];
        let p = params.get_mut(&name)?;
        let (m, v) = state
            .moments
            .entry(name)
            .or_insert_with(|| (RealTensor::zeros(p.shape()), RealTensor::zeros(p.shape())));
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    Ok(())
}
