use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// Moment accumulators for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

/// Decoupled-weight-decay Adam.
pub struct AdamW;

impl AdamW {
    pub fn init<T: Real>(config: AdamWConfig, params: &[Tensor<T>]) -> OptimizerState<T> {
        OptimizerState {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One update. A missing gradient counts as zero (decay still applies).
    pub fn step<T: Real>(
        state: &mut OptimizerState<T>,
        params: &mut [Tensor<T>],
        grads: &[Option<Tensor<T>>],
    ) -> Result<()> {
        if params.len() != state.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "adamw: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != state.m[i].shape() {
                return Err(Error::shape("adamw", p.shape(), state.m[i].shape()));
            }
            if let Some(g) = &grads[i] {
                if g.shape() != p.shape() {
                    return Err(Error::shape("adamw grad", g.shape(), p.shape()));
                }
            }
        }
        state.step += 1;
        let c = state.config;
        let t = state.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let decay = T::one() - T::lit(c.lr * c.weight_decay);
        for (i, p) in params.iter_mut().enumerate() {
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            let g = grads[i].as_ref().map(|g| g.data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                *w *= decay;
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
