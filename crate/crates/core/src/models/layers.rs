//! Parameterized building blocks shared by the four networks.

use rand::Rng;

use super::params::{trunc_normal, Bound, ParamId, ParamSet};
use crate::error::Result;
use crate::tensor::{Real, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        Self {
            w: params.add(format!("{name}.w"), trunc_normal(rng, &[fan_in, fan_out], INIT_STD)),
            b: params.add(format!("{name}.b"), Tensor::zeros(&[fan_out])),
        }
    }

    /// Applies to the last axis of `x`.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(p.get(self.w))?.add(p.get(self.b))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(p.get(self.gamma), p.get(self.beta), T::lit(LN_EPS))
    }
}

/// 3×3 "same" convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub pad: usize,
}

impl Conv {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Self {
        Self {
            w: params.add(format!("{name}.w"), trunc_normal(rng, &[c_out, c_in, k, k], INIT_STD)),
            b: params.add(format!("{name}.b"), Tensor::zeros(&[c_out])),
            pad: k / 2,
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(p.get(self.w), Some(p.get(self.b)), 1, self.pad)
    }
}
