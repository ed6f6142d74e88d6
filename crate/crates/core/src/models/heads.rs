use rand::Rng;

use super::layers::Linear;
use super::params::{Bound, ParamSet};
use crate::error::Result;
use crate::tensor::{Real, Var};

/// Probabilities leaving the domain head stay inside `[EPS, 1 - EPS]`.
pub const DOMAIN_EPS: f64 = 1e-7;

/// Logit bound equivalent to clamping the probability at [`DOMAIN_EPS`].
pub fn domain_logit_bound() -> f64 {
    ((1.0 - DOMAIN_EPS) / DOMAIN_EPS).ln()
}

/// Affine map from features to `classes` logits.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    fc: Linear,
    classes: usize,
}

impl ClassifierHead {
    pub fn new<T: Real, R: Rng>(params: &mut ParamSet<T>, rng: &mut R, dim: usize, classes: usize) -> Self {
        Self {
            fc: Linear::new(params, rng, "fc", dim, classes),
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        self.fc.forward(p, features)
    }
}

/// Two-layer MLP emitting a single source-vs-target logit per feature row.
#[derive(Clone, Debug)]
pub struct DomainHead {
    fc1: Linear,
    fc2: Linear,
}

impl DomainHead {
    pub fn new<T: Real, R: Rng>(params: &mut ParamSet<T>, rng: &mut R, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(params, rng, "fc1", dim, hidden),
            fc2: Linear::new(params, rng, "fc2", hidden, 1),
        }
    }

    /// `[b, 1]` logits of "source".
    pub fn logits<'t, T: Real>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.fc1.forward(p, features)?.relu();
        self.fc2.forward(p, h)
    }

    /// Probability of "source", clamped strictly inside (0, 1).
    pub fn probability<'t, T: Real>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self
            .logits(p, features)?
            .sigmoid()
            .clamp(T::lit(DOMAIN_EPS), T::lit(1.0 - DOMAIN_EPS)))
    }
}
