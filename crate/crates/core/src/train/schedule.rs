//! Phase alternation and GRL strength schedules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a single optimization step trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Source-only baseline: encoder and classifier on labelled source clips.
    Supervised,
    /// Stage 1: encoder, classifier and domain head against a frozen generator.
    Encoder,
    /// Stage 1: the mask generator alone.
    Generator,
    /// Stage 2: encoder and classifier on masked target clips.
    Consistency,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Supervised => "supervised",
            Phase::Encoder => "encoder",
            Phase::Generator => "generator",
            Phase::Consistency => "consistency",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cycles of `encoder_steps` encoder-phase steps followed by
/// `generator_steps` generator-phase steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alternation {
    pub encoder_steps: u64,
    pub generator_steps: u64,
}

impl Alternation {
    pub fn new(encoder_steps: u64, generator_steps: u64) -> Result<Self> {
        if encoder_steps == 0 || generator_steps == 0 {
            return Err(Error::Config("alternation periods must be at least one step".into()));
        }
        Ok(Self {
            encoder_steps,
            generator_steps,
        })
    }

    /// Phase of the 0-based `step`.
    pub fn phase(&self, step: u64) -> Phase {
        if step % (self.encoder_steps + self.generator_steps) < self.encoder_steps {
            Phase::Encoder
        } else {
            Phase::Generator
        }
    }
}

/// GRL strength as a function of training progress.
pub trait LambdaSchedule: Send + Sync {
    fn name(&self) -> &'static str;
    fn value(&self, step: u64, total: u64) -> f64;
}

pub struct ConstantLambda(pub f64);

impl LambdaSchedule for ConstantLambda {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn value(&self, _step: u64, _total: u64) -> f64 {
        self.0
    }
}

/// `λ · (2 / (1 + exp(-10 p)) - 1)` with `p = step / total`, rising from 0 to
/// nearly `λ`.
pub struct RampLambda(pub f64);

impl LambdaSchedule for RampLambda {
    fn name(&self) -> &'static str {
        "ramp"
    }

    fn value(&self, step: u64, total: u64) -> f64 {
        let p = step as f64 / total.max(1) as f64;
        self.0 * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
    }
}

pub fn lambda_schedule_names() -> &'static [&'static str] {
    &["constant", "ramp"]
}

pub fn lambda_schedule(name: &str, lambda: f64) -> Result<Box<dyn LambdaSchedule>> {
    match name {
        "constant" => Ok(Box::new(ConstantLambda(lambda))),
        "ramp" => Ok(Box::new(RampLambda(lambda))),
        other => Err(Error::Config(format!(
            "unknown lambda schedule {other:?}; expected one of {:?}",
            lambda_schedule_names()
        ))),
    }
}
