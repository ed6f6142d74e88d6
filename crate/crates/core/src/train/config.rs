//! Run configuration: typed defaults, flat `key = value` files and overrides.
//!
//! Keys are dotted paths into the JSON form of [`TrainConfig`], for example
//! `optim.lr` or `model.encoder.embed_dim`. A key that does not already exist
//! in the defaults is rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::tensor::AdamWConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialConfig {
    /// GRL strength.
    pub lambda: f64,
    /// `constant` or `ramp`.
    pub lambda_schedule: String,
    pub keep_ratio: f64,
    pub encoder_steps: u64,
    pub generator_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// `ce` or `mse`.
    pub loss: String,
    /// Pseudo-label confidence threshold; 0 keeps every label.
    pub tau: f64,
    /// `adversarial` (frozen generator) or `ones` (no masking, for debugging).
    pub masks: String,
    /// Also minimize the supervised source loss during stage 2.
    pub supervised: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub n_per_class: usize,
    pub gamma: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub test_fraction: f64,
    pub imbalance: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// When false, `wall_ms` is logged as 0 so metric lines compare bit-exactly.
    pub wall_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// `source-only`, `stage1` or `stage2`.
    pub stage: String,
    pub seed: u64,
    pub steps: u64,
    /// Clips per domain per step.
    pub batch_size: usize,
    pub threads: usize,
    pub optim: AdamWConfig,
    pub adversarial: AdversarialConfig,
    pub consistency: ConsistencyConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub metrics: MetricsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let ds = DatasetSpec::default();
        Self {
            stage: "stage1".into(),
            seed: 0,
            steps: 2000,
            batch_size: 8,
            threads: 1,
            optim: AdamWConfig::default(),
            adversarial: AdversarialConfig {
                lambda: 1.0,
                lambda_schedule: "constant".into(),
                keep_ratio: crate::models::DEFAULT_KEEP_RATIO,
                encoder_steps: 100,
                generator_steps: 20,
            },
            consistency: ConsistencyConfig {
                loss: "ce".into(),
                tau: 0.0,
                masks: "adversarial".into(),
                supervised: false,
            },
            model: ModelConfig::default(),
            data: DataConfig {
                source: None,
                target: None,
                init_checkpoint: None,
                n_per_class: ds.n_per_class,
                gamma: 0.8,
                frames: ds.frames,
                height: ds.height,
                width: ds.width,
                test_fraction: ds.test_fraction,
                imbalance: ds.imbalance,
                seed: ds.seed,
            },
            metrics: MetricsConfig { wall_time: true },
        }
    }
}

impl TrainConfig {
    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let slot = key
            .split('.')
            .try_fold(&mut tree, |node, part| node.as_object_mut().and_then(|o| o.get_mut(part)))
            .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        *slot = coerce(key, slot, value.trim())?;
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` pairs in order.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Parses a flat config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply([line])
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every settable key, in file order.
    pub fn keys() -> Vec<String> {
        fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
            match v {
                Value::Object(map) => {
                    for (k, child) in map {
                        let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&p, child, out);
                    }
                }
                _ => out.push(prefix.to_string()),
            }
        }
        let mut out = Vec::new();
        walk("", &serde_json::to_value(Self::default()).expect("config serializes"), &mut out);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("steps", self.steps as f64)?;
        pos("batch_size", self.batch_size as f64)?;
        pos("threads", self.threads as f64)?;
        pos("optim.lr", self.optim.lr)?;
        pos("optim.eps", self.optim.eps)?;
        pos("adversarial.encoder_steps", self.adversarial.encoder_steps as f64)?;
        pos("adversarial.generator_steps", self.adversarial.generator_steps as f64)?;
        for (name, b) in [("optim.beta1", self.optim.beta1), ("optim.beta2", self.optim.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.optim.weight_decay < 0.0 || self.adversarial.lambda < 0.0 {
            return Err(Error::Config("weight decay and lambda must be non-negative".into()));
        }
        let rho = self.adversarial.keep_ratio;
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!("adversarial.keep_ratio {rho} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.consistency.tau) {
            return Err(Error::Config(format!("consistency.tau {} outside [0, 1]", self.consistency.tau)));
        }
        Ok(())
    }

    /// Clip geometry for `gen-data`, taken from the `data.*` keys.
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            frames: self.data.frames,
            height: self.data.height,
            width: self.data.width,
            n_per_class: self.data.n_per_class,
            test_fraction: self.data.test_fraction,
            seed: self.data.seed,
            imbalance: self.data.imbalance,
        }
    }
}

fn coerce(key: &str, current: &Value, raw: &str) -> Result<Value> {
    let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got {raw:?}"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad("true or false"))?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad("a non-negative integer"))?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad("a number"))?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(|| bad("a finite number"))?
        }
        Value::String(_) => Value::String(raw.to_string()),
        Value::Null => {
            if raw.is_empty() || raw == "none" {
                Value::Null
            } else {
                Value::String(raw.to_string())
            }
        }
        _ => return Err(Error::Config(format!("{key} is a section, not a value"))),
    })
}
