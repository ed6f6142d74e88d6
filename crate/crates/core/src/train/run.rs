//! The step loop and the run directory it writes.
//!
//! A run directory holds `config.json` (written before anything else),
//! `metrics.jsonl`, `checkpoint.amvc` and `run_state.json`; a diverged run
//! leaves `divergence.json` instead of a checkpoint.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{MetricRecord, MetricsWriter};
use super::schedule::{lambda_schedule, LambdaSchedule, Phase};
use super::stages::{build_stage, Stage, StepBatch, StepInfo, StepReport};
use crate::binio;
use crate::data::{BatchPlan, Dataset, Split};
use crate::error::{Error, Result};
use crate::models::{load_checkpoint, save_checkpoint, ModelBundle};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.amvc";
pub const RUN_STATE_FILE: &str = "run_state.json";
pub const DIVERGENCE_FILE: &str = "divergence.json";

/// Means of each loss over the steps that computed it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMeans {
    pub l_s: Option<f64>,
    pub l_d_masked: Option<f64>,
    pub l_c_masked: Option<f64>,
    #[serde(skip)]
    counts: [u64; 3],
}

impl RunningMeans {
    fn add(&mut self, r: &StepReport) {
        let slots = [
            (&mut self.l_s, r.l_s),
            (&mut self.l_d_masked, r.l_d_masked),
            (&mut self.l_c_masked, r.l_c_masked),
        ];
        for (i, (mean, v)) in slots.into_iter().enumerate() {
            if let Some(v) = v {
                self.counts[i] += 1;
                let m = mean.unwrap_or(0.0);
                *mean = Some(m + (v - m) / self.counts[i] as f64);
            }
        }
    }
}

/// Snapshot of the loop, written at the end of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub stage: String,
    /// Steps completed.
    pub step: u64,
    /// Phase of the last step taken.
    pub phase: Option<Phase>,
    pub means: RunningMeans,
    pub skipped_steps: u64,
    /// Batch-order seed; together with `step` it fixes the next batch.
    pub batch_seed: u64,
    pub epoch: u64,
    pub source_manifest: Option<PathBuf>,
    pub target_manifest: Option<PathBuf>,
}

/// What a diverged step was looking at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceDump {
    pub step: u64,
    pub phase: String,
    pub batch: u64,
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
    pub detail: String,
}

pub struct Trainer {
    config: TrainConfig,
    stage: Box<dyn Stage>,
    lambda: Box<dyn LambdaSchedule>,
    bundle: ModelBundle<f32>,
    source: Option<Dataset>,
    target: Option<Dataset>,
    plan: BatchPlan,
    step: u64,
    means: RunningMeans,
    skipped: u64,
    last_phase: Option<Phase>,
    divergence: Option<DivergenceDump>,
}

impl Trainer {
    /// Checks that the datasets and bundle suit the configured stage. The
    /// bundle's optimizer state is reset to `config.optim`.
    pub fn new(
        config: TrainConfig,
        mut bundle: ModelBundle<f32>,
        source: Option<Dataset>,
        target: Option<Dataset>,
    ) -> Result<Self> {
        config.validate()?;
        let stage = build_stage(&config)?;
        let lambda = lambda_schedule(&config.adversarial.lambda_schedule, config.adversarial.lambda)?;
        if let Some(pre) = stage.prerequisite() {
            if !bundle.stages.iter().any(|s| s == pre) {
                return Err(Error::Config(format!(
                    "{} needs a checkpoint that went through {pre}; this one has {:?}",
                    stage.name(),
                    bundle.stages
                )));
            }
        }
        let source = if stage.needs_source() {
            Some(source.ok_or_else(|| Error::Config(format!("{} needs source clips", stage.name())))?)
        } else {
            None
        };
        let target = if stage.needs_target() {
            Some(target.ok_or_else(|| Error::Config(format!("{} needs target clips", stage.name())))?)
        } else {
            None
        };
        let want = bundle.config().encoder.clip_shape();
        for ds in source.iter().chain(&target) {
            if ds.header.clip_shape() != want {
                return Err(Error::Config(format!(
                    "{} clips are {:?} but the encoder expects {want:?}",
                    ds.domain().as_str(),
                    ds.header.clip_shape()
                )));
            }
            if ds.header.classes != bundle.config().classes {
                return Err(Error::Config(format!(
                    "{} data has {} classes, model has {}",
                    ds.domain().as_str(),
                    ds.header.classes,
                    bundle.config().classes
                )));
            }
        }
        let len = |d: &Option<Dataset>| d.as_ref().map(Dataset::len);
        let (ns, nt) = match (len(&source), len(&target)) {
            (Some(s), Some(t)) => (s, t),
            (Some(s), None) => (s, s),
            (None, Some(t)) => (t, t),
            (None, None) => return Err(Error::Contract("stage uses no data".into())),
        };
        let plan = BatchPlan::new(ns, nt, config.batch_size, config.seed, true)?;
        bundle.reset_optimizer(config.optim);
        Ok(Self {
            config,
            stage,
            lambda,
            bundle,
            source,
            target,
            plan,
            step: 0,
            means: RunningMeans::default(),
            skipped: 0,
            last_phase: None,
            divergence: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn stage(&self) -> &dyn Stage {
        self.stage.as_ref()
    }

    pub fn bundle(&self) -> &ModelBundle<f32> {
        &self.bundle
    }

    pub fn into_bundle(self) -> ModelBundle<f32> {
        self.bundle
    }

    /// Steps taken so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn divergence(&self) -> Option<&DivergenceDump> {
        self.divergence.as_ref()
    }

    /// The batch for global step `n`.
    pub fn batch(&self, n: u64) -> Result<StepBatch> {
        let (si, ti) = self.plan.batch(n);
        let (source, labels) = match &self.source {
            Some(ds) => (Some(ds.stack(&si)?), ds.labels(&si)?),
            None => (None, Vec::new()),
        };
        let target = self.target.as_ref().map(|ds| ds.stack(&ti)).transpose()?;
        Ok(StepBatch {
            index: n,
            source,
            labels,
            target,
            source_indices: if self.source.is_some() { si } else { Vec::new() },
            target_indices: if self.target.is_some() { ti } else { Vec::new() },
        })
    }

    /// Runs one step on the scheduled batch.
    pub fn step(&mut self) -> Result<(Phase, StepReport)> {
        let batch = self.batch(self.step)?;
        self.step_on(&batch)
    }

    /// Runs one step on a caller-chosen batch.
    pub fn step_on(&mut self, batch: &StepBatch) -> Result<(Phase, StepReport)> {
        let phase = self.stage.phase(self.step);
        let info = StepInfo {
            step: self.step,
            lambda: self.lambda.value(self.step, self.config.steps),
        };
        match self.stage.step(&mut self.bundle, batch, info) {
            Ok(report) => {
                self.means.add(&report);
                self.skipped += u64::from(report.skipped);
                self.last_phase = Some(phase);
                self.step += 1;
                Ok((phase, report))
            }
            Err(Error::Diverged {
                step,
                phase,
                batch: b,
                detail,
            }) => {
                self.divergence = Some(DivergenceDump {
                    step,
                    phase: phase.clone(),
                    batch: b,
                    source_indices: batch.source_indices.clone(),
                    target_indices: batch.target_indices.clone(),
                    detail: detail.clone(),
                });
                Err(Error::Diverged {
                    step,
                    phase,
                    batch: b,
                    detail,
                })
            }
            Err(e) => Err(e),
        }
    }

    pub fn state(&self) -> RunState {
        RunState {
            stage: self.stage.name().to_string(),
            step: self.step,
            phase: self.last_phase,
            means: self.means.clone(),
            skipped_steps: self.skipped,
            batch_seed: self.config.seed,
            epoch: self.step / self.plan.batches_per_epoch() as u64,
            source_manifest: self.config.data.source.clone(),
            target_manifest: self.config.data.target.clone(),
        }
    }
}

pub fn load_split(path: &Path, split: Split) -> Result<Dataset> {
    Dataset::load(path, split)
}

/// The bundle a run starts from: the initial checkpoint when one is given,
/// otherwise a fresh initialization seeded by `config.seed`.
pub fn initial_bundle(config: &TrainConfig) -> Result<ModelBundle<f32>> {
    match &config.data.init_checkpoint {
        Some(path) => {
            let bundle = load_checkpoint::<f32>(path)?;
            if *bundle.config() != config.model {
                return Err(Error::Config(format!(
                    "checkpoint {} was built with a different model configuration",
                    path.display()
                )));
            }
            Ok(bundle)
        }
        None => ModelBundle::new(config.model.clone(), config.optim, config.seed),
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub state: RunState,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Contract(e.to_string()))?;
    text.push('\n');
    binio::write_file(path, text.as_bytes())
}

/// Trains `config.steps` steps into `out_dir`.
pub fn run(config: &TrainConfig, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    binio::write_file(&out_dir.join(CONFIG_FILE), format!("{}\n", config.to_json()).as_bytes())?;
    config.validate()?;
    let stage = build_stage(config)?;
    let load = |path: &Option<PathBuf>, needed: bool, what: &str| -> Result<Option<Dataset>> {
        match (path, needed) {
            (Some(p), true) => Ok(Some(load_split(p, Split::Train)?)),
            (None, true) => Err(Error::Config(format!("{} needs data.{what}", stage.name()))),
            (_, false) => Ok(None),
        }
    };
    let source = load(&config.data.source, stage.needs_source(), "source")?;
    let target = load(&config.data.target, stage.needs_target(), "target")?;
    if stage.prerequisite().is_some() && config.data.init_checkpoint.is_none() {
        return Err(Error::Config(format!("{} needs data.init_checkpoint", stage.name())));
    }
    let bundle = initial_bundle(config)?;
    let mut trainer = Trainer::new(config.clone(), bundle, source, target)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let started = Instant::now();
    while trainer.steps_done() < config.steps {
        let step = trainer.steps_done();
        match trainer.step() {
            Ok((phase, report)) => {
                let wall_ms = if config.metrics.wall_time {
                    started.elapsed().as_millis() as u64
                } else {
                    0
                };
                metrics.write(&MetricRecord::new(step, phase, &report, config.optim.lr, wall_ms))?;
            }
            Err(e) => {
                if let Some(dump) = trainer.divergence() {
                    write_json(&out_dir.join(DIVERGENCE_FILE), dump)?;
                }
                write_json(&out_dir.join(RUN_STATE_FILE), &trainer.state())?;
                return Err(e);
            }
        }
    }
    let state = trainer.state();
    let mut bundle = trainer.into_bundle();
    bundle.stages.push(stage.name().to_string());
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&bundle, &checkpoint)?;
    write_json(&out_dir.join(RUN_STATE_FILE), &state)?;
    Ok(RunSummary {
        state,
        checkpoint,
        metrics: metrics_path,
    })
}
