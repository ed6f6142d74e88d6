//! Source-only, Stage-1 and Stage-2 training, metrics and evaluation.

mod config;
mod eval;
mod experiment;
mod metrics;
mod run;
mod schedule;
mod stages;

pub use config::{AdversarialConfig, ConsistencyConfig, DataConfig, MetricsConfig, TrainConfig};
pub use eval::{
    dataset_features, domain_probe, evaluate, pixel_features, predict, Evaluation, Features, LinearProbe,
    ProbeConfig,
};
pub use experiment::{
    median, run_seed, summarize, ExperimentConfig, ExperimentData, ExperimentSummary, SeedResult,
};
pub use metrics::{read_metrics, MetricRecord, MetricsWriter};
pub use run::{
    initial_bundle, load_split, run, DivergenceDump, RunState, RunSummary, Trainer, CHECKPOINT_FILE, CONFIG_FILE,
    DIVERGENCE_FILE, METRICS_FILE, RUN_STATE_FILE,
};
pub use schedule::{lambda_schedule, lambda_schedule_names, Alternation, ConstantLambda, LambdaSchedule, Phase, RampLambda};
pub use stages::{
    build_stage, mask_policy, mask_policy_names, stage_names, AdversarialMasks, AdversarialStage, ConsistencyStage,
    MaskPolicy, OnesMasks, SourceOnly, Stage, StepBatch, StepInfo, StepReport,
};
