//! Training stages: what one optimization step computes and which networks it
//! updates.
//!
//! Every step binds all four networks to a fresh tape, marks only the
//! scheduled ones as trainable, and applies AdamW to exactly those. Frozen
//! networks are never handed to the optimizer, so weight decay cannot touch
//! them either.

use crate::error::{Error, Result};
use crate::models::{apply_mask, BoundBundle, ModelBundle, Net};
use crate::objectives::{
    consistency_loss, domain_loss, masked_domain_loss, pseudo_label, supervised_loss, ConsistencyLoss, DomainNets,
    SOURCE, TARGET,
};
use crate::tensor::{Gradients, Tape, Tensor, Var};

use super::config::TrainConfig;
use super::schedule::{Alternation, Phase};

/// Clips for one step. Either side may be absent when the stage does not use it.
#[derive(Clone, Debug)]
pub struct StepBatch {
    /// Global batch number; equals the step index.
    pub index: u64,
    pub source: Option<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub target: Option<Tensor<f32>>,
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

impl StepBatch {
    fn source(&self) -> Result<&Tensor<f32>> {
        self.source
            .as_ref()
            .ok_or_else(|| Error::Contract("stage needs source clips but the batch has none".into()))
    }

    fn target(&self) -> Result<&Tensor<f32>> {
        self.target
            .as_ref()
            .ok_or_else(|| Error::Contract("stage needs target clips but the batch has none".into()))
    }
}

/// Per-step values chosen by the trainer.
#[derive(Clone, Copy, Debug)]
pub struct StepInfo {
    pub step: u64,
    pub lambda: f64,
}

/// Loss values of one step; `None` where the phase does not compute a term.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub l_s: Option<f64>,
    pub l_d_masked: Option<f64>,
    pub l_c_masked: Option<f64>,
    pub lambda: Option<f64>,
    pub pseudo_label_keep_fraction: Option<f64>,
    /// True when the confidence filter removed every target clip.
    pub skipped: bool,
}

pub trait Stage {
    fn name(&self) -> &'static str;
    fn phase(&self, step: u64) -> Phase;
    /// Networks updated in `phase`.
    fn trainable(&self, phase: Phase) -> &'static [Net];
    fn needs_source(&self) -> bool;
    fn needs_target(&self) -> bool;
    /// Stage that must appear in the initial checkpoint's history, if any.
    fn prerequisite(&self) -> Option<&'static str> {
        None
    }
    fn step(&self, bundle: &mut ModelBundle<f32>, batch: &StepBatch, info: StepInfo) -> Result<StepReport>;
}

pub fn stage_names() -> &'static [&'static str] {
    &["source-only", "stage1", "stage2"]
}

pub fn build_stage(config: &TrainConfig) -> Result<Box<dyn Stage>> {
    match config.stage.as_str() {
        "source-only" => Ok(Box::new(SourceOnly)),
        "stage1" => Ok(Box::new(AdversarialStage {
            alternation: Alternation::new(config.adversarial.encoder_steps, config.adversarial.generator_steps)?,
            keep_ratio: config.adversarial.keep_ratio,
        })),
        "stage2" => Ok(Box::new(ConsistencyStage {
            loss: consistency_loss(&config.consistency.loss)?,
            masks: mask_policy(&config.consistency.masks)?,
            keep_ratio: config.adversarial.keep_ratio,
            tau: config.consistency.tau,
            supervised: config.consistency.supervised,
        })),
        other => Err(Error::Config(format!(
            "unknown stage {other:?}; expected one of {:?}",
            stage_names()
        ))),
    }
}

/// Where Stage-2 masks come from.
pub trait MaskPolicy {
    fn name(&self) -> &'static str;
    /// `[b, t, 1, h, w]` masks for `[b, t, c, h, w]` clips.
    fn masks<'t>(
        &self,
        bundle: &ModelBundle<f32>,
        p: &BoundBundle<'t, f32>,
        clips: Var<'t, f32>,
        keep_ratio: f64,
    ) -> Result<Var<'t, f32>>;
}

/// The frozen mask generator.
pub struct AdversarialMasks;

impl MaskPolicy for AdversarialMasks {
    fn name(&self) -> &'static str {
        "adversarial"
    }

    fn masks<'t>(
        &self,
        bundle: &ModelBundle<f32>,
        p: &BoundBundle<'t, f32>,
        clips: Var<'t, f32>,
        keep_ratio: f64,
    ) -> Result<Var<'t, f32>> {
        Ok(bundle.generator.forward(&p.generator, clips, keep_ratio)?.mask)
    }
}

/// All-ones masks, i.e. no masking. A debugging aid.
pub struct OnesMasks;

impl MaskPolicy for OnesMasks {
    fn name(&self) -> &'static str {
        "ones"
    }

    fn masks<'t>(
        &self,
        _bundle: &ModelBundle<f32>,
        _p: &BoundBundle<'t, f32>,
        clips: Var<'t, f32>,
        _keep_ratio: f64,
    ) -> Result<Var<'t, f32>> {
        let s = clips.shape();
        Ok(clips.tape().constant(Tensor::ones(&[s[0], s[1], 1, s[3], s[4]])))
    }
}

pub fn mask_policy_names() -> &'static [&'static str] {
    &["adversarial", "ones"]
}

pub fn mask_policy(name: &str) -> Result<Box<dyn MaskPolicy>> {
    match name {
        "adversarial" => Ok(Box::new(AdversarialMasks)),
        "ones" => Ok(Box::new(OnesMasks)),
        other => Err(Error::Config(format!(
            "unknown mask policy {other:?}; expected one of {:?}",
            mask_policy_names()
        ))),
    }
}

fn guard(info: StepInfo, phase: Phase, batch: &StepBatch, name: &str, value: f64) -> Result<f64> {
    if value.is_finite() {
        return Ok(value);
    }
    Err(Error::Diverged {
        step: info.step,
        phase: phase.as_str().to_string(),
        batch: batch.index,
        detail: format!("{name} = {value}"),
    })
}

/// Backward through `loss` and one AdamW step for each net in `nets`.
fn update(bundle: &mut ModelBundle<f32>, tape: &Tape<f32>, p: &BoundBundle<'_, f32>, loss: Var<'_, f32>, nets: &[Net]) -> Result<()> {
    let mut grads: Gradients<f32> = tape.backward(loss)?;
    let per_net: Vec<_> = nets.iter().map(|&n| (n, p.get(n).grads(&mut grads))).collect();
    for (net, g) in per_net {
        bundle.step(net, &g)?;
    }
    Ok(())
}

/// Supervised training on source clips only: the adaptation-free baseline.
pub struct SourceOnly;

const ENCODER_CLASSIFIER: &[Net] = &[Net::Encoder, Net::Classifier];
const ENCODER_CLASSIFIER_DOMAIN: &[Net] = &[Net::Encoder, Net::Classifier, Net::Domain];
const GENERATOR: &[Net] = &[Net::Generator];

impl Stage for SourceOnly {
    fn name(&self) -> &'static str {
        "source-only"
    }

    fn phase(&self, _step: u64) -> Phase {
        Phase::Supervised
    }

    fn trainable(&self, _phase: Phase) -> &'static [Net] {
        ENCODER_CLASSIFIER
    }

    fn needs_source(&self) -> bool {
        true
    }

    fn needs_target(&self) -> bool {
        false
    }

    fn step(&self, bundle: &mut ModelBundle<f32>, batch: &StepBatch, info: StepInfo) -> Result<StepReport> {
        let nets = self.trainable(Phase::Supervised);
        let tape = Tape::new();
        let p = bundle.bind(&tape, nets);
        let x = tape.constant(batch.source()?.clone());
        let logits = bundle.classifier.forward(&p.classifier, bundle.encoder.forward(&p.encoder, x)?)?;
        let loss = supervised_loss(logits, &batch.labels)?;
        let l_s = guard(info, Phase::Supervised, batch, "l_s", loss.item() as f64)?;
        update(bundle, &tape, &p, loss, nets)?;
        Ok(StepReport {
            l_s: Some(l_s),
            ..StepReport::default()
        })
    }
}

/// Stage 1: alternating encoder and generator phases.
pub struct AdversarialStage {
    pub alternation: Alternation,
    pub keep_ratio: f64,
}

impl AdversarialStage {
    fn encoder_step(&self, bundle: &mut ModelBundle<f32>, batch: &StepBatch, info: StepInfo) -> Result<StepReport> {
        let phase = Phase::Encoder;
        let nets = self.trainable(phase);
        let (xs, xt) = (batch.source()?, batch.target()?);
        let b = xs.shape()[0];
        let bt = xt.shape()[0];
        let tape = Tape::new();
        let p = bundle.bind(&tape, nets);
        let (vs, vt) = (tape.constant(xs.clone()), tape.constant(xt.clone()));
        // The generator is bound without gradients, so its masks are constants here.
        let masks = bundle
            .generator
            .forward(&p.generator, Var::concat(&[vs, vt], 0)?, self.keep_ratio)?
            .mask;
        let masked = apply_mask(Var::concat(&[vs, vt], 0)?, masks)?;
        // One encoder pass over the full source clips and both masked halves.
        let features = bundle.encoder.forward(&p.encoder, Var::concat(&[vs, masked], 0)?)?;
        let logits = bundle.classifier.forward(&p.classifier, features.narrow(0, 0, b)?)?;
        let l_s = supervised_loss(logits, &batch.labels)?;
        let reversed = features.narrow(0, b, b + bt)?.grl(info.lambda as f32);
        let indicators: Vec<f32> = std::iter::repeat_n(SOURCE as f32, b)
            .chain(std::iter::repeat_n(TARGET as f32, bt))
            .collect();
        let l_d = domain_loss(&bundle.domain, &p.domain, reversed, &indicators)?;
        let ls = guard(info, phase, batch, "l_s", l_s.item() as f64)?;
        let ld = guard(info, phase, batch, "l_d_masked", l_d.item() as f64)?;
        update(bundle, &tape, &p, l_s.add(l_d)?, nets)?;
        Ok(StepReport {
            l_s: Some(ls),
            l_d_masked: Some(ld),
            lambda: Some(info.lambda),
            ..StepReport::default()
        })
    }

    fn generator_step(&self, bundle: &mut ModelBundle<f32>, batch: &StepBatch, info: StepInfo) -> Result<StepReport> {
        let phase = Phase::Generator;
        let nets = self.trainable(phase);
        let (xs, xt) = (batch.source()?, batch.target()?);
        let (b, bt) = (xs.shape()[0], xt.shape()[0]);
        let tape = Tape::new();
        let p = bundle.bind(&tape, nets);
        let clips = Var::concat(&[tape.constant(xs.clone()), tape.constant(xt.clone())], 0)?;
        let masks = bundle.generator.forward(&p.generator, clips, self.keep_ratio)?.mask;
        let indicators: Vec<f32> = std::iter::repeat_n(SOURCE as f32, b)
            .chain(std::iter::repeat_n(TARGET as f32, bt))
            .collect();
        let nets_d = DomainNets {
            encoder: &bundle.encoder,
            encoder_params: &p.encoder,
            head: &bundle.domain,
            head_params: &p.domain,
        };
        let l_d = masked_domain_loss(&nets_d, clips, masks, &indicators, 1.0, false)?;
        let ld = guard(info, phase, batch, "l_d_masked", l_d.item() as f64)?;
        update(bundle, &tape, &p, l_d, nets)?;
        Ok(StepReport {
            l_d_masked: Some(ld),
            ..StepReport::default()
        })
    }
}

impl Stage for AdversarialStage {
    fn name(&self) -> &'static str {
        "stage1"
    }

    fn phase(&self, step: u64) -> Phase {
        self.alternation.phase(step)
    }

    fn trainable(&self, phase: Phase) -> &'static [Net] {
        match phase {
            Phase::Generator => GENERATOR,
            _ => ENCODER_CLASSIFIER_DOMAIN,
        }
    }

    fn needs_source(&self) -> bool {
        true
    }

    fn needs_target(&self) -> bool {
        true
    }

    fn step(&self, bundle: &mut ModelBundle<f32>, batch: &StepBatch, info: StepInfo) -> Result<StepReport> {
        match self.phase(info.step) {
            Phase::Generator => self.generator_step(bundle, batch, info),
            _ => self.encoder_step(bundle, batch, info),
        }
    }
}

/// Stage 2: masked consistency on target clips with a frozen generator.
pub struct ConsistencyStage {
    pub loss: Box<dyn ConsistencyLoss<f32>>,
    pub masks: Box<dyn MaskPolicy>,
    pub keep_ratio: f64,
    pub tau: f64,
    /// Adds the supervised source loss.
    pub supervised: bool,
}

impl Stage for ConsistencyStage {
    fn name(&self) -> &'static str {
        "stage2"
    }

    fn phase(&self, _step: u64) -> Phase {
        Phase::Consistency
    }

    fn trainable(&self, _phase: Phase) -> &'static [Net] {
        ENCODER_CLASSIFIER
    }

    fn needs_source(&self) -> bool {
        self.supervised
    }

    fn needs_target(&self) -> bool {
        true
    }

    fn prerequisite(&self) -> Option<&'static str> {
        Some("stage1")
    }

    fn step(&self, bundle: &mut ModelBundle<f32>, batch: &StepBatch, info: StepInfo) -> Result<StepReport> {
        let phase = Phase::Consistency;
        let nets = self.trainable(phase);
        let xt = batch.target()?;
        let rows = xt.shape()[0];

        // Full-view predictions from the current model, as plain values.
        let full_logits = bundle.classify(&bundle.encode(xt)?)?;
        let labels = pseudo_label(&full_logits, info.step)?;

        let tape = Tape::new();
        let p = bundle.bind(&tape, nets);
        let vt = tape.constant(xt.clone());
        let masks = self.masks.masks(bundle, &p, vt, self.keep_ratio)?;
        let masked = apply_mask(vt, masks)?;
        let logits = bundle.classifier.forward(&p.classifier, bundle.encoder.forward(&p.encoder, masked)?)?;

        let mut report = StepReport::default();
        let consistency = match self.loss.loss(logits, &labels, Some(&full_logits), self.tau) {
            Ok(out) => {
                report.pseudo_label_keep_fraction = Some(out.kept as f64 / rows as f64);
                report.l_c_masked = Some(guard(info, phase, batch, "l_c_masked", out.loss.item() as f64)?);
                Some(out.loss)
            }
            Err(Error::NoConfidentSamples(_)) => {
                report.pseudo_label_keep_fraction = Some(0.0);
                report.skipped = true;
                None
            }
            Err(e) => return Err(e),
        };

        let supervised = if self.supervised {
            let xs = tape.constant(batch.source()?.clone());
            let logits = bundle.classifier.forward(&p.classifier, bundle.encoder.forward(&p.encoder, xs)?)?;
            let l = supervised_loss(logits, &batch.labels)?;
            report.l_s = Some(guard(info, phase, batch, "l_s", l.item() as f64)?);
            Some(l)
        } else {
            None
        };

        let total = match (consistency, supervised) {
            (Some(a), Some(b)) => a.add(b)?,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return Ok(report),
        };
        update(bundle, &tape, &p, total, nets)?;
        Ok(report)
    }
}
