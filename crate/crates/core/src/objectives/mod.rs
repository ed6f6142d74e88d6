//! Training losses and the pseudo-labelling rule.
//!
//! All losses are batch means. Domain indicators use `1` for source and `0`
//! for target.

mod consistency;

use crate::error::{Error, Result};
use crate::models::{apply_mask, domain_logit_bound, DomainHead, Encoder, Bound};
use crate::tensor::{argmax, Real, Tensor, Var};

pub use consistency::{
    consistency_loss, consistency_loss_names, ConsistencyLoss, ConsistencyOutcome, CrossEntropyConsistency,
    MseConsistency,
};

pub const SOURCE: f64 = 1.0;
pub const TARGET: f64 = 0.0;

/// Mean cross-entropy of source logits against their labels.
pub fn supervised_loss<'t, T: Real>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    logits.cross_entropy(labels)
}

/// Binary cross-entropy of the domain head on `features`, with the
/// probability clamped away from 0 and 1.
pub fn domain_loss<'t, T: Real>(
    head: &DomainHead,
    p: &Bound<'t, T>,
    features: Var<'t, T>,
    indicators: &[T],
) -> Result<Var<'t, T>> {
    let b = domain_logit_bound();
    head.logits(p, features)?.bce_with_logits(indicators, T::lit(-b), T::lit(b))
}

/// Encoder and domain head as used by the masked domain loss.
pub struct DomainNets<'a, 't, T: Real> {
    pub encoder: &'a Encoder,
    pub encoder_params: &'a Bound<'t, T>,
    pub head: &'a DomainHead,
    pub head_params: &'a Bound<'t, T>,
}

/// Domain loss on masked clips. With `reverse`, encoder features pass through
/// a gradient reversal scaled by `lambda` before the head.
pub fn masked_domain_loss<'t, T: Real>(
    nets: &DomainNets<'_, 't, T>,
    clips: Var<'t, T>,
    masks: Var<'t, T>,
    indicators: &[T],
    lambda: T,
    reverse: bool,
) -> Result<Var<'t, T>> {
    let features = nets.encoder.forward(nets.encoder_params, apply_mask(clips, masks)?)?;
    let features = if reverse { features.grl(lambda) } else { features };
    domain_loss(nets.head, nets.head_params, features, indicators)
}

/// Hard label taken from a full-view prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabel {
    pub class: usize,
    /// Largest softmax probability.
    pub confidence: f64,
    /// Training step at which the label was computed.
    pub step: u64,
}

/// Argmax labels for `[b, K]` logits. Takes plain values, so nothing here can
/// carry gradient back into the model.
pub fn pseudo_label<T: Real>(logits: &Tensor<T>, step: u64) -> Result<Vec<PseudoLabel>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::Config(format!("pseudo labels need [b, K] logits, got {s:?}")));
    }
    if !logits.all_finite() {
        return Err(Error::Contract("pseudo labels from non-finite logits".into()));
    }
    Ok(logits
        .data()
        .chunks(s[1])
        .map(|row| {
            let class = argmax(row);
            let top = row[class].as_f64();
            let z: f64 = row.iter().map(|v| (v.as_f64() - top).exp()).sum();
            PseudoLabel {
                class,
                confidence: 1.0 / z,
                step,
            }
        })
        .collect())
}

/// Rows whose pseudo-label confidence reaches `tau`.
pub fn confident_rows(labels: &[PseudoLabel], tau: f64) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.confidence >= tau)
        .map(|(i, _)| i)
        .collect()
}

/// Cross-entropy of masked-view logits against hard pseudo-labels, keeping only
/// rows with confidence at least `tau`.
pub fn masked_consistency_loss<'t, T: Real>(
    masked_logits: Var<'t, T>,
    labels: &[PseudoLabel],
    tau: f64,
) -> Result<ConsistencyOutcome<'t, T>> {
    CrossEntropyConsistency.loss(masked_logits, labels, None, tau)
}

/// Mean squared difference between masked-view and full-view class
/// probabilities, averaged over batch and classes.
pub fn mse_consistency_loss<'t, T: Real>(
    masked_logits: Var<'t, T>,
    full_logits: &Tensor<T>,
) -> Result<Var<'t, T>> {
    let tape = masked_logits.tape();
    if masked_logits.shape() != full_logits.shape() {
        return Err(Error::shape("mse consistency", &masked_logits.shape(), full_logits.shape()));
    }
    let target = tape.constant(full_logits.clone()).softmax(1)?;
    let diff = masked_logits.softmax(1)?.sub(target)?;
    Ok(diff.mul(diff)?.mean())
}
