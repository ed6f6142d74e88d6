use super::{confident_rows, mse_consistency_loss, PseudoLabel};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Loss value plus how many rows survived the confidence filter.
pub struct ConsistencyOutcome<'t, T: Real> {
    pub loss: Var<'t, T>,
    pub kept: usize,
}

/// Consistency between masked-view predictions and full-view targets.
pub trait ConsistencyLoss<T: Real> {
    fn name(&self) -> &'static str;

    /// `full_logits` is required by losses that compare soft predictions.
    fn loss<'t>(
        &self,
        masked_logits: Var<'t, T>,
        labels: &[PseudoLabel],
        full_logits: Option<&Tensor<T>>,
        tau: f64,
    ) -> Result<ConsistencyOutcome<'t, T>>;
}

fn keep<'t, T: Real>(masked_logits: Var<'t, T>, labels: &[PseudoLabel], tau: f64) -> Result<(Var<'t, T>, Vec<usize>)> {
    let rows = masked_logits.shape()[0];
    if labels.len() != rows {
        return Err(Error::Contract(format!("{} pseudo labels for {rows} rows", labels.len())));
    }
    let kept = confident_rows(labels, tau);
    if kept.is_empty() {
        return Err(Error::NoConfidentSamples(rows));
    }
    if kept.len() == rows {
        return Ok((masked_logits, kept));
    }
    Ok((masked_logits.index_rows(&kept)?, kept))
}

/// Hard pseudo-label cross-entropy.
pub struct CrossEntropyConsistency;

impl<T: Real> ConsistencyLoss<T> for CrossEntropyConsistency {
    fn name(&self) -> &'static str {
        "ce"
    }

    fn loss<'t>(
        &self,
        masked_logits: Var<'t, T>,
        labels: &[PseudoLabel],
        _full_logits: Option<&Tensor<T>>,
        tau: f64,
    ) -> Result<ConsistencyOutcome<'t, T>> {
        let (logits, kept) = keep(masked_logits, labels, tau)?;
        let classes: Vec<usize> = kept.iter().map(|&i| labels[i].class).collect();
        Ok(ConsistencyOutcome {
            loss: logits.cross_entropy(&classes)?,
            kept: kept.len(),
        })
    }
}

/// Squared error between probability vectors.
pub struct MseConsistency;

impl<T: Real> ConsistencyLoss<T> for MseConsistency {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn loss<'t>(
        &self,
        masked_logits: Var<'t, T>,
        labels: &[PseudoLabel],
        full_logits: Option<&Tensor<T>>,
        tau: f64,
    ) -> Result<ConsistencyOutcome<'t, T>> {
        let full = full_logits.ok_or_else(|| Error::Contract("mse consistency needs full-view logits".into()))?;
        let (logits, kept) = keep(masked_logits, labels, tau)?;
        let k = full.shape()[1];
        let rows: Vec<T> = kept.iter().flat_map(|&i| full.data()[i * k..(i + 1) * k].to_vec()).collect();
        let target = Tensor::new(&[kept.len(), k], rows)?;
        Ok(ConsistencyOutcome {
            loss: mse_consistency_loss(logits, &target)?,
            kept: kept.len(),
        })
    }
}

const NAMES: [&str; 2] = ["ce", "mse"];

pub fn consistency_loss_names() -> &'static [&'static str] {
    &NAMES
}

/// Looks a consistency loss up by its registered name.
pub fn consistency_loss<T: Real>(name: &str) -> Result<Box<dyn ConsistencyLoss<T>>> {
    match name {
        "ce" => Ok(Box::new(CrossEntropyConsistency)),
        "mse" => Ok(Box::new(MseConsistency)),
        other => Err(Error::Config(format!(
            "unknown consistency loss {other:?}; expected one of {NAMES:?}"
        ))),
    }
}
