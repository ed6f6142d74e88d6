//! Adversarial mask generation and mask application.
//!
//! The U-Net produces one logit per (frame, row, column). A softmax over all
//! `P = frames·h·w` positions yields scores that sum to one; each mask value
//! is `clamp(ρ·P·score, 0, 1)`, so uniform logits give a mask equal to the
//! keep ratio `ρ` everywhere. Masks are shared across colour channels.

use rand::Rng;

use super::params::{Bound, ParamSet};
use super::unet::{UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const DEFAULT_KEEP_RATIO: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct MaskGenerator {
    unet: UNet,
}

/// Generator output for a batch, still on the tape.
pub struct MaskOutput<'t, T: Real> {
    /// `[b, P]` pre-scaling softmax scores.
    pub scores: Var<'t, T>,
    /// `[b, t, 1, h, w]` mask values in `[0, 1]`.
    pub mask: Var<'t, T>,
}

/// Soft mask for a single clip.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskField<T> {
    /// `[frames, h, w]` values in `[0, 1]`.
    pub values: Tensor<T>,
    /// `[frames, h, w]` softmax scores before scaling.
    pub scores: Tensor<T>,
    pub keep_ratio: f64,
}

impl MaskGenerator {
    pub fn new<T: Real, R: Rng>(config: UNetConfig, params: &mut ParamSet<T>, rng: &mut R) -> Result<Self> {
        Ok(Self {
            unet: UNet::new(config, params, rng)?,
        })
    }

    pub fn unet(&self) -> &UNet {
        &self.unet
    }

    /// Masks for `[b, t, c, h, w]` clips; frames are folded into the batch axis.
    pub fn forward<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        clips: Var<'t, T>,
        keep_ratio: f64,
    ) -> Result<MaskOutput<'t, T>> {
        if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
            return Err(Error::Config(format!("keep ratio {keep_ratio} outside (0, 1]")));
        }
        let s = clips.shape();
        if s.len() != 5 {
            return Err(Error::Config(format!("expected [b, t, c, h, w] clips, got {s:?}")));
        }
        let (b, t, c, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        self.unet.config().check_extents(h, w)?;
        let logits = self.unet.forward(p, clips.reshape(&[b * t, c, h, w])?)?;
        normalize_logits(logits.reshape(&[b, t, h, w])?, keep_ratio)
    }

    /// Mask for one `[t, c, h, w]` clip, computed without gradient tracking.
    pub fn generate<T: Real>(
        &self,
        params: &ParamSet<T>,
        clip: &Tensor<T>,
        keep_ratio: f64,
    ) -> Result<MaskField<T>> {
        let s = clip.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::Config(format!("expected [t, c, h, w] clip, got {s:?}")));
        }
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let x = tape.constant(clip.clone().reshape(&[1, s[0], s[1], s[2], s[3]])?);
        let out = self.forward(&p, x, keep_ratio)?;
        let field = [s[0], s[2], s[3]];
        Ok(MaskField {
            values: out.mask.to_tensor().reshape(&field)?,
            scores: out.scores.to_tensor().reshape(&field)?,
            keep_ratio,
        })
    }
}

/// Turns `[b, t, h, w]` generator logits into scores and mask values.
pub fn normalize_logits<T: Real>(logits: Var<'_, T>, keep_ratio: f64) -> Result<MaskOutput<'_, T>> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::Config(format!("keep ratio {keep_ratio} outside (0, 1]")));
    }
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::Config(format!("expected [b, t, h, w] logits, got {s:?}")));
    }
    let (b, t, h, w) = (s[0], s[1], s[2], s[3]);
    let positions = t * h * w;
    let scores = logits.reshape(&[b, positions])?.softmax(1)?;
    let mask = scores
        .scale(T::lit(keep_ratio * positions as f64))
        .clamp(T::zero(), T::one())
        .reshape(&[b, t, 1, h, w])?;
    Ok(MaskOutput { scores, mask })
}

/// `clips ⊙ mask` with the mask broadcast over channels.
///
/// `clips` is `[b, t, c, h, w]`; `mask` is `[b, t, 1, h, w]`.
pub fn apply_mask<'t, T: Real>(clips: Var<'t, T>, mask: Var<'t, T>) -> Result<Var<'t, T>> {
    let (sc, sm) = (clips.shape(), mask.shape());
    let aligned = sc.len() == 5
        && sm.len() == 5
        && sm[2] == 1
        && sc[0] == sm[0]
        && sc[1] == sm[1]
        && sc[3] == sm[3]
        && sc[4] == sm[4];
    if !aligned {
        return Err(Error::Contract(format!(
            "mask {sm:?} does not align with clips {sc:?}"
        )));
    }
    clips.mul(mask)
}

/// Single-clip variant of [`apply_mask`] on plain tensors.
pub fn apply_mask_field<T: Real>(clip: &Tensor<T>, mask: &MaskField<T>) -> Result<Tensor<T>> {
    let s = clip.shape();
    let m = mask.values.shape();
    if s.len() != 4 || m.len() != 3 || s[0] != m[0] || s[2] != m[1] || s[3] != m[2] {
        return Err(Error::Contract(format!(
            "mask {m:?} does not align with clip {s:?}"
        )));
    }
    let plane = s[2] * s[3];
    let mut out = clip.clone();
    let mv = mask.values.data();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let frame = i / (s[1] * plane);
        *v *= mv[frame * plane + i % plane];
    }
    Ok(out)
}
