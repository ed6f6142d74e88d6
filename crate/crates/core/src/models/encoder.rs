//! Video transformer encoder: tubelet embedding, class token, learned
//! positional embeddings, pre-norm transformer blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{LayerNorm, Linear, INIT_STD};
use super::params::{trunc_normal, Bound, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub clip_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub tubelet_frames: usize,
    pub tubelet_height: usize,
    pub tubelet_width: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub class_token: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            clip_frames: 16,
            channels: 3,
            height: 32,
            width: 32,
            tubelet_frames: 2,
            tubelet_height: 8,
            tubelet_width: 8,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            class_token: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.clip_frames,
            self.channels,
            self.height,
            self.width,
            self.tubelet_frames,
            self.tubelet_height,
            self.tubelet_width,
            self.embed_dim,
            self.depth,
            self.heads,
            self.mlp_ratio,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("encoder extents must be positive".into()));
        }
        if self.clip_frames % self.tubelet_frames != 0 {
            return Err(Error::Config(format!(
                "clip_frames {} not divisible by tubelet frames {}",
                self.clip_frames, self.tubelet_frames
            )));
        }
        if self.height % self.tubelet_height != 0 || self.width % self.tubelet_width != 0 {
            return Err(Error::Config(format!(
                "spatial {}x{} not divisible by tubelet {}x{}",
                self.height, self.width, self.tubelet_height, self.tubelet_width
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize, usize) {
        (
            self.clip_frames / self.tubelet_frames,
            self.height / self.tubelet_height,
            self.width / self.tubelet_width,
        )
    }

    pub fn patch_tokens(&self) -> usize {
        let (t, h, w) = self.grid();
        t * h * w
    }

    pub fn tokens(&self) -> usize {
        self.patch_tokens() + usize::from(self.class_token)
    }

    pub fn patch_dim(&self) -> usize {
        self.tubelet_frames * self.channels * self.tubelet_height * self.tubelet_width
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [self.clip_frames, self.channels, self.height, self.width]
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Feature extractor mapping a batch of clips to one vector per clip.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    patch: Linear,
    cls: Option<ParamId>,
    pos: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl Encoder {
    pub fn new<T: Real, R: Rng>(config: EncoderConfig, params: &mut ParamSet<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let e = config.embed_dim;
        let patch = Linear::new(params, rng, "patch", config.patch_dim(), e);
        let cls = config
            .class_token
            .then(|| params.add("cls", trunc_normal(rng, &[1, 1, e], INIT_STD)));
        let pos = params.add("pos", trunc_normal(rng, &[1, config.tokens(), e], INIT_STD));
        let blocks = (0..config.depth)
            .map(|i| Block {
                norm1: LayerNorm::new(params, &format!("block{i}.norm1"), e),
                qkv: Linear::new(params, rng, &format!("block{i}.qkv"), e, 3 * e),
                proj: Linear::new(params, rng, &format!("block{i}.proj"), e, e),
                norm2: LayerNorm::new(params, &format!("block{i}.norm2"), e),
                fc1: Linear::new(params, rng, &format!("block{i}.fc1"), e, config.mlp_ratio * e),
                fc2: Linear::new(params, rng, &format!("block{i}.fc2"), config.mlp_ratio * e, e),
            })
            .collect();
        let norm = LayerNorm::new(params, "norm", e);
        Ok(Self {
            config,
            patch,
            cls,
            pos,
            blocks,
            norm,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Rearranges `[b, t, c, h, w]` clips into `[b, tokens, patch_dim]` tubelets.
    pub fn patchify<'t, T: Real>(&self, clips: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = &self.config;
        let s = clips.shape();
        let want = c.clip_shape();
        if s.len() != 5 || s[1..] != want {
            return Err(Error::Config(format!(
                "clip extents {:?} do not match encoder {:?}",
                &s[1.min(s.len())..],
                want
            )));
        }
        let b = s[0];
        let (gt, gh, gw) = c.grid();
        clips
            .reshape(&[
                b,
                gt,
                c.tubelet_frames,
                c.channels,
                gh,
                c.tubelet_height,
                gw,
                c.tubelet_width,
            ])?
            .permute(&[0, 1, 4, 6, 2, 3, 5, 7])?
            .reshape(&[b, gt * gh * gw, c.patch_dim()])
    }

    /// Returns `[b, embed_dim]` features.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, clips: Var<'t, T>) -> Result<Var<'t, T>> {
        let c = &self.config;
        let b = clips.shape()[0];
        let e = c.embed_dim;
        let mut x = self.patch.forward(p, self.patchify(clips)?)?;
        if let Some(cls) = self.cls {
            let tape = clips.tape();
            let zeros = tape.constant(crate::tensor::Tensor::zeros(&[b, 1, e]));
            let cls = zeros.add(p.get(cls))?;
            x = Var::concat(&[cls, x], 1)?;
        }
        x = x.add(p.get(self.pos))?;
        let s = c.tokens();
        for blk in &self.blocks {
            x = x.add(self.attention(p, blk, blk.norm1.forward(p, x)?, b, s)?)?;
            let h = blk.fc1.forward(p, blk.norm2.forward(p, x)?)?.gelu();
            x = x.add(blk.fc2.forward(p, h)?)?;
        }
        let x = self.norm.forward(p, x)?;
        if self.cls.is_some() {
            x.narrow(1, 0, 1)?.reshape(&[b, e])
        } else {
            let ones = clips
                .tape()
                .constant(crate::tensor::Tensor::full(&[b, 1, s], T::lit(1.0 / s as f64)));
            // mean over tokens as a batched product
            Var::matmul(ones, x)?.reshape(&[b, e])
        }
    }

    fn attention<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        blk: &Block,
        x: Var<'t, T>,
        b: usize,
        s: usize,
    ) -> Result<Var<'t, T>> {
        let (e, h) = (self.config.embed_dim, self.config.heads);
        let dh = e / h;
        let qkv = blk
            .qkv
            .forward(p, x)?
            .reshape(&[b, s, 3, h, dh])?
            .permute(&[2, 0, 3, 1, 4])?
            .reshape(&[3, b * h, s, dh])?;
        let q = qkv.narrow(0, 0, 1)?.reshape(&[b * h, s, dh])?;
        let k = qkv.narrow(0, 1, 1)?.reshape(&[b * h, s, dh])?;
        let v = qkv.narrow(0, 2, 1)?.reshape(&[b * h, s, dh])?;
        let attn = q
            .matmul_t(k)?
            .scale(T::lit(1.0 / (dh as f64).sqrt()))
            .softmax(2)?;
        let out = attn
            .matmul(v)?
            .reshape(&[b, h, s, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, s, e])?;
        blk.proj.forward(p, out)
    }
}
