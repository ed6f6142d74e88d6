//! Per-frame 2-D U-Net emitting one mask logit per pixel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub convs_per_level: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 8,
            in_channels: 3,
            convs_per_level: 2,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 || self.convs_per_level == 0 {
            return Err(Error::Config("unet channels and convs_per_level must be positive".into()));
        }
        Ok(())
    }

    pub fn check_extents(&self, height: usize, width: usize) -> Result<()> {
        let f = 1usize << self.depth;
        if height % f != 0 || width % f != 0 {
            return Err(Error::Config(format!(
                "frame {height}x{width} not divisible by 2^{} = {f}",
                self.depth
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    down: Vec<Vec<Conv>>,
    bottleneck: Vec<Conv>,
    up: Vec<Vec<Conv>>,
    head: Conv,
}

fn stack<T: Real, R: Rng>(
    params: &mut ParamSet<T>,
    rng: &mut R,
    name: &str,
    c_in: usize,
    c_out: usize,
    n: usize,
) -> Vec<Conv> {
    (0..n)
        .map(|i| {
            let cin = if i == 0 { c_in } else { c_out };
            Conv::new(params, rng, &format!("{name}.conv{i}"), cin, c_out, 3)
        })
        .collect()
}

impl UNet {
    pub fn new<T: Real, R: Rng>(config: UNetConfig, params: &mut ParamSet<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.convs_per_level;
        let mut down = Vec::with_capacity(config.depth);
        let mut c_in = config.in_channels;
        for level in 0..config.depth {
            down.push(stack(params, rng, &format!("down{level}"), c_in, config.channels(level), n));
            c_in = config.channels(level);
        }
        let bottleneck = stack(params, rng, "mid", c_in, config.channels(config.depth), n);
        let mut up = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let cat = config.channels(level + 1) + config.channels(level);
            up.push(stack(params, rng, &format!("up{level}"), cat, config.channels(level), n));
        }
        let head = Conv::new(params, rng, "head", config.channels(0), 1, 1);
        Ok(Self {
            config,
            down,
            bottleneck,
            up,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Name of the output convolution's parameters, for tests that pin the logits.
    pub fn head_names(&self) -> (&'static str, &'static str) {
        ("head.w", "head.b")
    }

    fn run<'t, T: Real>(p: &Bound<'t, T>, convs: &[Conv], mut x: Var<'t, T>) -> Result<Var<'t, T>> {
        for c in convs {
            x = c.forward(p, x)?.relu();
        }
        Ok(x)
    }

    /// `[n, c, h, w]` frames to `[n, 1, h, w]` logits.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, frames: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = frames.shape();
        if s.len() != 4 || s[1] != self.config.in_channels {
            return Err(Error::Config(format!(
                "unet expects [n, {}, h, w] frames, got {s:?}",
                self.config.in_channels
            )));
        }
        self.config.check_extents(s[2], s[3])?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut x = frames;
        for convs in &self.down {
            x = Self::run(p, convs, x)?;
            skips.push(x);
            x = x.max_pool2()?;
        }
        x = Self::run(p, &self.bottleneck, x)?;
        for convs in &self.up {
            let skip = skips.pop().expect("one skip per level");
            x = Var::concat(&[x.upsample2()?, skip], 1)?;
            x = Self::run(p, convs, x)?;
        }
        self.head.forward(p, x)
    }
}
