//! Moving-shape clips over domain-styled backgrounds.
//!
//! The class is fixed by the shape and its direction of motion. Everything a
//! domain changes (lighting, tint, background, texture, noise) is drawn
//! independently of the class, so a representation that ignores the domain
//! but keeps the motion exists by construction.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::batches::Dataset;
use super::clipfile::write_clip;
use super::manifest::{ClipRecord, Domain, Manifest, ManifestHeader, Split, MANIFEST_FORMAT, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Cross,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    /// Unit step as (row, column).
    pub fn delta(self) -> (f64, f64) {
        match self {
            Direction::Up => (-1.0, 0.0),
            Direction::Down => (1.0, 0.0),
            Direction::Left => (0.0, -1.0),
            Direction::Right => (0.0, 1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassSpec {
    pub id: usize,
    pub shape: Shape,
    pub direction: Direction,
    /// Pixels per frame.
    pub speed: f64,
}

/// The 2 × 4 grid of (shape, direction). `speed` is in pixels per frame.
pub fn class_specs(speed: f64) -> Vec<ClassSpec> {
    let dirs = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];
    [Shape::Square, Shape::Cross]
        .into_iter()
        .flat_map(|shape| dirs.into_iter().map(move |direction| (shape, direction)))
        .enumerate()
        .map(|(id, (shape, direction))| ClassSpec {
            id,
            shape,
            direction,
            speed,
        })
        .collect()
}

/// Photometric and background nuisance parameters of one domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub brightness: f64,
    pub contrast: f64,
    pub tint: [f64; 3],
    /// Amplitude of a linear background ramp.
    pub gradient: f64,
    /// Ramp orientation in radians.
    pub gradient_angle: f64,
    /// Amplitude of drifting stripes.
    pub texture: f64,
    /// Stripe frequency in cycles per pixel.
    pub texture_freq: f64,
    /// Maximum stripe drift in pixels per frame (direction drawn per clip).
    pub texture_drift: f64,
    pub noise: f64,
}

impl DomainParams {
    pub const SOURCE: DomainParams = DomainParams {
        brightness: 0.0,
        contrast: 1.0,
        tint: [0.0; 3],
        gradient: 0.0,
        gradient_angle: 0.0,
        texture: 0.0,
        texture_freq: 0.2,
        texture_drift: 0.0,
        noise: 0.02,
    };

    /// Target parameters at γ = 1.
    pub const TARGET_EXTREME: DomainParams = DomainParams {
        brightness: 0.3,
        contrast: 0.55,
        tint: [0.15, 0.0, -0.15],
        gradient: 0.3,
        gradient_angle: PI / 4.0,
        texture: 0.15,
        texture_freq: 0.3,
        texture_drift: 1.0,
        noise: 0.08,
    };

    pub fn lerp(&self, to: &DomainParams, g: f64) -> DomainParams {
        let l = |a: f64, b: f64| a + g * (b - a);
        DomainParams {
            brightness: l(self.brightness, to.brightness),
            contrast: l(self.contrast, to.contrast),
            tint: std::array::from_fn(|c| l(self.tint[c], to.tint[c])),
            gradient: l(self.gradient, to.gradient),
            gradient_angle: l(self.gradient_angle, to.gradient_angle),
            texture: l(self.texture, to.texture),
            texture_freq: l(self.texture_freq, to.texture_freq),
            texture_drift: l(self.texture_drift, to.texture_drift),
            noise: l(self.noise, to.noise),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainSpec {
    pub domain: Domain,
    /// Gap in `[0, 1]`; 0 makes the target identical to the source.
    pub gamma: f64,
    pub extreme: DomainParams,
}

impl DomainSpec {
    pub fn source() -> Self {
        Self {
            domain: Domain::Source,
            gamma: 0.0,
            extreme: DomainParams::TARGET_EXTREME,
        }
    }

    pub fn target(gamma: f64) -> Self {
        Self {
            domain: Domain::Target,
            gamma,
            extreme: DomainParams::TARGET_EXTREME,
        }
    }

    pub fn params(&self) -> DomainParams {
        match self.domain {
            Domain::Source => DomainParams::SOURCE,
            Domain::Target => DomainParams::SOURCE.lerp(&self.extreme, self.gamma),
        }
    }
}

/// Geometry and size of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub n_per_class: usize,
    /// Fraction of each class held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
    /// 0 keeps classes balanced; towards 1 later classes get fewer clips.
    pub imbalance: f64,
}

pub const CHANNELS: usize = 3;

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            frames: 16,
            height: 32,
            width: 32,
            n_per_class: 10,
            test_fraction: 0.2,
            seed: 0,
            imbalance: 0.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::Config("n_per_class must be at least 1".into()));
        }
        if self.frames < 2 || self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "clip extents {}x{}x{} too small (need ≥2 frames and ≥8x8 pixels)",
                self.frames, self.height, self.width
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        if !(0.0..1.0).contains(&self.imbalance) {
            return Err(Error::Config(format!("imbalance {} outside [0, 1)", self.imbalance)));
        }
        Ok(())
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [self.frames, CHANNELS, self.height, self.width]
    }

    /// Side of the moving shape in pixels.
    pub fn object_size(&self) -> usize {
        (self.height.min(self.width) * 5 / 16).max(3)
    }

    /// Speed chosen so the shape travels about half the frame over a clip.
    pub fn speed(&self) -> f64 {
        let travel = self.height.min(self.width) as f64 / 2.0;
        (travel / (self.frames - 1) as f64).max(0.5)
    }

    pub fn clips_for_class(&self, class: usize) -> usize {
        if self.imbalance == 0.0 {
            return self.n_per_class;
        }
        let r = class as f64 / (NUM_CLASSES - 1) as f64;
        ((self.n_per_class as f64 * (1.0 - self.imbalance).powf(r)).round() as usize).max(1)
    }

    pub fn test_count(&self, class: usize) -> usize {
        (self.clips_for_class(class) as f64 * self.test_fraction).round() as usize
    }
}

fn clip_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn shape_mask(shape: Shape, size: usize) -> Vec<bool> {
    let arm = (size / 5).max(1);
    let lo = (size - arm) / 2;
    (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            match shape {
                Shape::Square => true,
                Shape::Cross => (lo..lo + arm).contains(&r) || (lo..lo + arm).contains(&c),
            }
        })
        .collect()
}

/// Renders clip `index` of `class` for `domain`. Randomness depends only on
/// `(spec.seed, index)`, never on the domain.
pub fn render_clip(spec: &DatasetSpec, domain: &DomainSpec, class: &ClassSpec, index: u64) -> Tensor<f32> {
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let dp = domain.params();
    let mut rng = clip_rng(spec.seed, index);

    let size = spec.object_size();
    let (dr, dc) = class.direction.delta();
    let travel = class.speed * (t - 1) as f64;
    let span = |extent: usize, moving: f64| -> (f64, f64) {
        let free = extent as f64 - size as f64;
        if moving < 0.0 {
            (travel, free)
        } else if moving > 0.0 {
            (0.0, free - travel)
        } else {
            (0.0, free)
        }
    };
    let (r_lo, r_hi) = span(h, dr);
    let (c_lo, c_hi) = span(w, dc);
    let r0 = rng.random_range(r_lo..=r_hi.max(r_lo));
    let c0 = rng.random_range(c_lo..=c_hi.max(c_lo));
    let intensity = rng.random_range(0.8..1.0);
    let background = rng.random_range(0.1..0.25);
    let phase = rng.random_range(0.0..1.0);
    let drift_angle = rng.random_range(0.0..2.0 * PI);
    let drift = dp.texture_drift * rng.random_range(0.5..1.0);
    let stripe_angle = rng.random_range(0.0..PI);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mask = shape_mask(class.shape, size);
    let (ga, sa) = (dp.gradient_angle, stripe_angle);
    let mut data = vec![0f32; t * CHANNELS * h * w];
    let mut base = vec![0f64; h * w];
    for f in 0..t {
        let shift = drift * f as f64;
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (y as f64 / (h - 1) as f64 - 0.5, x as f64 / (w - 1) as f64 - 0.5);
                let ramp = dp.gradient * (u * ga.sin() + v * ga.cos());
                let proj = y as f64 * sa.sin() + x as f64 * sa.cos() - shift * (sa - drift_angle).cos();
                let stripes = dp.texture * (2.0 * PI * (dp.texture_freq * proj + phase)).sin();
                base[y * w + x] = background + ramp + stripes;
            }
        }
        let top = (r0 + dr * class.speed * f as f64).round() as isize;
        let left = (c0 + dc * class.speed * f as f64).round() as isize;
        for (i, &on) in mask.iter().enumerate() {
            let (y, x) = (top + (i / size) as isize, left + (i % size) as isize);
            if on && y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                base[y as usize * w + x as usize] = intensity;
            }
        }
        for c in 0..CHANNELS {
            let out = &mut data[(f * CHANNELS + c) * h * w..(f * CHANNELS + c + 1) * h * w];
            for (o, &b) in out.iter_mut().zip(&base) {
                let n: f64 = noise.sample(&mut rng);
                let v = dp.contrast * b + dp.brightness + dp.tint[c] + dp.noise * n;
                *o = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[t, CHANNELS, h, w], data).expect("clip extents")
}

/// One labelled clip held in memory.
#[derive(Clone, Debug)]
pub struct VideoClip {
    pub frames: Tensor<f32>,
    pub label: Option<usize>,
    pub domain: Domain,
}

/// Clip index, class and split for every clip of a dataset, in file order.
pub fn plan(spec: &DatasetSpec) -> Vec<(u64, usize, Split)> {
    let mut out = Vec::new();
    for class in 0..NUM_CLASSES {
        let n = spec.clips_for_class(class);
        let n_test = spec.test_count(class);
        for i in 0..n {
            let index = (class * spec.n_per_class + i) as u64;
            let split = if i < n_test { Split::Test } else { Split::Train };
            out.push((index, class, split));
        }
    }
    out
}

/// Writes every clip of one domain under `out_dir` plus `manifest.csv`.
pub fn generate_dataset(spec: &DatasetSpec, domain: &DomainSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&domain.gamma) {
        return Err(Error::Config(format!("gamma {} outside [0, 1]", domain.gamma)));
    }
    let classes = class_specs(spec.speed());
    let mut records = Vec::new();
    for (index, class, split) in plan(spec) {
        let clip = render_clip(spec, domain, &classes[class], index);
        let rel = format!("clips/{:05}.clip", index);
        write_clip(&out_dir.join(&rel), &clip)?;
        records.push(ClipRecord {
            path: rel,
            label: class,
            domain: domain.domain,
            split,
            seed: spec.seed,
        });
    }
    let manifest = Manifest {
        header: header_for(spec, domain),
        records,
    };
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Manifest header describing a generated domain.
pub fn header_for(spec: &DatasetSpec, domain: &DomainSpec) -> ManifestHeader {
    ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        domain: domain.domain,
        classes: NUM_CLASSES,
        frames: spec.frames,
        channels: CHANNELS,
        height: spec.height,
        width: spec.width,
        gamma: domain.gamma,
        seed: spec.seed,
        n_per_class: spec.n_per_class,
        test_fraction: spec.test_fraction,
    }
}

/// Train and test datasets rendered straight into memory; the clips are the
/// ones [`generate_dataset`] would write.
pub fn generate_splits(spec: &DatasetSpec, domain: &DomainSpec) -> Result<(Dataset, Dataset)> {
    let header = header_for(spec, domain);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (clip, split) in generate_clips(spec, domain)? {
        match split {
            Split::Train => train.push(clip),
            Split::Test => test.push(clip),
        }
    }
    Ok((Dataset::from_clips(header.clone(), train), Dataset::from_clips(header, test)))
}

/// In-memory variant of [`generate_dataset`], used by tests and benchmarks.
pub fn generate_clips(spec: &DatasetSpec, domain: &DomainSpec) -> Result<Vec<(VideoClip, Split)>> {
    spec.validate()?;
    let classes = class_specs(spec.speed());
    Ok(plan(spec)
        .into_iter()
        .map(|(index, class, split)| {
            let clip = VideoClip {
                frames: render_clip(spec, domain, &classes[class], index),
                label: Some(class),
                domain: domain.domain,
            };
            (clip, split)
        })
        .collect())
}
