//! In-memory datasets and paired source/target batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::clipfile::read_clip_expecting;
use super::manifest::{base_dir, Domain, Manifest, ManifestHeader, Split};
use super::synth::VideoClip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clips of one domain and split, loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub header: ManifestHeader,
    pub clips: Vec<VideoClip>,
}

impl Dataset {
    pub fn load(manifest_path: &Path, split: Split) -> Result<Self> {
        let m = Manifest::read(manifest_path)?;
        Self::from_manifest(&m, &base_dir(manifest_path), split)
    }

    pub fn from_manifest(m: &Manifest, dir: &Path, split: Split) -> Result<Self> {
        let shape = m.header.clip_shape();
        let clips = m
            .split(split)
            .map(|r| {
                Ok(VideoClip {
                    frames: read_clip_expecting(&dir.join(&r.path), &shape)?,
                    label: Some(r.label),
                    domain: r.domain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            header: m.header.clone(),
            clips,
        })
    }

    pub fn from_clips(header: ManifestHeader, clips: Vec<VideoClip>) -> Self {
        Self { header, clips }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.header.domain
    }

    /// Stacks the selected clips into `[b, t, c, h, w]`.
    pub fn stack(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let parts = indices
            .iter()
            .map(|&i| {
                self.clips
                    .get(i)
                    .map(|c| &c.frames)
                    .ok_or(Error::Index { index: i, bound: self.clips.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&parts)
    }

    /// Labels of the selected clips; every clip must carry one.
    pub fn labels(&self, indices: &[usize]) -> Result<Vec<usize>> {
        indices
            .iter()
            .map(|&i| {
                self.clips[i]
                    .label
                    .ok_or_else(|| Error::Manifest(format!("clip {i} has no label")))
            })
            .collect()
    }
}

/// A labelled source sub-batch paired with an unlabelled target sub-batch.
#[derive(Clone, Debug)]
pub struct DomainBatch {
    pub source: Tensor<f32>,
    pub labels: Vec<usize>,
    pub target: Tensor<f32>,
    pub source_indices: Vec<usize>,
    pub target_indices: Vec<usize>,
}

/// Seeded epoch orders over two datasets.
///
/// Each epoch draws an independent permutation of both index sets and pairs
/// them position by position; the ragged tail is dropped.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    source_len: usize,
    target_len: usize,
    batch: usize,
    seed: u64,
    shuffle: bool,
}

impl BatchPlan {
    pub fn new(source_len: usize, target_len: usize, batch: usize, seed: u64, shuffle: bool) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if source_len == 0 || target_len == 0 {
            return Err(Error::Manifest("cannot batch an empty dataset".into()));
        }
        let plan = Self {
            source_len,
            target_len,
            batch,
            seed,
            shuffle,
        };
        if plan.batches_per_epoch() == 0 {
            return Err(Error::Config(format!(
                "batch size {batch} exceeds the smaller dataset ({} clips)",
                source_len.min(target_len)
            )));
        }
        Ok(plan)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.source_len.min(self.target_len) / self.batch
    }

    fn order(&self, len: usize, epoch: u64, stream: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..len).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch * 2 + stream);
            idx.shuffle(&mut rng);
        }
        idx
    }

    /// Index pairs for every batch of `epoch`.
    pub fn epoch(&self, epoch: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
        let s = self.order(self.source_len, epoch, 0);
        let t = self.order(self.target_len, epoch, 1);
        (0..self.batches_per_epoch())
            .map(|i| {
                let r = i * self.batch..(i + 1) * self.batch;
                (s[r.clone()].to_vec(), t[r].to_vec())
            })
            .collect()
    }

    /// Indices for global batch number `n`.
    pub fn batch(&self, n: u64) -> (Vec<usize>, Vec<usize>) {
        let per = self.batches_per_epoch() as u64;
        let mut e = self.epoch(n / per);
        e.swap_remove((n % per) as usize)
    }
}

/// Endless stream of paired batches.
pub struct BatchIter<'a> {
    source: &'a Dataset,
    target: &'a Dataset,
    plan: BatchPlan,
    epoch: u64,
    queue: std::vec::IntoIter<(Vec<usize>, Vec<usize>)>,
}

pub fn batch_iterator<'a>(
    source: &'a Dataset,
    target: &'a Dataset,
    batch: usize,
    seed: u64,
    shuffle: bool,
) -> Result<BatchIter<'a>> {
    let plan = BatchPlan::new(source.len(), target.len(), batch, seed, shuffle)?;
    let queue = plan.epoch(0).into_iter();
    Ok(BatchIter {
        source,
        target,
        plan,
        epoch: 0,
        queue,
    })
}

impl BatchIter<'_> {
    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<DomainBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        let (si, ti) = match self.queue.next() {
            Some(x) => x,
            None => {
                self.epoch += 1;
                self.queue = self.plan.epoch(self.epoch).into_iter();
                self.queue.next()?
            }
        };
        let make = || -> Result<DomainBatch> {
            Ok(DomainBatch {
                source: self.source.stack(&si)?,
                labels: self.source.labels(&si)?,
                target: self.target.stack(&ti)?,
                source_indices: si.clone(),
                target_indices: ti.clone(),
            })
        };
        Some(make())
    }
}
