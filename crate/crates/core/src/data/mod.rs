//! Synthetic two-domain video benchmark, clip files and manifests.

mod batches;
mod clipfile;
mod manifest;
mod synth;

pub use batches::{batch_iterator, BatchIter, BatchPlan, Dataset, DomainBatch};
pub use clipfile::{decode_clip, encode_clip, read_clip, read_clip_expecting, write_clip, CLIP_MAGIC, CLIP_VERSION};
pub use manifest::{ClipRecord, Domain, Manifest, ManifestHeader, Split, MANIFEST_FORMAT, MANIFEST_VERSION};
pub use synth::{
    class_specs, generate_clips, generate_dataset, generate_splits, header_for, plan, render_clip, ClassSpec, DatasetSpec, Direction,
    DomainParams, DomainSpec, Shape, VideoClip, CHANNELS, NUM_CLASSES,
};
