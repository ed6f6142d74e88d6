//! Dataset manifests: a JSON header line followed by one CSV record per clip.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "amvc-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            _ => Err(Error::Manifest(format!("unknown domain {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Manifest(format!("unknown split {s:?}"))),
        }
    }
}

/// Dataset-level metadata stored on the first manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub domain: Domain,
    pub classes: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub gamma: f64,
    pub seed: u64,
    pub n_per_class: usize,
    pub test_fraction: f64,
}

impl ManifestHeader {
    pub fn clip_shape(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: usize,
    pub domain: Domain,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn to_text(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header).map_err(|e| Error::Manifest(e.to_string()))?;
        out.push('\n');
        for r in &self.records {
            if r.path.contains([',', '\n']) {
                return Err(Error::Manifest(format!("path {:?} cannot be stored in a manifest", r.path)));
            }
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.path,
                r.label,
                r.domain,
                r.split.as_str(),
                r.seed
            ));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| Error::Manifest("empty manifest".into()))?;
        let header: ManifestHeader =
            serde_json::from_str(head).map_err(|e| Error::Manifest(format!("header: {e}")))?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest {} v{}",
                header.format, header.version
            )));
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let at = |m: String| Error::Manifest(format!("line {}: {m}", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(at(format!("expected 5 fields, found {}", fields.len())));
            }
            let label: usize = fields[1].parse().map_err(|_| at(format!("bad label {:?}", fields[1])))?;
            if label >= header.classes {
                return Err(at(format!("label {label} outside [0, {})", header.classes)));
            }
            let rec = ClipRecord {
                path: fields[0].to_string(),
                label,
                domain: fields[2].parse().map_err(|e: Error| at(e.to_string()))?,
                split: fields[3].parse().map_err(|e: Error| at(e.to_string()))?,
                seed: fields[4].parse().map_err(|_| at(format!("bad seed {:?}", fields[4])))?,
            };
            if !seen.insert(rec.path.clone()) {
                return Err(at(format!("clip {} listed twice", rec.path)));
            }
            records.push(rec);
        }
        Ok(Self { header, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::binio::write_file(path, self.to_text()?.as_bytes())
    }

    /// Reads a manifest and checks that every listed clip exists.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::parse(&text)?;
        let dir = base_dir(path);
        for r in &m.records {
            let p = dir.join(&r.path);
            if !p.is_file() {
                return Err(Error::Manifest(format!("clip {} does not exist", p.display())));
            }
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub(crate) fn base_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
