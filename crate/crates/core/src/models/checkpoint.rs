//! Checkpoint file format.
//!
//! ```text
//! "AMVC" | version: u16 | record count: u32 | records... | crc32: u32
//! record = name_len: u16 | name | dtype: u8 | rank: u8 | extents: u32 × rank | payload
//! ```
//!
//! All integers and payloads are little-endian; the CRC covers the record bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bundle::{ModelBundle, ModelConfig, Net};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::tensor::{AdamWConfig, DType, OptimizerState, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"AMVC";
pub const VERSION: u16 = 1;

/// One named array in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl Record {
    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut payload);
        }
        Self {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            payload,
        }
    }

    fn from_u64(name: impl Into<String>, values: &[u64]) -> Self {
        Self {
            name: name.into(),
            dtype: DType::U64,
            shape: vec![values.len()],
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            name: name.into(),
            dtype: DType::U8,
            shape: vec![bytes.len().max(1)],
            payload: if bytes.is_empty() { vec![0] } else { bytes.to_vec() },
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Contract(format!(
                "record {} has dtype {:?}, expected {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        let size = T::DTYPE.size();
        Tensor::new(
            &self.shape,
            self.payload.chunks_exact(size).map(T::read_le).collect(),
        )
    }

    fn to_u64(&self) -> Result<Vec<u64>> {
        if self.dtype != DType::U64 {
            return Err(Error::Contract(format!("record {} is not u64", self.name)));
        }
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn encode_records(records: &[Record]) -> Vec<u8> {
    let mut body = Vec::new();
    for r in records {
        body.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
        body.extend_from_slice(r.name.as_bytes());
        body.push(r.dtype as u8);
        body.push(r.shape.len() as u8);
        for &e in &r.shape {
            body.extend_from_slice(&(e as u32).to_le_bytes());
        }
        body.extend_from_slice(&r.payload);
    }
    let mut out = Vec::with_capacity(body.len() + 14);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

pub fn decode_records(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let mut rd = Reader::new(bytes, path);
    if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    let magic = rd.take(4).map_err(|_| Error::BadMagic(path.to_path_buf()))?;
    if magic != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let version = rd.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: VERSION,
        });
    }
    let count = rd.u32()? as usize;
    let body_start = rd.pos();
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = rd.u16()? as usize;
        let name = std::str::from_utf8(rd.take(name_len)?)
            .map_err(|_| rd.format("record name is not UTF-8"))?
            .to_string();
        let tag = rd.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| rd.format(format!("unknown dtype tag {tag}")))?;
        let rank = rd.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(rd.u32()? as usize);
        }
        if rank == 0 || shape.contains(&0) {
            return Err(rd.format(format!("record {name} has degenerate extents {shape:?}")));
        }
        let n: usize = shape.iter().product();
        let payload = rd.take(n * dtype.size())?.to_vec();
        records.push(Record {
            name,
            dtype,
            shape,
            payload,
        });
    }
    let body_end = rd.pos();
    let stored = rd.u32()?;
    if rd.remaining() != 0 {
        return Err(rd.format("trailing bytes after checksum"));
    }
    let computed = crc32fast::hash(&bytes[body_start..body_end]);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    stages: Vec<String>,
}

fn adam_to_array(c: &AdamWConfig) -> [f64; 5] {
    [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay]
}

pub fn bundle_records<T: Real>(bundle: &ModelBundle<T>) -> Result<Vec<Record>> {
    let meta = serde_json::to_vec(&Meta {
        model: bundle.config().clone(),
        stages: bundle.stages.clone(),
    })
    .map_err(|e| Error::Contract(format!("meta serialization: {e}")))?;
    let mut out = vec![Record::from_bytes("meta", &meta)];
    for net in Net::ALL {
        let ps = bundle.params(net);
        let st = bundle.optim(net);
        for (name, t) in ps.names().iter().zip(ps.tensors()) {
            out.push(Record::from_tensor(format!("{}.{name}", net.name()), t));
        }
        let conf = Tensor::<f64>::new(&[5], adam_to_array(&st.config).to_vec())?;
        out.push(Record::from_tensor(format!("{}.adam.config", net.name()), &conf));
        out.push(Record::from_u64(format!("{}.adam.step", net.name()), &[st.step]));
        for (name, m) in ps.names().iter().zip(&st.m) {
            out.push(Record::from_tensor(format!("{}.adam.m.{name}", net.name()), m));
        }
        for (name, v) in ps.names().iter().zip(&st.v) {
            out.push(Record::from_tensor(format!("{}.adam.v.{name}", net.name()), v));
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(bundle: &ModelBundle<T>, path: &Path) -> Result<()> {
    binio::write_file(path, &encode_records(&bundle_records(bundle)?))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelBundle<T>> {
    let bytes = binio::read_file(path)?;
    let records = decode_records(&bytes, path)?;
    bundle_from_records(&records, path)
}

pub fn bundle_from_records<T: Real>(records: &[Record], path: &Path) -> Result<ModelBundle<T>> {
    let fmt = |d: String| Error::Format {
        path: path.to_path_buf(),
        detail: d,
    };
    let mut iter = records.iter();
    let meta_rec = iter
        .next()
        .filter(|r| r.name == "meta" && r.dtype == DType::U8)
        .ok_or_else(|| fmt("missing meta record".into()))?;
    let meta: Meta = serde_json::from_slice(&meta_rec.payload).map_err(|e| fmt(format!("meta: {e}")))?;
    let mut bundle = ModelBundle::<T>::new(meta.model, AdamWConfig::default(), 0)?;
    bundle.stages = meta.stages;

    let mut next = |expected: &str| -> Result<&Record> {
        let r = iter
            .next()
            .ok_or_else(|| fmt(format!("missing record {expected}")))?;
        if r.name != expected {
            return Err(fmt(format!("expected record {expected}, found {}", r.name)));
        }
        Ok(r)
    };
    let (params, optim) = bundle.parts_mut();
    for (i, net) in Net::ALL.into_iter().enumerate() {
        let names = params[i].names().to_vec();
        let take = |r: &Record, like: &Tensor<T>| -> Result<Tensor<T>> {
            let t = r.to_tensor::<T>()?;
            if t.shape() != like.shape() {
                return Err(Error::shape("checkpoint", like.shape(), t.shape()));
            }
            Ok(t)
        };
        for (j, name) in names.iter().enumerate() {
            let r = next(&format!("{}.{name}", net.name()))?;
            params[i].tensors_mut()[j] = take(r, &params[i].tensors()[j])?;
        }
        let c = next(&format!("{}.adam.config", net.name()))?.to_tensor::<f64>()?;
        let c = c.data();
        if c.len() != 5 {
            return Err(fmt("adam config needs 5 values".into()));
        }
        let step = next(&format!("{}.adam.step", net.name()))?.to_u64()?;
        let mut st = OptimizerState {
            config: AdamWConfig {
                lr: c[0],
                beta1: c[1],
                beta2: c[2],
                eps: c[3],
                weight_decay: c[4],
            },
            step: *step.first().ok_or_else(|| fmt("empty step record".into()))?,
            m: Vec::with_capacity(names.len()),
            v: Vec::with_capacity(names.len()),
        };
        for (j, name) in names.iter().enumerate() {
            let r = next(&format!("{}.adam.m.{name}", net.name()))?;
            st.m.push(take(r, &params[i].tensors()[j])?);
        }
        for (j, name) in names.iter().enumerate() {
            let r = next(&format!("{}.adam.v.{name}", net.name()))?;
            st.v.push(take(r, &params[i].tensors()[j])?);
        }
        optim[i] = st;
    }
    if let Some(extra) = iter.next() {
        return Err(fmt(format!("unexpected record {}", extra.name)));
    }
    Ok(bundle)
}
