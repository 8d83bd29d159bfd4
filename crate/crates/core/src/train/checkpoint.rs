//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `TCNNCKPT` | u32 version | u32 len + architecture config text |
//! 32-byte vocabulary hash | u64 epoch | u8 precision tag | u8 has-optimizer |
//! u64 optimizer step | u32 record count | records.
//! A record is u32 name length, name bytes, u32 rank, u64 dims, raw values.
//! Optimizer moments are stored as records named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::models::{ArchSpec, Level, ModelGraph};
use crate::tensor::{Precision, Scalar, Tensor};
use crate::train::AdamState;

pub const MAGIC: &[u8; 8] = b"TCNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ArchSpec,
    pub vocab_hash: [u8; 32],
    /// Completed epochs.
    pub epoch: u64,
    /// Every tensor of the model's parameter store, in store order.
    pub tensors: Vec<(String, Tensor<T>)>,
    pub adam: Option<AdamState<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(
        model: &ModelGraph<T>,
        vocab_hash: [u8; 32],
        epoch: u64,
        adam: Option<&AdamState<T>>,
    ) -> Self {
        Self {
            spec: model.spec().clone(),
            vocab_hash,
            epoch,
            tensors: model
                .params()
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
            adam: adam.cloned(),
        }
    }

    /// Rebuilds the model and overwrites every tensor with the stored values.
    pub fn restore(&self) -> Result<ModelGraph<T>> {
        let (vocab_size, table) = match self.spec.level {
            Level::Char => (0, None),
            Level::Word => {
                let (_, t) = self
                    .tensors
                    .iter()
                    .find(|(n, _)| n == "embedding")
                    .ok_or_else(|| {
                        Error::Checkpoint("word model without an 'embedding' tensor".into())
                    })?;
                (t.dim(1), Some(t.clone()))
            }
        };
        let mut model = ModelGraph::build(&self.spec, vocab_size, table, 0)?;
        load_store(model.params_mut(), &self.tensors)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.spec.to_config();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.vocab_hash);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.push(T::PRECISION.tag());
        out.push(self.adam.is_some() as u8);
        out.extend_from_slice(&self.adam.as_ref().map_or(0, |a| a.t).to_le_bytes());
        let mut records: Vec<(String, &Tensor<T>)> =
            self.tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        if let Some(adam) = &self.adam {
            for ((name, _), m) in self.tensors.iter().zip(&adam.m) {
                records.push((format!("adam.m.{name}"), m));
            }
            for ((name, _), v) in self.tensors.iter().zip(&adam.v) {
                records.push((format!("adam.v.{name}"), v));
            }
        }
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = r.header()?;
        if header.precision != T::PRECISION {
            return Err(Error::Checkpoint(format!(
                "stored in {} precision, requested {}",
                header.precision,
                T::PRECISION
            )));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(
                    usize::try_from(r.u64()?)
                        .map_err(|_| Error::Checkpoint("dimension overflow".into()))?,
                );
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
            let width = T::PRECISION.tag() as usize;
            let raw = r.take(
                numel
                    .checked_mul(width)
                    .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            )?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            records.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut tensors = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, t) in records {
            if let Some(n) = name.strip_prefix("adam.m.") {
                m.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix("adam.v.") {
                v.push((n.to_string(), t));
            } else {
                tensors.push((name, t));
            }
        }
        let adam = if header.has_adam {
            let ordered =
                |moments: Vec<(String, Tensor<T>)>, which: &str| -> Result<Vec<Tensor<T>>> {
                    if moments.len() != tensors.len()
                        || moments.iter().zip(&tensors).any(|((a, _), (b, _))| a != b)
                    {
                        return Err(Error::Checkpoint(format!(
                            "optimizer {which} moments do not match the parameters"
                        )));
                    }
                    Ok(moments.into_iter().map(|(_, t)| t).collect())
                };
            Some(AdamState {
                m: ordered(m, "first")?,
                v: ordered(v, "second")?,
                t: header.adam_t,
            })
        } else {
            None
        };
        Ok(Self {
            spec: header.spec,
            vocab_hash: header.vocab_hash,
            epoch: header.epoch,
            tensors,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Fields readable without knowing the value precision.
#[derive(Clone, Debug)]
pub struct CheckpointHeader {
    pub version: u32,
    pub spec: ArchSpec,
    pub vocab_hash: [u8; 32],
    pub epoch: u64,
    pub precision: Precision,
    pub has_adam: bool,
    pub adam_t: u64,
}

pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Reader {
        bytes: &bytes,
        pos: 0,
    }
    .header()
}

/// Copies stored tensors into `store`; names and shapes must match exactly.
pub fn load_store<T: Scalar>(
    store: &mut ParamStore<T>,
    tensors: &[(String, Tensor<T>)],
) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("model has no tensor named '{name}'")))?;
        store
            .set_value(id, t.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated file: wanted {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn header(&mut self) -> Result<CheckpointHeader> {
        if self.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "bad magic bytes; not a checkpoint".into(),
            ));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let len = self.u32()? as usize;
        let config = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("architecture config is not UTF-8".into()))?;
        let spec = ArchSpec::from_config(config)?;
        let vocab_hash: [u8; 32] = self.take(32)?.try_into().expect("32 bytes");
        let epoch = self.u64()?;
        let tag = self.u8()?;
        let precision = Precision::from_tag(tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown precision tag {tag}")))?;
        let has_adam = match self.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad optimizer flag {b}"))),
        };
        let adam_t = self.u64()?;
        Ok(CheckpointHeader {
            version,
            spec,
            vocab_hash,
            epoch,
            precision,
            has_adam,
            adam_t,
        })
    }
}
