//! Binary checkpoint container.
//!
//! Layout: magic `AVCK1`, u64 LE header length, canonical JSON header (sorted
//! keys), u64 LE blob count, then per blob: u32 name length, UTF-8 name, u32
//! rank, u64 extents, f64 LE values.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::{Avcrn, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::train::AdamState;

const MAGIC: &[u8; 5] = b"AVCK1";
const VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Avcrn,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub adam: Option<AdamState>,
    /// Free-form training settings stored for provenance.
    pub train: Value,
}

impl Checkpoint {
    pub fn new(model: Avcrn) -> Self {
        Checkpoint {
            model,
            epoch: 0,
            val_loss: None,
            adam: None,
            train: Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(v) = self.val_loss {
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("validation loss {v} is not finite")));
            }
        }
        let header = json!({
            "format_version": VERSION,
            "config": serde_json::to_value(&self.model.config)?,
            "epoch": self.epoch,
            "val_loss": self.val_loss,
            "adam_step": self.adam.as_ref().map(|a| a.step),
            "train": self.train,
        });
        let header = serde_json::to_string(&header)?;

        let mut blobs: Vec<(String, &[usize], &[f64])> = Vec::new();
        for (name, t) in self.model.store.params() {
            blobs.push((format!("param/{name}"), t.shape(), t.data()));
        }
        for (name, t) in self.model.store.buffers() {
            blobs.push((format!("buffer/{name}"), t.shape(), t.data()));
        }
        if let Some(adam) = &self.adam {
            for (kind, map) in [("adam.m", &adam.m), ("adam.v", &adam.v)] {
                for (name, data) in map {
                    let shape = self.model.store.param(name)?.shape();
                    blobs.push((format!("{kind}/{name}"), shape, data));
                }
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(blobs.len() as u64).to_le_bytes());
        for (name, shape, data) in blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic, expected AVCK1".into()));
        }
        let hlen = r.u64()? as usize;
        let header: Value = serde_json::from_slice(r.take(hlen)?)?;
        let version = header["format_version"].as_u64();
        if version != Some(VERSION) {
            return Err(Error::Checkpoint(format!("unsupported format version {version:?}")));
        }
        let config: ModelConfig = serde_json::from_value(header["config"].clone())?;
        let epoch = header["epoch"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("header lacks epoch".into()))? as usize;
        let val_loss = header["val_loss"].as_f64();
        let adam_step = header["adam_step"].as_u64();

        // Build a fresh model to learn the expected names and shapes.
        let mut model = Avcrn::new(config, 0)?;
        let mut store = ParamStore::new();
        let mut adam = adam_step.map(|step| AdamState {
            step,
            ..AdamState::default()
        });
        let count = r.u64()?;
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for chunk in r.take(n * 8)?.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
            let (kind, key) = name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("malformed blob name {name}")))?;
            match kind {
                "param" => {
                    let expect = model.store.param(key)?;
                    if expect.shape() != shape.as_slice() {
                        return Err(Error::Checkpoint(format!(
                            "{key}: stored shape {shape:?}, config implies {:?}",
                            expect.shape()
                        )));
                    }
                    store.insert_param(key, Tensor::new(&shape, data)?);
                }
                "buffer" => {
                    let expect = model.store.buffer(key)?;
                    if expect.shape() != shape.as_slice() {
                        return Err(Error::Checkpoint(format!("{key}: stored shape {shape:?}")));
                    }
                    store.insert_buffer(key, Tensor::new(&shape, data)?);
                }
                "adam.m" | "adam.v" => {
                    let a = adam
                        .as_mut()
                        .ok_or_else(|| Error::Checkpoint("optimizer blob without adam_step".into()))?;
                    let map = if kind == "adam.m" { &mut a.m } else { &mut a.v };
                    map.insert(key.to_string(), data);
                }
                _ => return Err(Error::Checkpoint(format!("unknown blob kind {kind}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last blob".into()));
        }
        for name in model.store.param_names() {
            store.param(&name)?;
        }
        for (name, _) in model.store.buffers() {
            store.buffer(name)?;
        }
        model.store = store;
        Ok(Checkpoint {
            model,
            epoch,
            val_loss,
            adam,
            train: header["train"].clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
