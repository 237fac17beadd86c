//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "PCQACKPT"
//! version  u32      currently 1
//! hlen     u64      length of the JSON header in bytes
//! header   hlen     UTF-8 JSON, see [`Header`]
//! data     ...      concatenated f64 arrays; each array's `offset` is
//!                   counted in bytes from the start of this section
//! ```
//!
//! Arrays are grouped into named sections (for example `query`, `key`,
//! `optimizer.velocity`); an array's full name is `section/param`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"PCQACKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    /// Free-form configuration snapshot sufficient to rebuild the model.
    pub config: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    pub config: serde_json::Value,
    pub sections: Vec<(String, ParamSet)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            seed,
            step: 0,
            epoch: 0,
            config,
            sections: Vec::new(),
        }
    }

    pub fn add_section(&mut self, name: impl Into<String>, params: ParamSet) {
        self.sections.push((name.into(), params));
    }

    pub fn section(&self, name: &str) -> Result<&ParamSet> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut offset = 0u64;
        for (section, params) in &self.sections {
            if section.contains('/') {
                return Err(Error::Checkpoint(format!("section name `{section}` contains '/'")));
            }
            for (name, t) in params.iter() {
                arrays.push(ArrayEntry {
                    name: format!("{section}/{name}"),
                    shape: t.shape.clone(),
                    offset,
                    dtype: "f64".into(),
                });
                offset += 8 * t.len() as u64;
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            seed: self.seed,
            step: self.step,
            epoch: self.epoch,
            config: self.config.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).expect("vec write");
        out.write_u64::<LittleEndian>(json.len() as u64).expect("vec write");
        out.extend_from_slice(&json);
        for (_, params) in &self.sections {
            for t in params.tensors() {
                for &v in &t.data {
                    out.write_f64::<LittleEndian>(v).expect("vec write");
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = bytes.read_u32::<LittleEndian>().map_err(|_| bad("truncated version"))?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = bytes.read_u64::<LittleEndian>().map_err(|_| bad("truncated header length"))? as usize;
        if bytes.len() < hlen {
            return Err(bad("truncated header"));
        }
        let (hbytes, data) = bytes.split_at(hlen);
        let header: Header = serde_json::from_slice(hbytes).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut sections: Vec<(String, ParamSet)> = Vec::new();
        for a in &header.arrays {
            if a.dtype != "f64" {
                return Err(Error::Checkpoint(format!("array `{}` has unsupported dtype {}", a.name, a.dtype)));
            }
            let (section, name) = a
                .name
                .split_once('/')
                .ok_or_else(|| Error::Checkpoint(format!("array name `{}` lacks a section", a.name)))?;
            let n: usize = a.shape.iter().product();
            let start = a.offset as usize;
            let end = start + 8 * n;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("array `{}` exceeds data section", a.name)));
            }
            let mut slice = &data[start..end];
            let mut values = vec![0.0; n];
            slice.read_f64_into::<LittleEndian>(&mut values).expect("length checked");
            let tensor = Tensor::from_vec(&a.shape, values)?;
            match sections.iter_mut().find(|(s, _)| s == section) {
                Some((_, p)) => {
                    p.push(name, tensor);
                }
                None => {
                    let mut p = ParamSet::new();
                    p.push(name, tensor);
                    sections.push((section.to_string(), p));
                }
            }
        }
        Ok(Checkpoint {
            kind: header.kind,
            seed: header.seed,
            step: header.step,
            epoch: header.epoch,
            config: header.config,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
