//! Binary checkpoint container with named parameter groups.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "GLCNETCK"
//! version      u32      1
//! epoch        u64
//! loss         f64
//! seed         u64
//! config_hash  u32 length + UTF-8 bytes
//! entries      u32 count, then per entry: u32 key length, key, u32 value length, value
//! groups       u32 count, then per group:
//!   name       u16 length + UTF-8 bytes
//!   tensors    u32 count, then per tensor:
//!     name     u16 length + UTF-8 bytes
//!     dtype    u8 (1 = f32)
//!     ndim     u8, then ndim x u64 dims
//!     payload  u64 byte length + raw little-endian values
//!     checksum 8 bytes: leading bytes of SHA-256(payload)
//! trailer      32 bytes: SHA-256 of every preceding byte
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{SegmentationNet, ALL_GROUPS, ENCODER};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GLCNETCK";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupBlob {
    pub name: String,
    pub tensors: Vec<TensorBlob>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub loss: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Free-form entries, e.g. the serialized architecture and run config.
    pub entries: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub meta: CheckpointMeta,
    pub groups: Vec<GroupBlob>,
}

/// Which groups a partial load took from the bundle, and which tensors were
/// kept at their fresh values because the input band count differs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadReport {
    pub loaded_groups: Vec<String>,
    pub kept_fresh: Vec<String>,
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

impl CheckpointBundle {
    pub fn from_model(model: &SegmentationNet, meta: CheckpointMeta) -> Self {
        let mut groups: Vec<GroupBlob> = Vec::new();
        for p in model.store.params() {
            let tensor = TensorBlob {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            };
            match groups.iter_mut().find(|g| g.name == p.group) {
                Some(g) => g.tensors.push(tensor),
                None => groups.push(GroupBlob {
                    name: p.group.clone(),
                    tensors: vec![tensor],
                }),
            }
        }
        Self { meta, groups }
    }

    pub fn group(&self, name: &str) -> Option<&GroupBlob> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.meta.epoch.to_le_bytes());
        out.extend_from_slice(&self.meta.loss.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        put_str32(&mut out, &self.meta.config_hash);
        out.extend_from_slice(&(self.meta.entries.len() as u32).to_le_bytes());
        for (k, v) in &self.meta.entries {
            put_str32(&mut out, k);
            put_str32(&mut out, v);
        }
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            put_str16(&mut out, &g.name);
            out.extend_from_slice(&(g.tensors.len() as u32).to_le_bytes());
            for t in &g.tensors {
                put_str16(&mut out, &t.name);
                out.push(DTYPE_F32);
                out.push(t.shape.len() as u8);
                for &d in &t.shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                let payload: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
                out.extend_from_slice(&payload);
                out.extend_from_slice(&checksum(&payload));
            }
        }
        let trailer = Sha256::digest(&out);
        out.extend_from_slice(&trailer);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::CorruptCheckpoint("file too short".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::CorruptCheckpoint("file checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
        }
        let epoch = r.u64()?;
        let loss = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let seed = r.u64()?;
        let config_hash = r.str32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str32()?;
            let v = r.str32()?;
            entries.insert(k, v);
        }
        let mut groups = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.str16()?;
            let count = r.u32()?;
            let mut tensors = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let tname = r.str16()?;
                let dtype = r.take(1)?[0];
                if dtype != DTYPE_F32 {
                    return Err(Error::CorruptCheckpoint(format!("{tname}: unknown dtype {dtype}")));
                }
                let ndim = r.take(1)?[0] as usize;
                let mut shape = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    shape.push(r.u64()? as usize);
                }
                let len = r.u64()? as usize;
                let payload = r.take(len)?;
                let sum = r.take(8)?;
                if checksum(payload) != sum {
                    return Err(Error::CorruptCheckpoint(format!("{tname}: tensor checksum mismatch")));
                }
                if len != 4 * shape.iter().product::<usize>() {
                    return Err(Error::CorruptCheckpoint(format!("{tname}: payload does not match shape")));
                }
                let data = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                tensors.push(TensorBlob { name: tname, shape, data });
            }
            groups.push(GroupBlob { name, tensors });
        }
        if r.pos != body.len() {
            return Err(Error::CorruptCheckpoint("trailing bytes".into()));
        }
        Ok(Self {
            meta: CheckpointMeta {
                epoch,
                loss,
                seed,
                config_hash,
                entries,
            },
            groups,
        })
    }

    /// Write to `path` via a temporary file in the same directory and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_str32(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str16(&mut self) -> Result<String> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("invalid utf-8".into()))
    }

    fn str32(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("invalid utf-8".into()))
    }
}

/// Parse a comma separated group list such as `encoder,decoder.1,decoder.2`.
pub fn parse_groups(spec: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if part == "none" {
            continue;
        }
        if !ALL_GROUPS.contains(&part) {
            return Err(Error::UnknownGroup(part.to_string()));
        }
        if !out.iter().any(|g: &String| g == part) {
            out.push(part.to_string());
        }
    }
    Ok(out)
}

impl SegmentationNet {
    /// Copy the listed groups from `bundle`; everything else keeps its current
    /// (freshly initialized) values. When the bundle was trained on a different
    /// band count, the first encoder convolution stays fresh.
    pub fn load_groups(&mut self, bundle: &CheckpointBundle, groups: &[String]) -> Result<LoadReport> {
        let mut report = LoadReport::default();
        let wanted: BTreeSet<&str> = groups.iter().map(String::as_str).collect();
        for g in &wanted {
            if !ALL_GROUPS.contains(g) {
                return Err(Error::UnknownGroup(g.to_string()));
            }
            if bundle.group(g).is_none() {
                return Err(Error::UnknownGroup(format!("{g} (not present in checkpoint)")));
            }
        }
        // Validate everything before mutating.
        let mut plan = Vec::new();
        for (i, p) in self.store.params().iter().enumerate() {
            if !wanted.contains(p.group.as_str()) {
                continue;
            }
            let blob = bundle
                .group(&p.group)
                .and_then(|g| g.tensors.iter().find(|t| t.name == p.name))
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks tensor {}", p.name)))?;
            if blob.shape != p.shape {
                let first_conv = p.group == ENCODER && p.name == "encoder.block1.conv.weight";
                if first_conv && blob.shape.len() == 4 && blob.shape[0] == p.shape[0] {
                    log::warn!(
                        "{}: checkpoint has {} input bands, model has {}; keeping fresh weights",
                        p.name,
                        blob.shape[1],
                        p.shape[1]
                    );
                    report.kept_fresh.push(p.name.clone());
                    continue;
                }
                return Err(Error::Shape(format!(
                    "{}: checkpoint shape {:?} vs model {:?}",
                    p.name, blob.shape, p.shape
                )));
            }
            plan.push((i, blob));
        }
        for (i, blob) in plan {
            self.store.params_mut()[i].data.copy_from_slice(&blob.data);
        }
        report.loaded_groups = ALL_GROUPS.iter().filter(|g| wanted.contains(**g)).map(|g| g.to_string()).collect();
        Ok(report)
    }
}
