//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SLGCKPT\0"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen     modules, signatures, parameter names and shapes, categories, flags
//! count    u64      number of f64 values that follow
//! values   8*count  parameters in header order, row-major
//! digest   32       SHA-256 of everything above
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConceptModule, ConceptRegistry, FeatureDims, GroundingError, ModuleKind};
use crate::lang::{Categories, ConceptSignature};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SLGCKPT\0";

#[derive(Serialize, Deserialize)]
struct Header {
    dims: FeatureDims,
    categories: Categories,
    viewpoint: BTreeSet<String>,
    aliases: BTreeMap<String, String>,
    modules: Vec<ModuleHeader>,
}

#[derive(Serialize, Deserialize)]
struct ModuleHeader {
    signature: ConceptSignature,
    kind: ModuleKind,
    input_dim: usize,
    params: Vec<(String, Vec<usize>)>,
}

impl ConceptRegistry {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dims: self.dims,
            categories: self.categories.clone(),
            viewpoint: self.viewpoint.clone(),
            aliases: self.aliases.clone(),
            modules: self
                .modules
                .values()
                .map(|m| ModuleHeader {
                    signature: m.signature.clone(),
                    kind: m.kind,
                    input_dim: m.input_dim,
                    params: m
                        .params
                        .iter()
                        .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let values: Vec<f64> = self
            .modules
            .values()
            .flat_map(|m| m.params.values().flat_map(|t| t.data().iter().copied()))
            .collect();
        let mut out = Vec::with_capacity(60 + json.len() + values.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroundingError> {
        let corrupt = |m: &str| GroundingError::CorruptFile(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(GroundingError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 12 + 8 + 8 + 32 {
            return Err(corrupt("truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut cursor = Cursor { buf: body, pos: 12 };
        let hlen = cursor.u64()? as usize;
        let header: Header = serde_json::from_slice(cursor.take(hlen)?)
            .map_err(|e| corrupt(&format!("header: {e}")))?;
        let count = cursor.u64()? as usize;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
        }
        if cursor.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let mut values = values.into_iter();
        let mut modules = BTreeMap::new();
        for mh in header.modules {
            let mut params = BTreeMap::new();
            for (name, shape) in mh.params {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = values.by_ref().take(n).collect();
                if data.len() != n {
                    return Err(corrupt("parameter data shorter than header"));
                }
                let t = Tensor::new(shape, data).map_err(|e| corrupt(&e.to_string()))?;
                params.insert(name, t);
            }
            modules.insert(
                mh.signature.name.clone(),
                ConceptModule {
                    signature: mh.signature,
                    kind: mh.kind,
                    input_dim: mh.input_dim,
                    params,
                },
            );
        }
        if values.next().is_some() {
            return Err(corrupt("parameter data longer than header"));
        }
        Ok(Self {
            dims: header.dims,
            modules,
            categories: header.categories,
            viewpoint: header.viewpoint,
            aliases: header.aliases,
        })
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), GroundingError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GroundingError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GroundingError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| GroundingError::CorruptFile("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, GroundingError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
