//! Parameter snapshot files.
//!
//! Layout: the 8-byte magic `UNRLSNP1`, the header length as a little-endian
//! `u64`, a JSON header, then every tensor as raw little-endian `f64` in
//! header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetworkSpec, UnrolledNetwork};
use crate::error::{Error, Result};
use crate::tensor::{RealTensor, Value};

const MAGIC: &[u8; 8] = b"UNRLSNP1";
pub const ROLE_PARAM: &str = "param";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EntryHeader {
    module: usize,
    layer: usize,
    role: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    #[serde(default)]
    meta: serde_json::Value,
    entries: Vec<EntryHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotEntry {
    pub module: usize,
    /// Position within the module's parameter list.
    pub layer: usize,
    /// `param` for network weights; other roles carry optimizer state.
    pub role: String,
    pub tensor: RealTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub spec: NetworkSpec,
    pub meta: serde_json::Value,
    pub entries: Vec<SnapshotEntry>,
}

impl Snapshot {
    pub fn from_network(net: &UnrolledNetwork) -> Result<Self> {
        let mut entries = Vec::new();
        for module in net.modules() {
            for (layer, p) in module.params().into_iter().enumerate() {
                entries.push(SnapshotEntry {
                    module: module.index,
                    layer,
                    role: ROLE_PARAM.into(),
                    tensor: p.value().as_real()?.clone(),
                });
            }
        }
        Ok(Self {
            spec: net.spec.clone(),
            meta: serde_json::Value::Null,
            entries,
        })
    }

    /// Rebuild the network: architecture from the stored `NetworkSpec`, values from the
    /// `param` entries.
    pub fn to_network(&self) -> Result<UnrolledNetwork> {
        let net = UnrolledNetwork::new(self.spec.clone())?;
        let mut modules = net.modules();
        for m in &mut modules {
            let index = m.index;
            let mut params = m.params_mut();
            let mut seen = 0;
            for e in self.entries.iter().filter(|e| e.module == index && e.role == ROLE_PARAM) {
                let slot = params.get_mut(e.layer).ok_or_else(|| {
                    Error::Format(format!("module {index} has no layer {}", e.layer))
                })?;
                slot.set_value(Value::Real(e.tensor.clone()))?;
                seen += 1;
            }
            if seen != params.len() {
                return Err(Error::Format(format!(
                    "module {index}: snapshot holds {seen} of {} parameters",
                    params.len()
                )));
            }
        }
        UnrolledNetwork::from_modules(self.spec.clone(), modules)
    }

    pub fn entries_with_role<'s>(&'s self, role: &'s str) -> impl Iterator<Item = &'s SnapshotEntry> + 's {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            spec: self.spec.clone(),
            meta: self.meta.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryHeader {
                    module: e.module,
                    layer: e.layer,
                    role: e.role.clone(),
                    shape: e.tensor.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.entries.iter().map(|e| e.tensor.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.entries {
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a parameter snapshot".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| Error::Format("truncated snapshot header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut cursor = 16 + len;
        let mut entries = Vec::with_capacity(header.entries.len());
        for e in header.entries {
            let n = crate::tensor::numel(&e.shape);
            let raw = bytes
                .get(cursor..cursor + 8 * n)
                .ok_or_else(|| Error::Format("truncated snapshot payload".into()))?;
            cursor += 8 * n;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(SnapshotEntry {
                module: e.module,
                layer: e.layer,
                role: e.role,
                tensor: RealTensor::from_vec(&e.shape, data)?,
            });
        }
        if cursor != bytes.len() {
            return Err(Error::Format("trailing bytes after snapshot payload".into()));
        }
        Ok(Self {
            spec: header.spec,
            meta: header.meta,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
