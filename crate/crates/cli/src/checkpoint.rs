//! Self-describing checkpoint archive.
//!
//! Layout: the magic `ZGCK`, a little-endian u32 schema version, a u64
//! manifest length, the JSON manifest, then every array as little-endian
//! f32 in manifest order.

use std::io::Write;
use std::path::Path;

use gait_core::nn::Layout;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::create_parent;
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"ZGCK";
pub const CHECKPOINT_SCHEMA: u32 = 1;

/// Array group holding model parameters.
pub const PARAMS: &str = "param";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Offset into the payload, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub kind: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seed: u64,
    pub step: u64,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub arrays: Vec<ArrayInfo>,
    pub payload_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config: RunConfig,
    pub seed: u64,
    pub step: u64,
    pub extra: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: RunConfig, seed: u64, step: u64) -> Self {
        Self { kind: kind.into(), config, seed, step, extra: serde_json::Value::Null, arrays: Vec::new() }
    }

    /// Appends one array per layout entry, sliced out of `flat`.
    pub fn push_layout(&mut self, layout: &Layout, flat: &[f32], group: &str) {
        debug_assert_eq!(layout.total(), flat.len());
        for spec in layout.specs() {
            self.arrays.push(NamedArray {
                name: spec.name.clone(),
                group: group.into(),
                shape: spec.shape.clone(),
                data: spec.slot.of(flat).to_vec(),
            });
        }
    }

    pub fn push_flat(&mut self, name: &str, group: &str, data: &[f32]) {
        self.arrays.push(NamedArray { name: name.into(), group: group.into(), shape: vec![data.len()], data: data.to_vec() });
    }

    /// Reassembles the flat vector for `layout` from the arrays in `group`,
    /// checking names and shapes.
    pub fn take_layout(&self, layout: &Layout, group: &str, file: &Path) -> Result<Vec<f32>> {
        let arrays: Vec<&NamedArray> = self.arrays.iter().filter(|a| a.group == group).collect();
        if arrays.len() != layout.specs().len() {
            return Err(Error::checkpoint(file, format!("group {group} has {} arrays, model expects {}", arrays.len(), layout.specs().len())));
        }
        let mut flat = Vec::with_capacity(layout.total());
        for (a, spec) in arrays.iter().zip(layout.specs()) {
            if a.name != spec.name || a.shape != spec.shape {
                return Err(Error::checkpoint(file, format!("array {} {:?} does not match {} {:?}", a.name, a.shape, spec.name, spec.shape)));
            }
            flat.extend_from_slice(&a.data);
        }
        Ok(flat)
    }

    pub fn take_flat(&self, name: &str, group: &str, len: usize, file: &Path) -> Result<Vec<f32>> {
        let a = self
            .arrays
            .iter()
            .find(|a| a.name == name && a.group == group)
            .ok_or_else(|| Error::checkpoint(file, format!("missing array {group}/{name}")))?;
        if a.data.len() != len {
            return Err(Error::checkpoint(file, format!("{name} has {} values, expected {len}", a.data.len())));
        }
        Ok(a.data.clone())
    }

    /// Total element count over one group.
    pub fn group_len(&self, group: &str) -> usize {
        self.arrays.iter().filter(|a| a.group == group).map(|a| a.shape.iter().product::<usize>()).sum()
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let arrays = self
            .arrays
            .iter()
            .map(|a| {
                let info = ArrayInfo { name: a.name.clone(), group: a.group.clone(), shape: a.shape.clone(), dtype: "f32".into(), offset };
                offset += a.data.len();
                info
            })
            .collect();
        Manifest {
            schema: CHECKPOINT_SCHEMA,
            kind: self.kind.clone(),
            config_hash: self.config.hash(),
            config: self.config.clone(),
            seed: self.seed,
            step: self.step,
            extra: self.extra.clone(),
            arrays,
            payload_len: offset,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + manifest.len() + 4 * self.arrays.iter().map(|a| a.data.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_SCHEMA.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for a in &self.arrays {
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        let mut f = std::fs::File::create(path).at(path)?;
        f.write_all(&self.to_bytes()).at(path)?;
        f.sync_all().at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], file: &Path) -> Result<Self> {
        let bad = |m: String| Error::checkpoint(file, m);
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic or too short)".into()));
        }
        let schema = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if schema != CHECKPOINT_SCHEMA {
            return Err(bad(format!("schema version {schema}, expected {CHECKPOINT_SCHEMA}")));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if mlen > body.len() {
            return Err(bad("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen]).map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.schema != CHECKPOINT_SCHEMA {
            return Err(bad(format!("manifest schema {}", manifest.schema)));
        }
        if manifest.config_hash != manifest.config.hash() {
            return Err(bad("config hash does not match the embedded config".into()));
        }
        let payload = &body[mlen..];
        if payload.len() != 4 * manifest.payload_len {
            return Err(bad(format!("payload has {} bytes, manifest declares {}", payload.len(), 4 * manifest.payload_len)));
        }
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        let mut expected = 0;
        for info in &manifest.arrays {
            let n: usize = info.shape.iter().product();
            if info.dtype != "f32" || info.offset != expected || info.offset + n > manifest.payload_len {
                return Err(bad(format!("array {} has an invalid entry", info.name)));
            }
            let data = payload[4 * info.offset..4 * (info.offset + n)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(NamedArray { name: info.name.clone(), group: info.group.clone(), shape: info.shape.clone(), data });
            expected += n;
        }
        if expected != manifest.payload_len {
            return Err(bad("arrays do not cover the payload".into()));
        }
        Ok(Self { kind: manifest.kind, config: manifest.config, seed: manifest.seed, step: manifest.step, extra: manifest.extra, arrays })
    }

    pub fn expect_kind(&self, kind: &str, file: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::checkpoint(file, format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gait_core::diffgait::{DiffGaitConfig, DiffGaitNet};

    fn sample() -> (Checkpoint, DiffGaitNet, Vec<f32>) {
        let net = DiffGaitNet::new(DiffGaitConfig::with_channels(4)).unwrap();
        let params = net.init_params::<f32>(5);
        let mut ck = Checkpoint::new("diffgait", RunConfig::default(), 5, 12);
        ck.push_layout(net.layout(), &params, PARAMS);
        ck.push_flat("adam.m", "optimizer", &vec![0.5; params.len()]);
        (ck, net, params)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (ck, net, params) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let flat = back.take_layout(net.layout(), PARAMS, &path).unwrap();
        assert!(flat.iter().zip(&params).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.group_len(PARAMS), net.param_count());
    }

    #[test]
    fn damaged_files_are_incompatible_not_panics() {
        let (ck, _, _) = sample();
        let bytes = ck.to_bytes();
        let p = Path::new("x");
        for cut in [0, 3, 10, 16, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut], p), Err(Error::IncompatibleCheckpoint { .. })), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong, p), Err(Error::IncompatibleCheckpoint { .. })));
        let text = String::from_utf8_lossy(&bytes[16..200]).into_owned();
        let hash_at = text.find("config_hash").unwrap() + 16 + 15;
        let mut tampered = bytes;
        tampered[hash_at] = if tampered[hash_at] == b'0' { b'1' } else { b'0' };
        assert!(matches!(Checkpoint::from_bytes(&tampered, p), Err(Error::IncompatibleCheckpoint { .. })));
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let (ck, _, _) = sample();
        let other = DiffGaitNet::new(DiffGaitConfig::with_channels(8)).unwrap();
        assert!(ck.take_layout(other.layout(), PARAMS, Path::new("x")).is_err());
        assert!(ck.take_flat("adam.v", "optimizer", 1, Path::new("x")).is_err());
    }
}
