//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "WOGM"  version:u32
//! meta_len:u32  meta:JSON {config, joints, edges}
//! epoch:u32  seed:u64
//! count:u32  count × record          parameter values
//! count:u32  count × record          Adam state: "m/<name>", "v/<name>", "step/<name>"
//! record = name_len:u32 name:utf8 rank:u32 dims:u32[rank] values:f64[prod(dims)]
//! ```
//!
//! The step counter is stored as a rank-0 record holding one value.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Parameter, Tensor};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::build_spatial_graph;
use crate::model::Model;

pub const MAGIC: &[u8; 4] = b"WOGM";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: TrainConfig,
    joints: usize,
    /// 1-indexed joint pairs.
    edges: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub seed: u64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len())?;
    for &d in dims {
        put_u32(out, d)?;
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes(model: &Model, info: CheckpointInfo) -> Result<Vec<u8>> {
    let meta = Meta {
        config: model.config().clone(),
        joints: model.graph().num_joints(),
        edges: model.graph().edges().iter().map(|&(i, j)| (i + 1, j + 1)).collect(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&meta)?;
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(&meta);
    put_u32(&mut out, info.epoch)?;
    out.extend_from_slice(&info.seed.to_le_bytes());

    let params: Vec<&Parameter> = model.store.iter().collect();
    put_u32(&mut out, params.len())?;
    for p in &params {
        put_record(&mut out, &p.name, p.value.shape(), p.value.data())?;
    }
    put_u32(&mut out, params.len() * 3)?;
    for p in &params {
        put_record(&mut out, &format!("m/{}", p.name), p.value.shape(), &p.adam_m)?;
        put_record(&mut out, &format!("v/{}", p.name), p.value.shape(), &p.adam_v)?;
        put_record(&mut out, &format!("step/{}", p.name), &[], &[p.step as f64])?;
    }
    Ok(out)
}

pub fn save(path: &Path, model: &Model, info: CheckpointInfo) -> Result<()> {
    fs::write(path, to_bytes(model, info)?)?;
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let rank = self.u32()?;
        let dims = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let raw = self.take(count.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint(format!("{name}: size overflow"))
        })?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        Ok((name, dims, values))
    }
}

/// Rebuilds the model stored in `bytes`. Nothing is returned unless the
/// whole file parses and matches the architecture it declares.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointInfo)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "version {version} is not supported (expected {VERSION})"
        )));
    }
    let meta_len = r.u32()?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let epoch = r.u32()?;
    let seed = r.u64()?;
    let graph = build_spatial_graph(&meta.edges, meta.joints)?;
    let mut model = Model::new(meta.config, graph, seed)?;

    let count = r.u32()?;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameters stored, architecture has {}",
            model.store.len()
        )));
    }
    let mut params: Vec<Parameter> = model.store.iter().cloned().collect();
    for p in params.iter_mut() {
        let (name, dims, values) = r.record()?;
        if name != p.name || dims != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "record {name} {dims:?} does not match parameter {} {:?}",
                p.name,
                p.value.shape()
            )));
        }
        p.value = Tensor::new(dims, values)?;
    }
    let state_count = r.u32()?;
    if state_count != 3 * count {
        return Err(Error::Checkpoint(format!("{state_count} optimizer records")));
    }
    for p in params.iter_mut() {
        for (prefix, dims) in [("m/", p.value.shape().to_vec()), ("v/", p.value.shape().to_vec()), ("step/", vec![])] {
            let (name, d, values) = r.record()?;
            if name != format!("{prefix}{}", p.name) || d != dims {
                return Err(Error::Checkpoint(format!("unexpected optimizer record {name}")));
            }
            match prefix {
                "m/" => p.adam_m = values,
                "v/" => p.adam_v = values,
                _ => {
                    let s = values[0];
                    if !(s >= 0.0 && s.fract() == 0.0) {
                        return Err(Error::Checkpoint(format!("{name}: invalid step {s}")));
                    }
                    p.step = s as u64;
                }
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    for (dst, src) in model.store.iter_mut().zip(params) {
        *dst = src;
    }
    Ok((model, CheckpointInfo { epoch, seed }))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointInfo)> {
    let bytes = fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&bytes)
}
