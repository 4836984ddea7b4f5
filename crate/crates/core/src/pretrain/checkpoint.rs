//! `VGSC` checkpoint files.
//!
//! Layout (little-endian): magic, version `u32`, architecture block (width
//! `f64`, layer table), named parameter tensors, batchnorm running statistics,
//! training progress, then an optional Adam state.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelParams};
use crate::numerics::{AdamConfig, AdamState, BatchNormStats, Tensor};
use crate::pretrain::TrainState;

const MAGIC: &[u8; 4] = b"VGSC";
const VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits u32").to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u32(v.len());
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more of {})", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("name is not UTF-8".into()))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let p = &state.params;
    w.f64(p.arch.width_multiplier);
    let table = p.arch.layer_table();
    w.u32(table.len());
    for v in table {
        w.u32(v as usize);
    }
    w.u32(p.tensors.len());
    for (name, t) in p.names.iter().zip(&p.tensors) {
        w.str(name);
        w.u32(t.rank());
        for &d in t.shape() {
            w.u32(d);
        }
        w.f32s(t.data());
    }
    w.u32(p.bn_stats.len());
    for (name, s) in p.bn_names.iter().zip(&p.bn_stats) {
        w.str(name);
        w.f32s(&s.running_mean);
        w.f32s(&s.running_var);
    }
    w.u64(state.epoch as u64);
    w.u64(state.cursor);
    w.u32(state.loss_history.len());
    for &l in &state.loss_history {
        w.f64(l);
    }
    let adam = &state.adam;
    if adam.m.is_empty() {
        w.u8(0);
    } else {
        w.u8(1);
        w.u64(adam.step);
        w.f64(adam.config.beta1);
        w.f64(adam.config.beta2);
        w.f64(adam.config.epsilon);
        w.u32(adam.m.len());
        for (m, v) in adam.m.iter().zip(&adam.v) {
            w.f32s(m.data());
            w.f32s(v.data());
        }
    }
    w.0
}

fn mismatch(msg: String) -> Error {
    Error::ArchitectureMismatch(msg)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<TrainState> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic (not a VGSC checkpoint)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version} (this build reads {VERSION})")));
    }
    let width = r.f64()?;
    let arch = ArchConfig::new(width).map_err(|e| mismatch(e.to_string()))?;
    let n = r.u32()?;
    let table = (0..n).map(|_| r.u32().map(|v| v as u32)).collect::<Result<Vec<_>>>()?;
    if table != arch.layer_table() {
        return Err(mismatch(format!("stored layer table {table:?} differs from this build's table for width {width}")));
    }
    // the reference layout comes from initialization; values are overwritten
    let mut params = ModelParams::<f32>::init(arch, 0);
    let count = r.u32()?;
    if count != params.tensors.len() {
        return Err(mismatch(format!("{count} parameter tensors, expected {}", params.tensors.len())));
    }
    for i in 0..count {
        let name = r.str()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let data = r.f32s()?;
        if name != params.names[i] || shape != params.tensors[i].shape() {
            return Err(mismatch(format!(
                "parameter #{i} is `{name}` {shape:?}, expected `{}` {:?}",
                params.names[i],
                params.tensors[i].shape()
            )));
        }
        params.tensors[i] = Tensor::new(shape, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    }
    let count = r.u32()?;
    if count != params.bn_stats.len() {
        return Err(mismatch(format!("{count} batchnorm layers, expected {}", params.bn_stats.len())));
    }
    for i in 0..count {
        let name = r.str()?;
        let (running_mean, running_var) = (r.f32s()?, r.f32s()?);
        let c = params.bn_stats[i].running_mean.len();
        if name != params.bn_names[i] || running_mean.len() != c || running_var.len() != c {
            return Err(mismatch(format!("batchnorm #{i} `{name}` does not match `{}`", params.bn_names[i])));
        }
        params.bn_stats[i] = BatchNormStats { running_mean, running_var };
    }
    let epoch = r.u64()? as usize;
    let cursor = r.u64()?;
    let n = r.u32()?;
    let loss_history = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mut adam = AdamState::new(AdamConfig::default());
    if r.u8()? == 1 {
        adam.step = r.u64()?;
        adam.config = AdamConfig { beta1: r.f64()?, beta2: r.f64()?, epsilon: r.f64()? };
        let count = r.u32()?;
        if count != params.tensors.len() {
            return Err(Error::CorruptCheckpoint(format!("optimizer tracks {count} tensors")));
        }
        for p in &params.tensors {
            let (m, v) = (r.f32s()?, r.f32s()?);
            let bad = |e: Error| Error::CorruptCheckpoint(e.to_string());
            adam.m.push(Tensor::new(p.shape().to_vec(), m).map_err(bad)?);
            adam.v.push(Tensor::new(p.shape().to_vec(), v).map_err(bad)?);
        }
    }
    if r.pos != buf.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if !params.is_finite() {
        return Err(Error::CorruptCheckpoint("non-finite parameter values".into()));
    }
    Ok(TrainState { params, adam, epoch, cursor, loss_history })
}

/// Writes via a temporary sibling file so an interrupted save never leaves a
/// half-written checkpoint behind.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let tmp = path.with_extension("vgsc.tmp");
    std::fs::write(&tmp, encode_checkpoint(state)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}

/// Loads a checkpoint and refuses it unless it was built with `arch`.
pub fn load_checkpoint_for(path: &Path, arch: &ArchConfig) -> Result<TrainState> {
    let state = load_checkpoint(path)?;
    if state.params.arch != *arch {
        return Err(mismatch(format!(
            "{} was trained with width_multiplier {}, configuration asks for {}",
            path.display(),
            state.params.arch.width_multiplier,
            arch.width_multiplier
        )));
    }
    Ok(state)
}
