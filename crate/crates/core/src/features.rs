//! Audio-only feature extraction and the `VGSF` feature file format.
//!
//! `VGSF` layout (little-endian): magic, version `u32`, id length `u32`, UTF-8
//! id, rate `u32`, `T` `u32`, dim `u32`, then `T·dim` row-major `f32` values.

use std::io::Write;
use std::path::Path;

use crate::avdata::{window_audio, Waveform, FPS, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::{encode_audio_sequence, ModelParams, Z_AUD};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"VGSF";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub utterance_id: String,
    pub rate_hz: u32,
    /// `T×256`
    pub values: Tensor<f32>,
}

impl FeatureSequence {
    pub fn new(utterance_id: impl Into<String>, rate_hz: u32, values: Tensor<f32>) -> Result<Self> {
        match *values.shape() {
            [t, Z_AUD] if t >= 1 => {}
            ref s => return Err(Error::shape("features", format!("values must be T×{Z_AUD}, got {s:?}"))),
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("feature values".into()));
        }
        Ok(Self { utterance_id: utterance_id.into(), rate_hz, values })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    /// Size of the encoded file in bytes.
    pub fn encoded_len(&self) -> usize {
        4 + 4 + 4 + self.utterance_id.len() + 12 + 4 * self.values.numel()
    }
}

/// Content-encoder features for a waveform, using eval-mode batchnorm. No video
/// and no noise are involved.
pub fn extract(id: &str, w: &Waveform, params: &ModelParams<f32>) -> Result<FeatureSequence> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::Config(format!("sample-rate mismatch: expected {SAMPLE_RATE} Hz, got {}", w.sample_rate)));
    }
    let windows = window_audio(w)?;
    FeatureSequence::new(id, FPS, encode_audio_sequence(&windows, params)?)
}

pub fn encode_features(fs: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(fs.encoded_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(fs.utterance_id.len() as u32).to_le_bytes());
    out.extend_from_slice(fs.utterance_id.as_bytes());
    for v in [fs.rate_hz, fs.len() as u32, fs.dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in fs.values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureSequence> {
    let mut pos = 0;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if buf.len() - pos < n {
            return Err(Error::Format(format!("feature file truncated while reading {what}")));
        }
        pos += n;
        Ok(&buf[pos - n..pos])
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    if take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic: not a VGSF feature file".into()));
    }
    let version = u32_at(take(4, "version")?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let id_len = u32_at(take(4, "id length")?) as usize;
    let id = String::from_utf8(take(id_len, "id")?.to_vec())
        .map_err(|_| Error::Format("utterance id is not UTF-8".into()))?;
    let rate = u32_at(take(4, "rate")?);
    let t = u32_at(take(4, "frame count")?) as usize;
    let dim = u32_at(take(4, "dim")?) as usize;
    if dim != Z_AUD {
        return Err(Error::Format(format!("feature dim {dim}, expected {Z_AUD}")));
    }
    if t == 0 {
        return Err(Error::Format("feature file has zero frames".into()));
    }
    let body = take(t * dim * 4, "values")?;
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes after feature values", buf.len() - pos)));
    }
    FeatureSequence::new(id, rate, Tensor::new([t, dim], values)?)
}

pub fn write_features(fs: &FeatureSequence, path: &Path) -> Result<()> {
    std::fs::write(path, encode_features(fs)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&buf).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Plain CSV export `t,f0..f255` for inspection.
pub fn write_features_csv(fs: &FeatureSequence, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..fs.dim()).map(|i| format!("f{i}"))).collect();
    writeln!(f, "{}", header.join(",")).map_err(io)?;
    for t in 0..fs.len() {
        let row: Vec<String> = fs.values.row(t).iter().map(|v| v.to_string()).collect();
        writeln!(f, "{t},{}", row.join(",")).map_err(io)?;
    }
    f.flush().map_err(io)
}
