//! PCM WAV and per-frame image I/O.

use std::path::Path;

use crate::avdata::{Waveform, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_LEN, FRAME_WIDTH, SAMPLE_RATE};
use crate::error::{Error, Result};

fn media_err(path: &Path, msg: impl ToString) -> Error {
    Error::Media {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads a 16-bit mono 16 kHz PCM WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| media_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(media_err(
            path,
            format!("expected 16-bit mono PCM, got {} ch / {} bit", spec.channels, spec.bits_per_sample),
        ));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(media_err(path, format!("expected {SAMPLE_RATE} Hz, got {}", spec.sample_rate)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| media_err(path, e))?;
    Waveform::new(samples, SAMPLE_RATE)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| media_err(path, e))?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| media_err(path, e))?;
    }
    writer.finalize().map_err(|e| media_err(path, e))
}

/// Reads a 128×96 RGB image (PPM or PNG) as `3×96×128` values in `[-1, 1]`.
pub fn read_frame(path: &Path) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| media_err(path, e))?.to_rgb8();
    if img.width() as usize != FRAME_WIDTH || img.height() as usize != FRAME_HEIGHT {
        return Err(media_err(
            path,
            format!("frame must be {FRAME_WIDTH}×{FRAME_HEIGHT}, got {}×{}", img.width(), img.height()),
        ));
    }
    let mut out = vec![0.0f32; FRAME_LEN];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..FRAME_CHANNELS {
            out[(c * FRAME_HEIGHT + y as usize) * FRAME_WIDTH + x as usize] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    Ok(out)
}

/// Writes a `3×96×128` frame in `[-1, 1]` as binary PPM (or PNG, by extension).
pub fn write_frame(path: &Path, frame: &[f32]) -> Result<()> {
    if frame.len() != FRAME_LEN {
        return Err(Error::shape("write_frame", format!("{} values, expected {FRAME_LEN}", frame.len())));
    }
    let img = image::RgbImage::from_fn(FRAME_WIDTH as u32, FRAME_HEIGHT as u32, |x, y| {
        let px = |c: usize| {
            let v = frame[(c * FRAME_HEIGHT + y as usize) * FRAME_WIDTH + x as usize];
            ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| media_err(path, e))
}
