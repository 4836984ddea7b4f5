//! Audio/video alignment, dataset manifests, speaker-disjoint splits and the
//! synthetic audiovisual corpus.

pub mod manifest;
pub mod media;
pub mod split;
pub mod synth;
mod window;

pub use manifest::{load_manifest, write_manifest, SampleDescriptor};
pub use split::{split_speakers, SpeakerId};
pub use synth::{synth_generate, SyntheticSpec};
pub use window::{frame_count, window_audio};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FPS: u32 = 25;
/// Samples per 200 ms window.
pub const WINDOW_LEN: usize = 3200;
/// Samples between consecutive frame centres (40 ms).
pub const HOP: usize = 640;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_HEIGHT: usize = 96;
pub const FRAME_WIDTH: usize = 128;
pub const FRAME_LEN: usize = FRAME_CHANNELS * FRAME_HEIGHT * FRAME_WIDTH;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    /// Validates that samples are finite and within `[-1, 1]`.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::NonFinite(format!("waveform sample {i} = {v} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// `T` frames of `3×96×128` pixels in `[-1, 1]`, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Vec<f32>,
    pub fps: u32,
}

impl VideoClip {
    pub fn new(frames: Vec<f32>, fps: u32) -> Result<Self> {
        if frames.is_empty() || frames.len() % FRAME_LEN != 0 {
            return Err(Error::shape(
                "video",
                format!("{} values is not a positive multiple of one 3×96×128 frame", frames.len()),
            ));
        }
        if fps != FPS {
            return Err(Error::Config(format!("video must be {FPS} fps, got {fps}")));
        }
        if frames.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::NonFinite("video pixel outside [-1, 1]".into()));
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len() / FRAME_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * FRAME_LEN..(t + 1) * FRAME_LEN]
    }

    pub fn frame_tensor(&self, t: usize) -> Tensor<f32> {
        Tensor::new([FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH], self.frame(t).to_vec()).expect("frame shape")
    }

    pub fn truncate(&mut self, frames: usize) {
        self.frames.truncate(frames * FRAME_LEN);
    }
}

/// One clip: waveform, video, and the per-frame audio windows.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSample {
    pub id: String,
    pub waveform: Waveform,
    pub video: VideoClip,
    /// `T×3200`, one row per video frame.
    pub windows: Tensor<f32>,
    pub speaker_id: String,
    pub label: Option<usize>,
}

impl AlignedSample {
    pub fn new(
        id: impl Into<String>,
        speaker_id: impl Into<String>,
        waveform: Waveform,
        video: VideoClip,
        label: Option<usize>,
    ) -> Result<Self> {
        let windows = window_audio(&waveform)?;
        let sample = Self {
            id: id.into(),
            waveform,
            video,
            windows,
            speaker_id: speaker_id.into(),
            label,
        };
        if sample.windows.shape()[0] != sample.video.len() {
            return Err(Error::shape(
                "aligned sample",
                format!("{} audio windows vs {} video frames", sample.windows.shape()[0], sample.video.len()),
            ));
        }
        Ok(sample)
    }

    pub fn frames(&self) -> usize {
        self.video.len()
    }
}

impl SpeakerId for AlignedSample {
    fn speaker(&self) -> &str {
        &self.speaker_id
    }
}
