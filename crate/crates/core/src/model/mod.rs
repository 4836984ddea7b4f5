//! Audio-conditioned face generator: content encoder (per-window 1D CNN +
//! GRU), identity encoder with skip outputs, noise GRU, and a U-Net style
//! transposed-convolution frame decoder.

mod graph;
mod params;

pub use graph::{
    decode_frame, encode_audio_sequence, encode_identity, generate_video, generate_video_detailed, noise_draws,
    sample_noise_sequence, Generation, GenerationVars, Graph,
};
pub use params::ModelParams;

use crate::error::{Error, Result};

pub const Z_AUD: usize = 256;
pub const Z_ID: usize = 128;
pub const Z_N: usize = 10;
pub const LATENT: usize = Z_AUD + Z_ID + Z_N;
/// Variance (not standard deviation) of the raw noise draws.
pub const NOISE_VARIANCE: f64 = 0.6;

pub const AUDIO_STRIDES: [usize; 6] = [4, 4, 4, 5, 5, 2];
const AUDIO_CHANNELS: [usize; 6] = [32, 64, 128, 256, 256, 256];
const IDENTITY_CHANNELS: [usize; 6] = [32, 64, 128, 128, 128, 128];
/// Latent projection channels followed by the five transposed-conv block outputs.
const DECODER_CHANNELS: [usize; 6] = [256, 128, 128, 64, 32, 32];
/// Decoder seed grid; five stride-2 upsamplings reach 96×128.
pub const DECODER_SEED_HW: (usize, usize) = (3, 4);

/// Layer table scaled by a width multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchConfig {
    pub width_multiplier: f64,
}

impl ArchConfig {
    pub fn new(width_multiplier: f64) -> Result<Self> {
        if !(width_multiplier > 0.0 && width_multiplier <= 1.0) {
            return Err(Error::Config(format!("width_multiplier must be in (0, 1], got {width_multiplier}")));
        }
        let arch = Self { width_multiplier };
        let narrowest = arch.audio_channels().into_iter().chain(arch.identity_channels()).chain(arch.decoder_channels()).min();
        if narrowest < Some(4) {
            return Err(Error::Config(format!(
                "width_multiplier {width_multiplier} leaves a layer with fewer than 4 channels"
            )));
        }
        Ok(arch)
    }

    fn scale<const N: usize>(&self, base: [usize; N]) -> [usize; N] {
        base.map(|c| (c as f64 * self.width_multiplier).round() as usize)
    }

    pub fn audio_channels(&self) -> [usize; 6] {
        self.scale(AUDIO_CHANNELS)
    }

    pub fn identity_channels(&self) -> [usize; 6] {
        self.scale(IDENTITY_CHANNELS)
    }

    pub fn decoder_channels(&self) -> [usize; 6] {
        self.scale(DECODER_CHANNELS)
    }

    /// Integer description used to compare checkpoints against a config.
    pub fn layer_table(&self) -> Vec<u32> {
        let mut t = vec![Z_AUD as u32, Z_ID as u32, Z_N as u32];
        t.extend(AUDIO_STRIDES.iter().map(|&v| v as u32));
        t.extend(self.audio_channels().iter().map(|&v| v as u32));
        t.extend(self.identity_channels().iter().map(|&v| v as u32));
        t.extend(self.decoder_channels().iter().map(|&v| v as u32));
        t
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { width_multiplier: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_reduce_window_to_one() {
        assert_eq!(AUDIO_STRIDES.iter().product::<usize>(), crate::avdata::WINDOW_LEN);
        assert_eq!(LATENT, 394);
    }

    #[test]
    fn width_limits() {
        assert_eq!(ArchConfig::new(0.25).unwrap().audio_channels(), [8, 16, 32, 64, 64, 64]);
        assert!(ArchConfig::new(0.125).is_ok());
        assert!(ArchConfig::new(0.1).is_err());
        assert!(ArchConfig::new(1.5).is_err());
        assert!(ArchConfig::new(f64::NAN).is_err());
    }
}
