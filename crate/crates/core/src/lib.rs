//! Visually guided self-supervised speech representations.
//!
//! An audio-conditioned face-video generator is trained to reconstruct real
//! video frames from a still image plus the speech audio. Its audio encoder
//! then serves as a standalone feature extractor, evaluated with a small LSTM
//! classifier on frozen features.

pub mod avdata;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod pretrain;
pub mod probe;

pub use error::{Error, Result};
