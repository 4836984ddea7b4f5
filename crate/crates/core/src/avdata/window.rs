use crate::avdata::{Waveform, HOP, SAMPLE_RATE, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Number of 25 fps frames covered by `len` samples at 16 kHz, rounded to nearest
/// (halves round up).
pub fn frame_count(len: usize) -> usize {
    (len + HOP / 2) / HOP
}

/// Splits a 16 kHz waveform into one 200 ms window per video frame.
///
/// Window `i` covers samples `[i·640 − 1600, i·640 + 1600)`; positions outside
/// the waveform are zero.
pub fn window_audio(w: &Waveform) -> Result<Tensor<f32>> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::Config(format!("waveform must be {SAMPLE_RATE} Hz, got {}", w.sample_rate)));
    }
    if w.samples.is_empty() {
        return Err(Error::EmptyInput("waveform has no samples".into()));
    }
    let t = frame_count(w.samples.len());
    if t == 0 {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than half a video frame",
            w.samples.len()
        )));
    }
    let len = w.samples.len() as isize;
    let mut data = vec![0.0f32; t * WINDOW_LEN];
    for (i, row) in data.chunks_mut(WINDOW_LEN).enumerate() {
        let start = (i * HOP) as isize - (WINDOW_LEN / 2) as isize;
        let lo = start.max(0);
        let hi = (start + WINDOW_LEN as isize).min(len);
        if lo < hi {
            let dst = (lo - start) as usize;
            row[dst..dst + (hi - lo) as usize].copy_from_slice(&w.samples[lo as usize..hi as usize]);
        }
    }
    Tensor::new([t, WINDOW_LEN], data)
}
