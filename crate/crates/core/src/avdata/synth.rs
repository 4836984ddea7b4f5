//! Deterministic synthetic audiovisual corpus.
//!
//! Each speaker has a fixed procedurally drawn face and voice pitch. Each clip
//! has a class selecting an amplitude envelope; the audio is a harmonic tone
//! shaped by that envelope, the mouth opening in every frame tracks the RMS of
//! the frame's audio window, and the eyebrow tilt encodes the class.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::avdata::{
    window_audio, AlignedSample, VideoClip, Waveform, FPS, FRAME_HEIGHT, FRAME_LEN, FRAME_WIDTH, SAMPLE_RATE,
    WINDOW_LEN,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub clips_per_speaker: usize,
    pub clip_seconds: f64,
    pub n_classes: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.clips_per_speaker == 0 {
            return Err(Error::Config("speaker and clip counts must be at least 1".into()));
        }
        if !(2..=8).contains(&self.n_classes) {
            return Err(Error::Config(format!("n_classes must be in 2..=8, got {}", self.n_classes)));
        }
        if !(self.clip_seconds.is_finite() && self.clip_seconds * SAMPLE_RATE as f64 >= 640.0) {
            return Err(Error::Config(format!("clip_seconds {} is shorter than one frame", self.clip_seconds)));
        }
        Ok(())
    }
}

/// Mouth interior colour; no other drawn element uses it.
pub const MOUTH_RGB: [f32; 3] = [0.45, -0.75, -0.65];
const EYE_RGB: [f32; 3] = [-0.85, -0.85, -0.8];
const BROW_RGB: [f32; 3] = [-0.6, -0.7, -0.75];
const MAX_MOUTH_ROWS: f64 = 22.0;

/// Envelope shape for class `c` at normalized time `u ∈ [0, 1]`.
pub fn envelope(class: usize, u: f64, phase: f64) -> f64 {
    let s = |f: f64| (2.0 * PI * f * u + phase).sin();
    match class {
        0 => 0.1 + 0.8 * u,
        1 => 0.9 - 0.8 * u,
        2 => 0.5 + 0.4 * s(3.0),
        3 => 0.1 + 0.8 * (PI * u).sin(),
        4 => 0.9 - 0.8 * (PI * u).sin(),
        5 => 0.5 + 0.4 * s(6.0),
        6 => 0.15 + 0.7 / (1.0 + (-(u - 0.5) * 30.0).exp()),
        _ => 0.85 - 0.7 / (1.0 + (-(u - 0.5) * 30.0).exp()),
    }
}

struct Face {
    background: [f32; 3],
    skin: [f32; 3],
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    eye_dx: f64,
    mouth_rx: f64,
    f0: f64,
}

fn hsv_to_signed_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(2.0 * r - 1.0) as f32, (2.0 * g - 1.0) as f32, (2.0 * b - 1.0) as f32]
}

impl Face {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let tone: f64 = rng.gen_range(0.55..0.9);
        Face {
            background: hsv_to_signed_rgb(rng.gen_range(0.0..1.0), 0.55, rng.gen_range(0.35..0.65)),
            skin: [
                (2.0 * tone - 1.0) as f32,
                (2.0 * tone * 0.78 - 1.0) as f32,
                (2.0 * tone * 0.62 - 1.0) as f32,
            ],
            cx: 64.0 + rng.gen_range(-8.0..8.0),
            cy: 48.0 + rng.gen_range(-4.0..4.0),
            rx: rng.gen_range(28.0..34.0),
            ry: rng.gen_range(38.0..43.0),
            eye_dx: rng.gen_range(10.0..16.0),
            mouth_rx: rng.gen_range(11.0..15.0),
            f0: rng.gen_range(100.0..220.0),
        }
    }

    fn render(&self, mouth_rows: f64, brow_slope: f64, out: &mut [f32]) {
        let plane = FRAME_HEIGHT * FRAME_WIDTH;
        let mut put = |x: usize, y: usize, rgb: [f32; 3]| {
            for (c, v) in rgb.iter().enumerate() {
                out[c * plane + y * FRAME_WIDTH + x] = *v;
            }
        };
        let mouth_cy = self.cy + 21.0;
        let mouth_ry = mouth_rows / 2.0;
        for y in 0..FRAME_HEIGHT {
            for x in 0..FRAME_WIDTH {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut rgb = self.background;
                let inside = |cx: f64, cy: f64, rx: f64, ry: f64| {
                    let (dx, dy) = ((px - cx) / rx, (py - cy) / ry);
                    dx * dx + dy * dy <= 1.0
                };
                if inside(self.cx, self.cy, self.rx, self.ry) {
                    rgb = self.skin;
                }
                for side in [-1.0, 1.0] {
                    let ex = self.cx + side * self.eye_dx;
                    let ey = self.cy - 10.0;
                    if inside(ex, ey, 4.0, 3.0) {
                        rgb = EYE_RGB;
                    }
                    // brow: thick segment above the eye, mirrored tilt
                    let bx = px - ex;
                    if bx.abs() <= 7.0 {
                        let by = ey - 8.0 - side * brow_slope * bx;
                        if (py - by).abs() <= 1.5 {
                            rgb = BROW_RGB;
                        }
                    }
                }
                if mouth_ry > 0.0 && (px - self.cx).abs() <= self.mouth_rx && (py - mouth_cy).abs() < mouth_ry {
                    // rounded box: corners trimmed by an ellipse in x only
                    let dx = (px - self.cx) / self.mouth_rx;
                    if dx * dx <= 1.0 {
                        rgb = MOUTH_RGB;
                    }
                }
                put(x, y, rgb);
            }
        }
    }
}

/// Number of pixel rows containing the mouth colour.
pub fn mouth_opening_rows(frame: &[f32]) -> usize {
    let plane = FRAME_HEIGHT * FRAME_WIDTH;
    (0..FRAME_HEIGHT)
        .filter(|&y| {
            (0..FRAME_WIDTH).any(|x| (0..3).all(|c| frame[c * plane + y * FRAME_WIDTH + x] == MOUTH_RGB[c]))
        })
        .count()
}

/// RMS of one audio window.
pub fn window_rms(window: &[f32]) -> f64 {
    (window.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / window.len() as f64).sqrt()
}

const HARMONICS: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// RMS of the unit-envelope harmonic tone.
fn tone_rms() -> f64 {
    let norm: f64 = HARMONICS.iter().sum();
    (HARMONICS.iter().map(|a| a * a).sum::<f64>() / 2.0).sqrt() / norm
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Generates `n_speakers × clips_per_speaker` labelled clips, bit-identical for a given spec.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Vec<AlignedSample>> {
    spec.validate()?;
    let n_samples = (spec.clip_seconds * SAMPLE_RATE as f64).round() as usize;
    let noise = Normal::new(0.0, 0.003).expect("valid normal");
    let rms_ref = 0.9 * tone_rms();
    let norm: f64 = HARMONICS.iter().sum();
    let mut out = Vec::with_capacity(spec.n_speakers * spec.clips_per_speaker);
    for s in 0..spec.n_speakers {
        let mut srng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, s as u64 + 1, 0));
        let face = Face::draw(&mut srng);
        for j in 0..spec.clips_per_speaker {
            let class = (j + s) % spec.n_classes;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, s as u64 + 1, j as u64 + 1));
            let phase = rng.gen_range(0.0..2.0 * PI);
            let scale = rng.gen_range(0.85..1.0);
            let tone_phase: Vec<f64> = HARMONICS.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let samples: Vec<f32> = (0..n_samples)
                .map(|k| {
                    let t = k as f64 / SAMPLE_RATE as f64;
                    let u = t / spec.clip_seconds;
                    let tone: f64 = HARMONICS
                        .iter()
                        .zip(&tone_phase)
                        .enumerate()
                        .map(|(h, (a, p))| a * (2.0 * PI * (h + 1) as f64 * face.f0 * t + p).sin())
                        .sum::<f64>()
                        / norm;
                    let v = scale * envelope(class, u, phase) * tone + noise.sample(&mut rng);
                    v.clamp(-1.0, 1.0) as f32
                })
                .collect();
            let waveform = Waveform::new(samples, SAMPLE_RATE)?;
            let windows = window_audio(&waveform)?;
            let t_frames = windows.shape()[0];
            let slope = (class as f64 / (spec.n_classes - 1) as f64 - 0.5) * 0.8;
            let mut frames = vec![0.0f32; t_frames * FRAME_LEN];
            for (t, frame) in frames.chunks_mut(FRAME_LEN).enumerate() {
                let rms = window_rms(&windows.data()[t * WINDOW_LEN..(t + 1) * WINDOW_LEN]);
                let rows = (MAX_MOUTH_ROWS * (rms / rms_ref).min(1.0)).round();
                face.render(rows, slope, frame);
            }
            let video = VideoClip::new(frames, FPS)?;
            out.push(AlignedSample::new(
                format!("spk{s:03}_clip{j:03}"),
                format!("spk{s:03}"),
                waveform,
                video,
                Some(class),
            )?);
        }
    }
    Ok(out)
}
