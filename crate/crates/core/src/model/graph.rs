use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::avdata::{AlignedSample, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::model::{ModelParams, AUDIO_STRIDES, DECODER_SEED_HW, LATENT, NOISE_VARIANCE, Z_AUD, Z_ID, Z_N};
use crate::numerics::ops::{BN_EPS, BN_MOMENTUM};
use crate::numerics::{gru_step, BatchNormStats, Mode, RecurrentVars, Scalar, Tape, Tensor, Var};

/// The generator's parameters bound onto a tape.
///
/// In train mode batchnorm layers use batch statistics and update the copies in
/// `stats`; callers decide whether to write those back to the parameters.
pub struct Graph<'p, S: Scalar> {
    pub tape: Tape<S>,
    pub stats: Vec<BatchNormStats<S>>,
    pub mode: Mode,
    params: &'p ModelParams<S>,
    vars: Vec<Var>,
}

fn expect_shape<S: Scalar>(tape: &Tape<S>, v: Var, what: &'static str, want: &[usize]) -> Result<()> {
    if tape.shape(v) != want {
        return Err(Error::shape(what, format!("expected {want:?}, got {:?}", tape.shape(v))));
    }
    Ok(())
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(params: &'p ModelParams<S>, mode: Mode, trainable: bool) -> Self {
        let mut tape = Tape::new();
        let vars = params
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Self { tape, stats: params.bn_stats.clone(), mode, params, vars }
    }

    /// Tape handles of the parameters, in `ModelParams::names` order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn p(&self, name: &str) -> Result<Var> {
        Ok(self.vars[self.params.index_of(name)?])
    }

    fn gru_vars(&self, prefix: &str) -> Result<RecurrentVars> {
        Ok(RecurrentVars {
            w_ih: self.p(&format!("{prefix}.w_ih"))?,
            w_hh: self.p(&format!("{prefix}.w_hh"))?,
            b_ih: self.p(&format!("{prefix}.b_ih"))?,
            b_hh: self.p(&format!("{prefix}.b_hh"))?,
        })
    }

    fn bn_relu(&mut self, x: Var, name: &str) -> Result<Var> {
        let (gamma, beta) = (self.p(&format!("{name}.gamma"))?, self.p(&format!("{name}.beta"))?);
        let i = self.params.bn_index_of(name)?;
        let y = self.tape.batchnorm(x, gamma, beta, &mut self.stats[i], self.mode, S::of(BN_MOMENTUM), S::of(BN_EPS))?;
        self.tape.relu(y)
    }

    /// Per-window CNN embedding: `M×3200` windows to `M×256` GRU inputs.
    pub fn audio_embeddings(&mut self, windows: Var) -> Result<Var> {
        let m = match *self.tape.shape(windows) {
            [m, WINDOW_LEN] => m,
            ref s => return Err(Error::shape("encode_audio", format!("windows must be M×{WINDOW_LEN}, got {s:?}"))),
        };
        let mut x = self.tape.reshape(windows, [m, 1, WINDOW_LEN])?;
        for (k, &s) in AUDIO_STRIDES.iter().enumerate() {
            let w = self.p(&format!("audio.conv{k}.weight"))?;
            x = self.tape.conv1d(x, w, None, s, 0)?;
            x = self.bn_relu(x, &format!("audio.bn{k}"))?;
        }
        let c = self.tape.shape(x)[1];
        let flat = self.tape.reshape(x, [m, c])?;
        let (w, b) = (self.p("audio.proj.weight")?, self.p("audio.proj.bias")?);
        self.tape.linear(flat, w, Some(b))
    }

    /// Runs the content GRU over rows `start..start+steps` of `emb`, returning
    /// every `1×256` hidden state.
    pub fn audio_gru(&mut self, emb: Var, start: usize, steps: usize) -> Result<Vec<Var>> {
        let p = self.gru_vars("audio.gru")?;
        self.run_gru(&p, emb, start, steps, Z_AUD)
    }

    /// Runs the noise GRU over the rows of `draws` (`T×10`).
    pub fn noise_gru(&mut self, draws: Var) -> Result<Vec<Var>> {
        let steps = match *self.tape.shape(draws) {
            [t, Z_N] => t,
            ref s => return Err(Error::shape("noise_gru", format!("draws must be T×{Z_N}, got {s:?}"))),
        };
        let p = self.gru_vars("noise.gru")?;
        self.run_gru(&p, draws, 0, steps, Z_N)
    }

    fn run_gru(&mut self, p: &RecurrentVars, xs: Var, start: usize, steps: usize, hidden: usize) -> Result<Vec<Var>> {
        let mut h = self.tape.constant(Tensor::zeros([1, hidden]));
        let mut out = Vec::with_capacity(steps);
        for s in 0..steps {
            let x = self.tape.narrow(xs, 0, start + s, 1)?;
            h = gru_step(&mut self.tape, x, h, p)?;
            out.push(h);
        }
        Ok(out)
    }

    /// `N×3×96×128` images to (`N×128` identity codes, six skip activations,
    /// highest resolution first).
    pub fn identity(&mut self, images: Var) -> Result<(Var, Vec<Var>)> {
        let n = match *self.tape.shape(images) {
            [n, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH] => n,
            ref s => return Err(Error::shape("encode_identity", format!("images must be N×3×96×128, got {s:?}"))),
        };
        let mut x = images;
        let mut skips = Vec::with_capacity(6);
        for k in 0..6 {
            let w = self.p(&format!("identity.conv{k}.weight"))?;
            x = self.tape.conv2d(x, w, None, 2, 1)?;
            x = self.bn_relu(x, &format!("identity.bn{k}"))?;
            skips.push(x);
        }
        let flat_len = self.tape.value(x).numel() / n;
        let flat = self.tape.reshape(x, [n, flat_len])?;
        let (w, b) = (self.p("identity.proj.weight")?, self.p("identity.proj.bias")?);
        let z_id = self.tape.linear(flat, w, Some(b))?;
        expect_shape(&self.tape, z_id, "z_id", &[n, Z_ID])?;
        Ok((z_id, skips))
    }

    /// `N×394` latents plus skips to `N×3×96×128` frames in `[-1, 1]`.
    pub fn decode(&mut self, latent: Var, skips: &[Var]) -> Result<Var> {
        let n = match *self.tape.shape(latent) {
            [n, LATENT] => n,
            ref s => return Err(Error::shape("decode_frame", format!("latent must be N×{LATENT}, got {s:?}"))),
        };
        if skips.len() != 6 {
            return Err(Error::shape("decode_frame", format!("expected 6 skip tensors, got {}", skips.len())));
        }
        let c0 = self.params.arch.decoder_channels()[0];
        let (sh, sw) = DECODER_SEED_HW;
        let w = self.p("decoder.proj.weight")?;
        let x = self.tape.linear(latent, w, None)?;
        let x = self.tape.reshape(x, [n, c0, sh, sw])?;
        let mut x = self.bn_relu(x, "decoder.bn0")?;
        for k in 1..6 {
            let skip = skips[5 - k];
            if self.tape.shape(skip)[0] != n || self.tape.shape(skip)[2..] != self.tape.shape(x)[2..] {
                return Err(Error::shape(
                    "decode_frame",
                    format!("skip {:?} does not match decoder activation {:?}", self.tape.shape(skip), self.tape.shape(x)),
                ));
            }
            let joined = self.tape.concat(&[x, skip], 1)?;
            let w = self.p(&format!("decoder.deconv{k}.weight"))?;
            x = self.tape.conv_transpose2d(joined, w, None, 2, 1)?;
            x = self.bn_relu(x, &format!("decoder.bn{k}"))?;
        }
        let (w, b) = (self.p("decoder.out.weight")?, self.p("decoder.out.bias")?);
        let y = self.tape.conv2d(x, w, Some(b), 1, 1)?;
        let y = self.tape.tanh(y)?;
        expect_shape(&self.tape, y, "decode_frame", &[n, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH])?;
        Ok(y)
    }
}

/// Tape handles of one generated video; see [`Generation`].
#[derive(Clone, Copy, Debug)]
pub struct GenerationVars {
    pub z_aud: Var,
    pub z_id: Var,
    pub z_n: Var,
    pub latent: Var,
    pub frames: Var,
}

impl<S: Scalar> Graph<'_, S> {
    /// Full video from `T×3200` windows, a `1×3×96×128` still and `T×10` noise
    /// draws: every frame shares the still's identity code and skips.
    pub fn generate(&mut self, windows: Var, still: Var, draws: Var) -> Result<GenerationVars> {
        let emb = self.audio_embeddings(windows)?;
        let t = self.tape.shape(emb)[0];
        let hs = self.audio_gru(emb, 0, t)?;
        let z_aud = self.tape.concat(&hs, 0)?;
        if self.tape.shape(still)[0] != 1 {
            return Err(Error::shape("generate_video", format!("expected one still image, got {:?}", self.tape.shape(still))));
        }
        let (z_id, skips) = self.identity(still)?;
        let ns = self.noise_gru(draws)?;
        let z_n = self.tape.concat(&ns, 0)?;
        expect_shape(&self.tape, z_aud, "z_aud", &[t, Z_AUD])?;
        expect_shape(&self.tape, z_id, "z_id", &[1, Z_ID])?;
        expect_shape(&self.tape, z_n, "z_n", &[t, Z_N])?;
        let z_id_rep = self.tape.repeat_batch(z_id, t)?;
        let latent = self.tape.concat(&[z_aud, z_id_rep, z_n], 1)?;
        expect_shape(&self.tape, latent, "latent", &[t, LATENT])?;
        let skips = skips.into_iter().map(|s| self.tape.repeat_batch(s, t)).collect::<Result<Vec<_>>>()?;
        let frames = self.decode(latent, &skips)?;
        Ok(GenerationVars { z_aud, z_id, z_n, latent, frames })
    }
}

/// Raw noise draws, `T×10`, i.i.d. with mean 0 and variance 0.6.
pub fn noise_draws<S: Scalar>(t: usize, rng: &mut impl Rng) -> Result<Tensor<S>> {
    let normal = Normal::new(0.0, NOISE_VARIANCE.sqrt()).expect("valid normal");
    Tensor::new([t, Z_N], (0..t * Z_N).map(|_| S::of(normal.sample(rng))).collect())
}

fn with_batch<S: Scalar>(t: &Tensor<S>, unbatched_rank: usize) -> Result<(Tensor<S>, bool)> {
    if t.rank() == unbatched_rank {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        Ok((t.clone().reshape(shape)?, true))
    } else {
        Ok((t.clone(), false))
    }
}

fn drop_batch<S: Scalar>(t: Tensor<S>, squeeze: bool) -> Result<Tensor<S>> {
    if squeeze {
        let shape = t.shape()[1..].to_vec();
        t.reshape(shape)
    } else {
        Ok(t)
    }
}

/// Eval-mode content encoder: `T×3200` windows to `T×256` GRU states.
pub fn encode_audio_sequence<S: Scalar>(windows: &Tensor<S>, params: &ModelParams<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new(params, Mode::Eval, false);
    let w = g.tape.constant(windows.clone());
    let emb = g.audio_embeddings(w)?;
    let steps = g.tape.shape(emb)[0];
    let hs = g.audio_gru(emb, 0, steps)?;
    let z = g.tape.concat(&hs, 0)?;
    expect_shape(&g.tape, z, "z_aud", &[steps, Z_AUD])?;
    Ok(g.tape.value(z).clone())
}

/// Eval-mode identity encoder on `3×96×128` (or `N×3×96×128`) input.
pub fn encode_identity<S: Scalar>(image: &Tensor<S>, params: &ModelParams<S>) -> Result<(Tensor<S>, Vec<Tensor<S>>)> {
    let (x, squeeze) = with_batch(image, 3)?;
    let mut g = Graph::new(params, Mode::Eval, false);
    let x = g.tape.constant(x);
    let (z, skips) = g.identity(x)?;
    let z = drop_batch(g.tape.value(z).clone(), squeeze)?;
    let skips = skips
        .into_iter()
        .map(|s| drop_batch(g.tape.value(s).clone(), squeeze))
        .collect::<Result<_>>()?;
    Ok((z, skips))
}

/// `T×10` noise latents: seeded draws passed through the noise GRU.
pub fn sample_noise_sequence<S: Scalar>(t: usize, seed: u64, params: &ModelParams<S>) -> Result<Tensor<S>> {
    if t == 0 {
        return Err(Error::EmptyInput("noise sequence length must be at least 1".into()));
    }
    let draws = noise_draws::<S>(t, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let mut g = Graph::new(params, Mode::Eval, false);
    let d = g.tape.constant(draws);
    let hs = g.noise_gru(d)?;
    let z = g.tape.concat(&hs, 0)?;
    Ok(g.tape.value(z).clone())
}

/// Eval-mode decoder on a `394` latent (or `N×394` batch) and matching skips.
pub fn decode_frame<S: Scalar>(latent: &Tensor<S>, skips: &[Tensor<S>], params: &ModelParams<S>) -> Result<Tensor<S>> {
    let (l, squeeze) = with_batch(latent, 1)?;
    let mut g = Graph::new(params, Mode::Eval, false);
    let l = g.tape.constant(l);
    let skips: Vec<Var> = skips
        .iter()
        .map(|s| Ok(g.tape.constant(with_batch(s, 3)?.0)))
        .collect::<Result<_>>()?;
    let y = g.decode(l, &skips)?;
    drop_batch(g.tape.value(y).clone(), squeeze)
}

/// All intermediate latents of one generated video.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation<S> {
    /// `T×256`
    pub z_aud: Tensor<S>,
    /// `128`
    pub z_id: Tensor<S>,
    /// `T×10`
    pub z_n: Tensor<S>,
    /// `T×394`
    pub latent: Tensor<S>,
    /// `T×3×96×128`
    pub frames: Tensor<S>,
}

/// Generates a video from the sample's audio and one of its frames (eval mode).
pub fn generate_video_detailed(
    sample: &AlignedSample,
    still_index: usize,
    params: &ModelParams<f32>,
    seed: u64,
) -> Result<Generation<f32>> {
    let t = sample.frames();
    if still_index >= t {
        return Err(Error::IndexOutOfRange { what: "still frame", index: still_index, limit: t });
    }
    let mut g = Graph::new(params, Mode::Eval, false);
    let windows = g.tape.constant(sample.windows.clone());
    let still = sample.video.frame_tensor(still_index).reshape([1, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH])?;
    let still = g.tape.constant(still);
    let draws = g.tape.constant(noise_draws(t, &mut ChaCha8Rng::seed_from_u64(seed))?);
    let v = g.generate(windows, still, draws)?;
    let value = |x: Var| g.tape.value(x).clone();
    Ok(Generation {
        z_aud: value(v.z_aud),
        z_id: value(v.z_id).reshape([Z_ID])?,
        z_n: value(v.z_n),
        latent: value(v.latent),
        frames: value(v.frames),
    })
}

/// `T×3×96×128` frames generated from a still frame of the sample and its audio.
pub fn generate_video(sample: &AlignedSample, still_index: usize, params: &ModelParams<f32>, seed: u64) -> Result<Tensor<f32>> {
    Ok(generate_video_detailed(sample, still_index, params, seed)?.frames)
}
