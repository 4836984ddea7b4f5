//! Self-supervised pretraining: random-frame L1 reconstruction with Adam and
//! a stepped learning-rate decay.

mod checkpoint;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint};

use crate::avdata::{AlignedSample, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_LEN, FRAME_WIDTH, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::model::{noise_draws, ArchConfig, Graph, ModelParams, Z_AUD, Z_N};
use crate::numerics::{adam_step, AdamConfig, AdamState, BatchNormStats, Mode, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_interval_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub width_multiplier: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.06,
            decay_factor: 0.98,
            decay_interval_epochs: 10,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            width_multiplier: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.base_lr) || !positive(self.decay_factor) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        if self.decay_interval_epochs == 0 {
            return Err(Error::Config("decay interval must be at least one epoch".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 (batchnorm needs two samples)".into()));
        }
        self.arch().map(|_| ())
    }

    pub fn arch(&self) -> Result<ArchConfig> {
        ArchConfig::new(self.width_multiplier)
    }
}

/// `base_lr · decay_factor^⌊epoch / decay_interval⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.decay_factor.powi((epoch / cfg.decay_interval_epochs) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps; seeds each step's random draws.
    pub cursor: u64,
    /// Mean L1 per completed epoch.
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            params: ModelParams::init(cfg.arch()?, cfg.seed),
            adam: AdamState::new(AdamConfig::default()),
            epoch: 0,
            cursor: 0,
            loss_history: Vec::new(),
        })
    }
}

fn mix(seed: u64, stream: u64, k: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 31;
    x.wrapping_mul(0x94D0_49BB_1331_11EB)
}

const STEP_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Result of one train-mode forward/backward pass.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss: f64,
    /// Per parameter, in `ModelParams::names` order.
    pub grads: Vec<Option<Vec<f32>>>,
    /// Batchnorm running statistics after this batch.
    pub stats: Vec<BatchNormStats<f32>>,
}

/// Reconstruction loss and gradients of one batch, without updating anything.
/// Frame indices and noise are drawn from `rng`.
pub fn reconstruction_gradients(
    batch: &[&AlignedSample],
    params: &ModelParams<f32>,
    rng: &mut impl Rng,
) -> Result<BatchGradients> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mut frame_idx = Vec::with_capacity(n);
    let mut draws = Vec::with_capacity(n);
    for s in batch {
        if s.frames() == 0 {
            return Err(Error::EmptyInput(format!("sample {} has no frames", s.id)));
        }
        let t = rng.gen_range(0..s.frames());
        frame_idx.push(t);
        draws.push(noise_draws::<f32>(t + 1, rng)?);
    }
    let rows: usize = frame_idx.iter().map(|t| t + 1).sum();
    let mut windows = Vec::with_capacity(rows * WINDOW_LEN);
    let mut stills = Vec::with_capacity(n * FRAME_LEN);
    let mut targets = Vec::with_capacity(n * FRAME_LEN);
    for (s, &t) in batch.iter().zip(&frame_idx) {
        windows.extend_from_slice(&s.windows.data()[..(t + 1) * WINDOW_LEN]);
        stills.extend_from_slice(s.video.frame(0));
        targets.extend_from_slice(s.video.frame(t));
    }
    let image = [n, FRAME_CHANNELS, FRAME_HEIGHT, FRAME_WIDTH];

    let mut g = Graph::new(params, Mode::Train, true);
    let windows = g.tape.constant(Tensor::new([rows, WINDOW_LEN], windows)?);
    let emb = g.audio_embeddings(windows)?;
    let mut z_aud = Vec::with_capacity(n);
    let mut z_n = Vec::with_capacity(n);
    let mut offset = 0;
    for (&t, d) in frame_idx.iter().zip(draws) {
        let hs = g.audio_gru(emb, offset, t + 1)?;
        z_aud.push(*hs.last().expect("at least one step"));
        offset += t + 1;
        let d = g.tape.constant(d);
        let ns = g.noise_gru(d)?;
        z_n.push(*ns.last().expect("at least one step"));
    }
    let z_aud = g.tape.concat(&z_aud, 0)?;
    let z_n = g.tape.concat(&z_n, 0)?;
    debug_assert_eq!(g.tape.shape(z_aud), [n, Z_AUD]);
    debug_assert_eq!(g.tape.shape(z_n), [n, Z_N]);
    let stills = g.tape.constant(Tensor::new(image, stills)?);
    let (z_id, skips) = g.identity(stills)?;
    let latent = g.tape.concat(&[z_aud, z_id, z_n], 1)?;
    let generated = g.decode(latent, &skips)?;
    let real = g.tape.constant(Tensor::new(image, targets)?);
    let loss = g.tape.l1_loss(generated, real)?;
    let value = g.tape.value(loss).item() as f64;
    if !value.is_finite() {
        let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
        return Err(Error::NonFinite(format!("reconstruction loss {value} on samples {ids:?}")));
    }
    g.tape.backward(loss)?;
    let grads = g.param_vars().iter().map(|&v| g.tape.grad(v).map(<[f32]>::to_vec)).collect();
    Ok(BatchGradients { loss: value, grads, stats: g.stats })
}

/// One optimizer step on `batch`: each sample contributes the L1 error of one
/// uniformly drawn frame, generated from frame 0 and the audio up to that frame.
pub fn train_step(batch: &[&AlignedSample], state: &mut TrainState, cfg: &TrainConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, STEP_STREAM, state.cursor));
    let BatchGradients { loss, grads, stats } = reconstruction_gradients(batch, &state.params, &mut rng).map_err(|e| match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {}: {msg}", state.epoch + 1)),
        other => other,
    })?;
    let grads: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
    adam_step(&mut state.params.tensors, &grads, &mut state.adam, lr_at(state.epoch, cfg))?;
    state.params.bn_stats = stats;
    state.cursor += 1;
    Ok(loss)
}

/// Batch boundaries for one epoch: a trailing single sample joins the previous
/// batch because train-mode batchnorm needs at least two.
pub fn epoch_batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let len = batches.len();
        let start = (len - 2) * batch_size;
        batches.truncate(len - 2);
        batches.push(&order[start..]);
    }
    batches
}

pub fn epoch_order(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, SHUFFLE_STREAM, epoch as u64)));
    order
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Rewritten after every epoch.
    pub checkpoint: Option<PathBuf>,
    /// CSV `epoch,lr,mean_l1,wall_seconds`.
    pub metrics: Option<PathBuf>,
    pub verbose: bool,
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(corpus: &[AlignedSample], cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainState> {
    train_from(TrainState::new(cfg)?, corpus, cfg, opts)
}

/// Continues `state` until `cfg.epochs` epochs are complete.
pub fn train_from(mut state: TrainState, corpus: &[AlignedSample], cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainState> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus is empty".into()));
    }
    if corpus.len() < 2 {
        return Err(Error::BatchTooSmall(corpus.len()));
    }
    if state.params.arch != cfg.arch()? {
        return Err(Error::ArchitectureMismatch(format!(
            "state has width_multiplier {}, configuration asks for {}",
            state.params.arch.width_multiplier, cfg.width_multiplier
        )));
    }
    let mut metrics = match &opts.metrics {
        Some(path) => {
            let append = state.epoch > 0 && path.is_file();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(append)
                .write(true)
                .truncate(!append)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            if !append {
                writeln!(f, "epoch,lr,mean_l1,wall_seconds").map_err(|e| Error::io(path, e))?;
            }
            Some((f, path.clone()))
        }
        None => None,
    };
    while state.epoch < cfg.epochs {
        let started = Instant::now();
        let order = epoch_order(corpus.len(), state.epoch, cfg.seed);
        let mut total = 0.0;
        for idx in epoch_batches(&order, cfg.batch_size) {
            let batch: Vec<&AlignedSample> = idx.iter().map(|&i| &corpus[i]).collect();
            total += train_step(&batch, &mut state, cfg)? * batch.len() as f64;
        }
        let mean = total / corpus.len() as f64;
        let lr = lr_at(state.epoch, cfg);
        state.epoch += 1;
        state.loss_history.push(mean);
        let secs = started.elapsed().as_secs_f64();
        if let Some((f, path)) = metrics.as_mut() {
            writeln!(f, "{},{lr},{mean},{secs:.3}", state.epoch).map_err(|e| Error::io(&*path, e))?;
        }
        if let Some(path) = &opts.checkpoint {
            save_checkpoint(&state, path)?;
        }
        if opts.verbose {
            eprintln!("epoch {:>3}/{}  lr {lr:.6}  mean_l1 {mean:.5}  ({secs:.1}s)", state.epoch, cfg.epochs);
        }
    }
    Ok(state)
}
