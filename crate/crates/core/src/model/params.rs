use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, AUDIO_STRIDES, DECODER_SEED_HW, LATENT, Z_AUD, Z_ID, Z_N};
use crate::numerics::{BatchNormStats, Scalar, Tensor};

/// Named parameter tensors plus batchnorm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub arch: ArchConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<S>>,
    pub bn_names: Vec<String>,
    pub bn_stats: Vec<BatchNormStats<S>>,
}

enum Init {
    /// Uniform in ±sqrt(1/fan_in).
    Uniform(usize),
    Zeros,
    Ones,
}

struct Builder<S> {
    rng: ChaCha8Rng,
    params: ModelParams<S>,
}

impl<S: Scalar> Builder<S> {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Uniform(fan_in) => {
                let a = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| S::of(self.rng.gen_range(-a..=a))).collect()
            }
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
        };
        self.params.names.push(name);
        self.params.tensors.push(Tensor::new(shape, data).expect("consistent shape"));
    }

    fn bn(&mut self, name: String, c: usize) {
        self.add(format!("{name}.gamma"), vec![c], Init::Ones);
        self.add(format!("{name}.beta"), vec![c], Init::Zeros);
        self.params.bn_names.push(name);
        self.params.bn_stats.push(BatchNormStats::new(c));
    }

    fn gru(&mut self, name: &str, d_in: usize, hidden: usize) {
        self.add(format!("{name}.w_ih"), vec![3 * hidden, d_in], Init::Uniform(d_in));
        self.add(format!("{name}.w_hh"), vec![3 * hidden, hidden], Init::Uniform(hidden));
        self.add(format!("{name}.b_ih"), vec![3 * hidden], Init::Zeros);
        self.add(format!("{name}.b_hh"), vec![3 * hidden], Init::Zeros);
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Deterministic initialization: weights uniform in ±sqrt(1/fan_in), biases
    /// and batchnorm shifts zero, batchnorm scales one.
    pub fn init(arch: ArchConfig, seed: u64) -> Self {
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ModelParams { arch, names: vec![], tensors: vec![], bn_names: vec![], bn_stats: vec![] },
        };

        let mut cin = 1;
        for (k, (&c, &s)) in arch.audio_channels().iter().zip(&AUDIO_STRIDES).enumerate() {
            b.add(format!("audio.conv{k}.weight"), vec![c, cin, s], Init::Uniform(cin * s));
            b.bn(format!("audio.bn{k}"), c);
            cin = c;
        }
        b.add("audio.proj.weight".into(), vec![Z_AUD, cin], Init::Uniform(cin));
        b.add("audio.proj.bias".into(), vec![Z_AUD], Init::Zeros);
        b.gru("audio.gru", Z_AUD, Z_AUD);

        let mut cin = 3;
        for (k, &c) in arch.identity_channels().iter().enumerate() {
            b.add(format!("identity.conv{k}.weight"), vec![c, cin, 4, 4], Init::Uniform(cin * 16));
            b.bn(format!("identity.bn{k}"), c);
            cin = c;
        }
        b.add("identity.proj.weight".into(), vec![Z_ID, cin * 2], Init::Uniform(cin * 2));
        b.add("identity.proj.bias".into(), vec![Z_ID], Init::Zeros);

        b.gru("noise.gru", Z_N, Z_N);

        let dec = arch.decoder_channels();
        let skips = arch.identity_channels();
        let (sh, sw) = DECODER_SEED_HW;
        b.add("decoder.proj.weight".into(), vec![dec[0] * sh * sw, LATENT], Init::Uniform(LATENT));
        b.bn("decoder.bn0".into(), dec[0]);
        for k in 1..6 {
            // block k consumes the skip at its input resolution: 3×4 is identity block 4
            let c_in = dec[k - 1] + skips[5 - k];
            // each output pixel of a k4 s2 transposed conv sees 2×2 input taps per channel
            b.add(format!("decoder.deconv{k}.weight"), vec![c_in, dec[k], 4, 4], Init::Uniform(c_in * 4));
            b.bn(format!("decoder.bn{k}"), dec[k]);
        }
        b.add("decoder.out.weight".into(), vec![3, dec[5], 3, 3], Init::Uniform(dec[5] * 9));
        b.add("decoder.out.bias".into(), vec![3], Init::Zeros);
        b.params
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no parameter named `{name}`")))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index_of(name).ok().map(|i| &self.tensors[i])
    }

    pub fn bn_index_of(&self, name: &str) -> Result<usize> {
        self.bn_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("no batchnorm layer named `{name}`")))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
            && self.bn_stats.iter().all(|s| s.running_mean.iter().chain(&s.running_var).all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::of(x.as_f64())).collect();
        ModelParams {
            arch: self.arch,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            bn_names: self.bn_names.clone(),
            bn_stats: self
                .bn_stats
                .iter()
                .map(|s| BatchNormStats { running_mean: conv(&s.running_mean), running_var: conv(&s.running_var) })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams<f32> {
        ModelParams::init(ArchConfig::new(0.25).unwrap(), 3)
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(params(), params());
        assert_ne!(params().tensors[0], ModelParams::<f32>::init(ArchConfig::new(0.25).unwrap(), 4).tensors[0]);
    }

    #[test]
    fn biases_zero_and_weights_bounded() {
        let p = params();
        for (name, t) in p.names.iter().zip(&p.tensors) {
            if name.ends_with("bias") || name.contains(".b_") || name.ends_with("beta") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else if name.ends_with("gamma") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else {
                let fan_in = if name.starts_with("decoder.deconv") {
                    t.shape()[0] * 4
                } else {
                    t.shape()[1..].iter().product::<usize>()
                };
                let bound = (1.0 / fan_in as f32).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound * (1.0 + 1e-6)), "{name}");
            }
        }
    }

    #[test]
    fn names_are_unique() {
        let p = params();
        let mut names = p.names.clone();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.names.len());
        assert_eq!(p.bn_names.len(), 6 + 6 + 6);
    }
}
