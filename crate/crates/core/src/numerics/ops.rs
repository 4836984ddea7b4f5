//! Forward kernels for the non-convolutional ops, plus their tensor-level entry points.

use crate::error::{Error, Result};
use crate::numerics::{matmul, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output<S: Scalar>(self, y: S) -> S {
        match self {
            Activation::Relu => {
                if y > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Tanh => S::one() - y * y,
            Activation::Sigmoid => y * (S::one() - y),
        }
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn activation<S: Scalar>(x: &Tensor<S>, kind: Activation) -> Tensor<S> {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Shape bookkeeping for `y = x·Wᵀ + b` where `x` is `D_in` or `rows×D_in`.
#[derive(Clone, Copy, Debug)]
pub struct LinearPlan {
    pub rows: usize,
    pub d_in: usize,
    pub d_out: usize,
    batched: bool,
}

impl LinearPlan {
    pub fn new(x: &[usize], weight: &[usize], bias: Option<&[usize]>) -> Result<Self> {
        let &[d_out, d_in] = weight else {
            return Err(Error::shape("linear", format!("weight must be D_out×D_in, got {weight:?}")));
        };
        let (rows, batched) = match *x {
            [d] if d == d_in => (1, false),
            [r, d] if d == d_in => (r, true),
            _ => return Err(Error::shape("linear", format!("input {x:?} incompatible with weight {weight:?}"))),
        };
        if let Some(b) = bias {
            if b.iter().product::<usize>() != d_out {
                return Err(Error::shape("linear", format!("bias {b:?} does not match D_out = {d_out}")));
            }
        }
        Ok(Self { rows, d_in, d_out, batched })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        if self.batched {
            vec![self.rows, self.d_out]
        } else {
            vec![self.d_out]
        }
    }

    pub fn forward<S: Scalar>(&self, x: &[S], weight: &[S], bias: Option<&[S]>) -> Vec<S> {
        let mut y = vec![S::zero(); self.rows * self.d_out];
        if let Some(b) = bias {
            for row in y.chunks_mut(self.d_out) {
                row.copy_from_slice(b);
            }
        }
        matmul(x, false, weight, true, &mut y, self.rows, self.d_in, self.d_out, bias.is_some());
        y
    }
}

pub fn linear<S: Scalar>(x: &Tensor<S>, weight: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
    let plan = LinearPlan::new(x.shape(), weight.shape(), bias.map(|b| b.shape()))?;
    Tensor::new(plan.out_shape(), plan.forward(x.data(), weight.data(), bias.map(|b| b.data())))
}

/// Running statistics of one batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<S> {
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
}

impl<S: Scalar> BatchNormStats<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// `(N, C, S)` view of an `N×C×…` tensor.
pub(crate) fn bn_dims(op: &'static str, shape: &[usize], channels: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::shape(op, format!("input {shape:?} must be N×{channels}×…")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Result of a train-mode batchnorm forward pass.
pub(crate) struct BnTrainOut<S> {
    pub y: Vec<S>,
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
    pub mean: Vec<S>,
    /// Unbiased per-channel variance, used for the running estimate.
    pub var_unbiased: Vec<S>,
}

pub(crate) fn bn_train_forward<S: Scalar>(x: &[S], (n, c, s): (usize, usize, usize), gamma: &[S], beta: &[S], eps: S) -> BnTrainOut<S> {
    let m = S::of((n * s) as f64);
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let chunk = &x[(ni * c + ci) * s..(ni * c + ci + 1) * s];
            mean[ci] = mean[ci] + chunk.iter().copied().sum::<S>();
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / m);
    for ni in 0..n {
        for ci in 0..c {
            let chunk = &x[(ni * c + ci) * s..(ni * c + ci + 1) * s];
            var[ci] = var[ci] + chunk.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<S>();
        }
    }
    let var_unbiased: Vec<S> = var.iter().map(|&v| v / (m - S::one())).collect();
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v / m + eps).sqrt()).collect();
    let mut xhat = vec![S::zero(); x.len()];
    let mut y = vec![S::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * s;
            for i in base..base + s {
                xhat[i] = (x[i] - mean[ci]) * inv_std[ci];
                y[i] = gamma[ci] * xhat[i] + beta[ci];
            }
        }
    }
    BnTrainOut { y, xhat, inv_std, mean, var_unbiased }
}

pub(crate) fn bn_update_running<S: Scalar>(stats: &mut BatchNormStats<S>, mean: &[S], var_unbiased: &[S], momentum: S) {
    let keep = S::one() - momentum;
    for (r, &m) in stats.running_mean.iter_mut().zip(mean) {
        *r = keep * *r + momentum * m;
    }
    for (r, &v) in stats.running_var.iter_mut().zip(var_unbiased) {
        *r = keep * *r + momentum * v;
    }
}

/// Batch normalization over `N×C×…`; train mode normalizes with batch statistics
/// and updates `stats`, eval mode uses the running estimates.
pub fn batchnorm<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    stats: &mut BatchNormStats<S>,
    mode: Mode,
    momentum: S,
    eps: S,
) -> Result<Tensor<S>> {
    let c = gamma.numel();
    let dims = bn_dims("batchnorm", x.shape(), c)?;
    if beta.numel() != c || stats.running_mean.len() != c || stats.running_var.len() != c {
        return Err(Error::shape("batchnorm", format!("parameters/statistics do not all have {c} channels")));
    }
    match mode {
        Mode::Train => {
            if dims.0 < 2 {
                return Err(Error::BatchTooSmall(dims.0));
            }
            let out = bn_train_forward(x.data(), dims, gamma.data(), beta.data(), eps);
            bn_update_running(stats, &out.mean, &out.var_unbiased, momentum);
            Tensor::new(x.shape().to_vec(), out.y)
        }
        Mode::Eval => {
            let (scale, shift) = bn_eval_affine(gamma.data(), beta.data(), stats, eps);
            Tensor::new(x.shape().to_vec(), bn_apply_affine(x.data(), dims, &scale, &shift))
        }
    }
}

/// Eval-mode batchnorm folded into a per-channel `scale·x + shift`.
pub(crate) fn bn_eval_affine<S: Scalar>(gamma: &[S], beta: &[S], stats: &BatchNormStats<S>, eps: S) -> (Vec<S>, Vec<S>) {
    let scale: Vec<S> = gamma
        .iter()
        .zip(&stats.running_var)
        .map(|(&g, &v)| g / (v + eps).sqrt())
        .collect();
    let shift = beta
        .iter()
        .zip(&stats.running_mean)
        .zip(&scale)
        .map(|((&b, &m), &sc)| b - m * sc)
        .collect();
    (scale, shift)
}

pub(crate) fn bn_apply_affine<S: Scalar>(x: &[S], (n, c, s): (usize, usize, usize), scale: &[S], shift: &[S]) -> Vec<S> {
    let mut y = vec![S::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * s;
            for i in base..base + s {
                y[i] = scale[ci] * x[i] + shift[ci];
            }
        }
    }
    y
}

/// Mean absolute difference.
pub fn l1_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<S> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("l1_loss", format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    Ok(l1_value(pred.data(), target.data()))
}

pub(crate) fn l1_value<S: Scalar>(p: &[S], t: &[S]) -> S {
    let sum = p.iter().zip(t).map(|(&a, &b)| (a - b).abs()).sum::<S>();
    sum / S::of(p.len() as f64)
}

/// Row-wise softmax probabilities and the mean negative log-likelihood of `labels`.
pub(crate) fn softmax_xent<S: Scalar>(logits: &[S], classes: usize, labels: &[usize]) -> Result<(Vec<S>, S)> {
    let mut probs = vec![S::zero(); logits.len()];
    let mut loss = S::zero();
    for (r, (row, &label)) in logits.chunks(classes).zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::IndexOutOfRange { what: "label", index: label, limit: classes });
        }
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        for (j, &v) in row.iter().enumerate() {
            probs[r * classes + j] = ((v - max) - log_sum).exp();
        }
        loss = loss - ((row[label] - max) - log_sum);
    }
    Ok((probs, loss / S::of(labels.len() as f64)))
}

/// Mean softmax cross-entropy of `N×C` logits against integer labels.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<S> {
    let (n, c) = logits_dims(logits.shape())?;
    if labels.len() != n {
        return Err(Error::shape("cross_entropy", format!("{n} rows but {} labels", labels.len())));
    }
    Ok(softmax_xent(logits.data(), c, labels)?.1)
}

pub(crate) fn logits_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [c] => Ok((1, c)),
        [n, c] => Ok((n, c)),
        _ => Err(Error::shape("cross_entropy", format!("logits must be C or N×C, got {shape:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn activations_on_known_points() {
        assert_eq!(activation(&t(&[3], &[-2.0, 0.0, 3.0]), Activation::Relu).data(), &[0.0, 0.0, 3.0]);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert!(Activation::Sigmoid.apply(-800.0f64).is_finite());
    }

    #[test]
    fn linear_examples() {
        let x = t(&[2], &[2.0, 3.0]);
        assert_eq!(linear(&x, &t(&[1, 2], &[1.0, 1.0]), Some(&t(&[1], &[0.0]))).unwrap().data(), &[5.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(linear(&x, &eye, Some(&t(&[2], &[0.0, 0.0]))).unwrap(), x);
        assert!(linear(&t(&[3], &[0.0; 3]), &eye, None).is_err());
    }

    #[test]
    fn batchnorm_eval_identity() {
        let x = t(&[2, 2, 3], &[0.5, -1.0, 2.0, 3.0, 0.0, -4.0, 1.0, 1.5, 2.5, -0.5, 0.25, 9.0]);
        let mut stats = BatchNormStats::new(2);
        let y = batchnorm(&x, &t(&[2], &[1.0, 1.0]), &t(&[2], &[0.0, 0.0]), &mut stats, Mode::Eval, 0.1, 0.0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn batchnorm_train_hand_normalization() {
        let x = t(&[2, 1], &[1.0, -1.0]);
        let mut stats = BatchNormStats::new(1);
        let y = batchnorm(&x, &t(&[1], &[1.0]), &t(&[1], &[0.0]), &mut stats, Mode::Train, 0.1, 1e-5).unwrap();
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] - want).abs() < 1e-12);
        assert!((y.data()[1] + want).abs() < 1e-12);
        // running stats: mean stays 0, var = 0.9·1 + 0.1·2 (unbiased variance of {1,−1} is 2)
        assert!(stats.running_mean[0].abs() < 1e-15);
        assert!((stats.running_var[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_zero_mean_per_channel() {
        let data: Vec<f64> = (0..4 * 3 * 5).map(|i| ((i * 7 % 11) as f64).sin() * 3.0 + 1.0).collect();
        let x = t(&[4, 3, 5], &data);
        let mut stats = BatchNormStats::new(3);
        let y = batchnorm(&x, &t(&[3], &[1.0; 3]), &t(&[3], &[0.0; 3]), &mut stats, Mode::Train, 0.1, 1e-5).unwrap();
        for c in 0..3 {
            let mut sum = 0.0;
            for n in 0..4 {
                sum += y.data()[(n * 3 + c) * 5..(n * 3 + c + 1) * 5].iter().sum::<f64>();
            }
            assert!((sum / 20.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_train_rejects_single_sample() {
        let mut stats = BatchNormStats::new(1);
        let err = batchnorm(&t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]), &t(&[1], &[1.0]), &t(&[1], &[0.0]), &mut stats, Mode::Train, 0.1, 1e-5);
        assert!(matches!(err, Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn l1_examples() {
        let a = t(&[2], &[1.0, 2.0]);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_loss(&a, &t(&[2], &[0.0, 0.0])).unwrap(), 1.5);
        assert!(l1_loss(&a, &t(&[3], &[0.0; 3])).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = t(&[1, 6], &[0.3; 6]);
        assert!((cross_entropy(&uniform, &[2]).unwrap() - 6f64.ln()).abs() < 1e-12);
        let confident = t(&[1, 3], &[0.0, 1000.0, 0.0]);
        assert!(cross_entropy(&confident, &[1]).unwrap().abs() < 1e-12);
        assert!(matches!(cross_entropy(&uniform, &[6]), Err(Error::IndexOutOfRange { .. })));
    }
}
