use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub config: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
            config,
        }
    }

    pub fn for_params(params: &[Tensor<S>], config: AdamConfig) -> Self {
        let zeros = |p: &Tensor<S>| Tensor::zeros(p.shape().to_vec());
        Self {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            config,
        }
    }
}

/// One bias-corrected Adam update. `grads[i] = None` leaves parameter `i` and its
/// moments untouched. A non-finite gradient aborts the step before any mutation.
pub fn adam_step<S: Scalar>(
    params: &mut [Tensor<S>],
    grads: &[Option<&[S]>],
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameters but {} gradients", params.len(), grads.len()),
        ));
    }
    if state.m.is_empty() && state.step == 0 {
        *state = AdamState::for_params(params, state.config);
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("optimizer tracks {} parameters, got {}", state.m.len(), params.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape() {
            return Err(Error::shape("adam_step", format!("moment shape mismatch for parameter #{i}")));
        }
        if let Some(g) = g {
            if g.len() != p.numel() {
                return Err(Error::shape("adam_step", format!("gradient length mismatch for parameter #{i}")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::PoisonedGradient { param: i });
            }
        }
    }

    state.step += 1;
    let cfg = state.config;
    let b1 = S::of(cfg.beta1);
    let b2 = S::of(cfg.beta2);
    let eps = S::of(cfg.epsilon);
    let t = state.step as i32;
    let c1 = S::of(1.0 - cfg.beta1.powi(t));
    let c2 = S::of(1.0 - cfg.beta2.powi(t));
    let lr = S::of(lr);
    for (i, p) in params.iter_mut().enumerate() {
        let Some(g) = grads[i] else { continue };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (S::one() - b1) * g[j];
            v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_f64([1], &[v]).unwrap()]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one(0.0);
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &[Some(&[1.0])], &mut st, 0.1).unwrap();
        // m̂ = v̂ = 1 ⇒ Δ = −lr·1/(1 + ε)
        assert!((p[0].item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = one(0.25);
        let mut st = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &[Some(&[0.0])], &mut st, 0.1).unwrap();
        assert_eq!(p[0].item(), 0.25);
    }

    #[test]
    fn deterministic_from_identical_state() {
        let mut st = AdamState::new(AdamConfig::default());
        let mut p = one(1.0);
        adam_step(&mut p, &[Some(&[0.3])], &mut st, 0.01).unwrap();
        let (mut p1, mut s1) = (p.clone(), st.clone());
        let (mut p2, mut s2) = (p.clone(), st.clone());
        adam_step(&mut p1, &[Some(&[-0.7])], &mut s1, 0.01).unwrap();
        adam_step(&mut p2, &[Some(&[-0.7])], &mut s2, 0.01).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn nan_gradient_is_rejected_without_mutation() {
        let mut p = one(1.0);
        let mut st = AdamState::for_params(&p, AdamConfig::default());
        let before = (p.clone(), st.clone());
        let err = adam_step(&mut p, &[Some(&[f64::NAN])], &mut st, 0.1);
        assert!(matches!(err, Err(Error::PoisonedGradient { param: 0 })));
        assert_eq!((p, st), before);
    }
}
