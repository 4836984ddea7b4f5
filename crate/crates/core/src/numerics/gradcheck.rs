//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::ops::{Activation, BatchNormStats, Mode};
use crate::numerics::recurrent::{gru_step, lstm_step, RecurrentVars};
use crate::numerics::{Tape, Tensor, Var};

/// Largest step of the adaptive ladder.
pub const DEFAULT_STEP: f64 = 1e-2;
const LADDER: usize = 5;

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Five-point central difference of a function of an offset,
/// `(−f(2h) + 8f(h) − 8f(−h) + f(−2h)) / 12h`; truncation error is O(h⁴), so a
/// fairly large `h` keeps rounding noise small without losing accuracy.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let (p1, m1) = (f(h)?, f(-h)?);
    let (p2, m2) = (f(2.0 * h)?, f(-2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// [`central_difference`] over the steps `h, h/4, h/16, …`, returning the
/// estimate at which consecutive steps agree best. Large steps lose to
/// curvature, small ones to rounding; their agreement marks the sweet spot
/// without reference to any analytic value.
pub fn adaptive_difference(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let mut estimates = Vec::with_capacity(LADDER);
    let mut step = h;
    for _ in 0..LADDER {
        estimates.push(central_difference(&mut f, step)?);
        step /= 4.0;
    }
    let best = estimates
        .windows(2)
        .enumerate()
        .min_by(|(_, a), (_, b)| (a[0] - a[1]).abs().total_cmp(&(b[0] - b[1]).abs()))
        .map(|(i, _)| i + 1)
        .expect("ladder has at least two steps");
    Ok(estimates[best])
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::shape("grad_check", "function must return a scalar"));
    }
    let v = tape.value(out).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("grad_check: f evaluated to {v}")));
    }
    Ok(v)
}

/// Max relative error between back-propagated and central-difference gradients
/// of `f` with respect to every coordinate of every input.
pub fn grad_check_inputs<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    evaluate(&f, inputs)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let x0 = inputs[k].data()[j];
            let numeric = adaptive_difference(
                |d| {
                    work[k].data_mut()[j] = x0 + d;
                    evaluate(&f, &work)
                },
                h,
            )?;
            work[k].data_mut()[j] = x0;
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_inputs`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Outcome of checking one op family.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Values bounded away from zero, for kinked functions.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Scalarizes `y` as `Σ r ⊙ y` with a fixed random `r`.
fn project(tape: &mut Tape<f64>, y: Var, r: &Tensor<f64>) -> Result<Var> {
    let rv = tape.constant(r.clone().reshape(tape.shape(y).to_vec())?);
    let prod = tape.mul(y, rv)?;
    tape.sum(prod)
}

fn run_op(
    op: &'static str,
    instances: usize,
    rng: &mut ChaCha8Rng,
    mut one: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> Result<OpCheck> {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        worst = worst.max(one(rng)?);
    }
    Ok(OpCheck { op, instances, max_rel_error: worst })
}

/// Gradient checks for every differentiable op, each on `instances` random
/// small-shape problems in double precision.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = DEFAULT_STEP;
    let mut out = Vec::new();

    out.push(run_op("conv1d", instances, &mut rng, |rng| {
        let (n, cin, cout, k) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..2);
        let l = rng.gen_range(k..k + 6);
        let x = uniform(rng, &[n, cin, l], -1.0, 1.0);
        let w = uniform(rng, &[cout, cin, k], -1.0, 1.0);
        let b = uniform(rng, &[cout], -1.0, 1.0);
        let lo = (l + 2 * pad - k) / stride + 1;
        let r = uniform(rng, &[n * cout * lo], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let y = t.conv1d(v[0], v[1], Some(v[2]), stride, pad)?;
                project(t, y, &r)
            },
            &[x, w, b],
            h,
        )
    })?);

    out.push(run_op("conv2d", instances, &mut rng, |rng| {
        let (n, cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3));
        let k = rng.gen_range(1..4);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..2);
        let (hh, ww) = (rng.gen_range(k..k + 4), rng.gen_range(k..k + 4));
        let x = uniform(rng, &[n, cin, hh, ww], -1.0, 1.0);
        let w = uniform(rng, &[cout, cin, k, k], -1.0, 1.0);
        let b = uniform(rng, &[cout], -1.0, 1.0);
        let ho = (hh + 2 * pad - k) / stride + 1;
        let wo = (ww + 2 * pad - k) / stride + 1;
        let r = uniform(rng, &[n * cout * ho * wo], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                project(t, y, &r)
            },
            &[x, w, b],
            h,
        )
    })?);

    out.push(run_op("conv_transpose2d", instances, &mut rng, |rng| {
        let (n, cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3));
        let k = rng.gen_range(2..5);
        let stride = rng.gen_range(1..3);
        let pad = rng.gen_range(0..=(k - 1) / 2);
        let (hh, ww) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let ho = (hh - 1) * stride + k - 2 * pad;
        let wo = (ww - 1) * stride + k - 2 * pad;
        let x = uniform(rng, &[n, cin, hh, ww], -1.0, 1.0);
        let w = uniform(rng, &[cin, cout, k, k], -1.0, 1.0);
        let b = uniform(rng, &[cout], -1.0, 1.0);
        let r = uniform(rng, &[n * cout * ho * wo], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), stride, pad)?;
                project(t, y, &r)
            },
            &[x, w, b],
            h,
        )
    })?);

    out.push(run_op("batchnorm_train", instances, &mut rng, |rng| {
        let (n, c, s) = (rng.gen_range(2..4), rng.gen_range(1..4), rng.gen_range(1..5));
        let x = uniform(rng, &[n, c, s], -2.0, 2.0);
        let g = uniform(rng, &[c], 0.5, 1.5);
        let b = uniform(rng, &[c], -0.5, 0.5);
        let r = uniform(rng, &[n * c * s], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let mut stats = BatchNormStats::new(c);
                let y = t.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Train, 0.1, 1e-5)?;
                project(t, y, &r)
            },
            &[x, g, b],
            h,
        )
    })?);

    out.push(run_op("batchnorm_eval", instances, &mut rng, |rng| {
        let (n, c, s) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..5));
        let x = uniform(rng, &[n, c, s], -2.0, 2.0);
        let g = uniform(rng, &[c], 0.5, 1.5);
        let b = uniform(rng, &[c], -0.5, 0.5);
        let stats = BatchNormStats {
            running_mean: (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            running_var: (0..c).map(|_| rng.gen_range(0.5..2.0)).collect(),
        };
        let r = uniform(rng, &[n * c * s], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let mut st = stats.clone();
                let y = t.batchnorm(v[0], v[1], v[2], &mut st, Mode::Eval, 0.1, 1e-5)?;
                project(t, y, &r)
            },
            &[x, g, b],
            h,
        )
    })?);

    out.push(run_op("gru_step", instances, &mut rng, |rng| {
        let (n, d, hid) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let inputs = [
            uniform(rng, &[n, d], -1.0, 1.0),
            uniform(rng, &[n, hid], -1.0, 1.0),
            uniform(rng, &[3 * hid, d], -1.0, 1.0),
            uniform(rng, &[3 * hid, hid], -1.0, 1.0),
            uniform(rng, &[3 * hid], -0.5, 0.5),
            uniform(rng, &[3 * hid], -0.5, 0.5),
        ];
        let r = uniform(rng, &[n * hid], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let p = RecurrentVars { w_ih: v[2], w_hh: v[3], b_ih: v[4], b_hh: v[5] };
                let y = gru_step(t, v[0], v[1], &p)?;
                project(t, y, &r)
            },
            &inputs,
            h,
        )
    })?);

    out.push(run_op("lstm_cell", instances, &mut rng, |rng| {
        let (n, d, hid) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let inputs = [
            uniform(rng, &[n, d], -1.0, 1.0),
            uniform(rng, &[n, hid], -1.0, 1.0),
            uniform(rng, &[n, hid], -1.0, 1.0),
            uniform(rng, &[4 * hid, d], -1.0, 1.0),
            uniform(rng, &[4 * hid, hid], -1.0, 1.0),
            uniform(rng, &[4 * hid], -0.5, 0.5),
            uniform(rng, &[4 * hid], -0.5, 0.5),
        ];
        let rh = uniform(rng, &[n * hid], -1.0, 1.0);
        let rc = uniform(rng, &[n * hid], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let p = RecurrentVars { w_ih: v[3], w_hh: v[4], b_ih: v[5], b_hh: v[6] };
                let (hn, cn) = lstm_step(t, v[0], v[1], v[2], &p)?;
                let a = project(t, hn, &rh)?;
                let b = project(t, cn, &rc)?;
                t.add(a, b)
            },
            &inputs,
            h,
        )
    })?);

    out.push(run_op("linear", instances, &mut rng, |rng| {
        let (n, di, d) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = [
            uniform(rng, &[n, di], -1.0, 1.0),
            uniform(rng, &[d, di], -1.0, 1.0),
            uniform(rng, &[d], -1.0, 1.0),
        ];
        let r = uniform(rng, &[n * d], -1.0, 1.0);
        grad_check_inputs(
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                project(t, y, &r)
            },
            &inputs,
            h,
        )
    })?);

    for (name, kind) in [("relu", Activation::Relu), ("tanh", Activation::Tanh), ("sigmoid", Activation::Sigmoid)] {
        out.push(run_op(name, instances, &mut rng, |rng| {
            let n = rng.gen_range(1..8);
            let x = away_from_zero(rng, &[n]);
            let r = uniform(rng, &[n], -1.0, 1.0);
            grad_check(
                |t, v| {
                    let y = t.activation(v, kind)?;
                    project(t, y, &r)
                },
                &x,
                h,
            )
        })?);
    }

    out.push(run_op("l1_loss", instances, &mut rng, |rng| {
        let n = rng.gen_range(1..10);
        let target = uniform(rng, &[n], -1.0, 1.0);
        let offset = away_from_zero(rng, &[n]);
        let pred = Tensor::new([n], target.data().iter().zip(offset.data()).map(|(a, b)| a + b).collect())?;
        grad_check_inputs(|t, v| t.l1_loss(v[0], v[1]), &[pred, target], h)
    })?);

    out.push(run_op("cross_entropy", instances, &mut rng, |rng| {
        let (n, c) = (rng.gen_range(1..4), rng.gen_range(2..6));
        let logits = uniform(rng, &[n, c], -3.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        grad_check(|t, v| t.cross_entropy(v, &labels), &logits, h)
    })?);

    Ok(out)
}

/// Largest `|⟨conv2d(x), y⟩ − ⟨x, conv_transpose2d(y)⟩|`, relative to the
/// magnitude of the inner products, over `cases` random shapes sharing one weight.
pub fn adjoint_check(seed: u64, cases: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (n, cin, cout) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
        let k = rng.gen_range(1..5);
        let stride = rng.gen_range(1..4);
        let pad = rng.gen_range(0..=(k - 1) / 2);
        // input sizes for which the transposed conv maps back onto exactly H×W
        let (ho, wo) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let (hh, ww) = ((ho - 1) * stride + k - 2 * pad, (wo - 1) * stride + k - 2 * pad);
        let x = uniform(&mut rng, &[n, cin, hh, ww], -1.0, 1.0);
        let w = uniform(&mut rng, &[cout, cin, k, k], -1.0, 1.0);
        let y = uniform(&mut rng, &[n, cout, ho, wo], -1.0, 1.0);
        let ax = crate::numerics::conv2d(&x, &w, None, stride, pad)?;
        let aty = crate::numerics::conv_transpose2d(&y, &w, None, stride, pad)?;
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let (lhs, rhs) = (dot(&ax, &y), dot(&x, &aty));
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    Ok(worst)
}
