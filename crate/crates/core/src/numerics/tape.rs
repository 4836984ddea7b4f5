//! Reverse-mode differentiation on a linear tape.
//!
//! Every op appends one node holding its output value. `backward` walks the
//! tape from the root to the front, so nodes are always visited after all of
//! their consumers. Gradients are only propagated into nodes that (transitively)
//! depend on a leaf created with `requires_grad`.

use crate::error::{Error, Result};
use crate::numerics::conv::ConvPlan;
use crate::numerics::ops::{
    bn_apply_affine, bn_dims, bn_eval_affine, bn_train_forward, bn_update_running, l1_value,
    logits_dims, softmax_xent, Activation, BatchNormStats, LinearPlan, Mode,
};
use crate::numerics::{matmul, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, plan: ConvPlan },
    Linear { x: Var, w: Var, b: Option<Var>, plan: LinearPlan },
    BnTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<S>, inv_std: Vec<S>, dims: (usize, usize, usize) },
    BnEval { x: Var, gamma: Var, beta: Var, scale: Vec<S>, xhat: Vec<S>, dims: (usize, usize, usize) },
    Act { x: Var, kind: Activation },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    RepeatBatch { x: Var, times: usize },
    Sum { x: Var },
    L1 { pred: Var, target: Var },
    Xent { logits: Var, labels: Vec<usize>, probs: Vec<S> },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        self.nodes.push(Node { value: tensor, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<S>, op: Op<S>, inputs: &[Var]) -> Result<Var> {
        let rg = inputs.iter().any(|&v| self.needs(v));
        let value = Tensor::new(shape, data)?.with_requires_grad(rg);
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn bias_check(&self, op: &'static str, b: Option<Var>, n: usize) -> Result<()> {
        match b {
            Some(b) if self.value(b).numel() != n => {
                Err(Error::shape(op, format!("bias has {} entries, expected {n}", self.value(b).numel())))
            }
            _ => Ok(()),
        }
    }

    fn conv_with(&mut self, op: &'static str, plan: ConvPlan, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.bias_check(op, b, plan.cout)?;
        let data = plan.forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(plan.out_shape(), data, Op::Conv { x, w, b, plan }, &inputs)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let plan = ConvPlan::conv1d(self.shape(x), self.shape(w), stride, padding)?;
        self.conv_with("conv1d", plan, x, w, b)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let plan = ConvPlan::conv2d(self.shape(x), self.shape(w), stride, padding)?;
        self.conv_with("conv2d", plan, x, w, b)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let plan = ConvPlan::conv_transpose2d(self.shape(x), self.shape(w), stride, padding)?;
        self.conv_with("conv_transpose2d", plan, x, w, b)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let plan = LinearPlan::new(self.shape(x), self.shape(w), b.map(|b| self.shape(b)))?;
        let data = plan.forward(self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(plan.out_shape(), data, Op::Linear { x, w, b, plan }, &inputs)
    }

    /// Batch normalization; in train mode `stats` is updated with momentum.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<S>,
        mode: Mode,
        momentum: S,
        eps: S,
    ) -> Result<Var> {
        let c = self.value(gamma).numel();
        let dims = bn_dims("batchnorm", self.shape(x), c)?;
        if self.value(beta).numel() != c || stats.running_mean.len() != c || stats.running_var.len() != c {
            return Err(Error::shape("batchnorm", format!("parameters/statistics do not all have {c} channels")));
        }
        let shape = self.shape(x).to_vec();
        match mode {
            Mode::Train => {
                if dims.0 < 2 {
                    return Err(Error::BatchTooSmall(dims.0));
                }
                let out = bn_train_forward(self.value(x).data(), dims, self.value(gamma).data(), self.value(beta).data(), eps);
                bn_update_running(stats, &out.mean, &out.var_unbiased, momentum);
                let op = Op::BnTrain { x, gamma, beta, xhat: out.xhat, inv_std: out.inv_std, dims };
                self.push(shape, out.y, op, &[x, gamma, beta])
            }
            Mode::Eval => {
                let (scale, shift) = bn_eval_affine(self.value(gamma).data(), self.value(beta).data(), stats, eps);
                let y = bn_apply_affine(self.value(x).data(), dims, &scale, &shift);
                let inv: Vec<S> = stats.running_var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
                let neg_mean_inv: Vec<S> = stats.running_mean.iter().zip(&inv).map(|(&m, &i)| -m * i).collect();
                let xhat = bn_apply_affine(self.value(x).data(), dims, &inv, &neg_mean_inv);
                let op = Op::BnEval { x, gamma, beta, scale, xhat, dims };
                self.push(shape, y, op, &[x, gamma, beta])
            }
        }
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| kind.apply(v)).collect();
        self.push(self.shape(x).to_vec(), data, Op::Act { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op_name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        self.push(self.shape(a).to_vec(), data, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i]) {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?} along axis {axis}")));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let inner: usize = self.shape(p)[axis..].iter().product();
                data.extend_from_slice(&self.value(p).data()[o * inner..(o + 1) * inner]);
            }
        }
        self.push(out_shape, data, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    /// Slice `[start, start + len)` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("narrow", format!("[{start}, {}) along axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(out_shape, data, Op::Narrow { x, axis, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::shape("reshape", format!("cannot view {:?} as {shape:?}", self.shape(x))));
        }
        let data = self.value(x).data().to_vec();
        self.push(shape, data, Op::Reshape { x }, &[x])
    }

    /// Repeats the whole tensor `times` times along the leading axis.
    pub fn repeat_batch(&mut self, x: Var, times: usize) -> Result<Var> {
        if times == 0 {
            return Err(Error::shape("repeat_batch", "times must be positive"));
        }
        let mut shape = self.shape(x).to_vec();
        shape[0] *= times;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(src.len() * times);
        for _ in 0..times {
            data.extend_from_slice(src);
        }
        self.push(shape, data, Op::RepeatBatch { x, times }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<S>();
        self.push(vec![1], vec![s], Op::Sum { x }, &[x])
    }

    /// Mean absolute error; the subgradient at exact ties is 0.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape("l1_loss", format!("{:?} vs {:?}", self.shape(pred), self.shape(target))));
        }
        let v = l1_value(self.value(pred).data(), self.value(target).data());
        self.push(vec![1], vec![v], Op::L1 { pred, target }, &[pred, target])
    }

    /// Mean softmax cross-entropy over the rows of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = logits_dims(self.shape(logits))?;
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{n} rows but {} labels", labels.len())));
        }
        let (probs, loss) = softmax_xent(self.value(logits).data(), c, labels)?;
        let op = Op::Xent { logits, labels: labels.to_vec(), probs };
        self.push(vec![1], vec![loss], op, &[logits])
    }

    /// Back-propagates from the scalar `root`; gradients are stored on every node
    /// that requires one and read back with [`Tape::grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, got {:?}", self.shape(root))));
        }
        for node in &mut self.nodes {
            node.value.set_grad(None);
        }
        if !self.needs(root) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(Some(g));
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], v: Var, contrib: Vec<S>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e = *e + c),
            slot => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, b, plan } => {
                let want = [self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b))];
                let (dx, dw, db) = plan.backward(self.value(*x).data(), self.value(*w).data(), g, want);
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Linear { x, w, b, plan } => {
                let (r, di, d) = (plan.rows, plan.d_in, plan.d_out);
                if self.needs(*x) {
                    let mut dx = vec![S::zero(); r * di];
                    matmul(g, false, self.value(*w).data(), false, &mut dx, r, d, di, false);
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![S::zero(); d * di];
                    matmul(g, true, self.value(*x).data(), false, &mut dw, d, r, di, false);
                    self.accumulate(grads, *w, dw);
                }
                if let Some(b) = b.filter(|&b| self.needs(b)) {
                    let mut db = vec![S::zero(); d];
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::BnTrain { x, gamma, beta, xhat, inv_std, dims } => {
                let (n, c, s) = *dims;
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * s;
                        for j in base..base + s {
                            dgamma[ci] = dgamma[ci] + g[j] * xhat[j];
                            dbeta[ci] = dbeta[ci] + g[j];
                        }
                    }
                }
                if self.needs(*x) {
                    let gm = self.value(*gamma).data();
                    let m = S::of((n * s) as f64);
                    let mut dx = vec![S::zero(); g.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            // Σ dxhat = γ·Σdy and Σ dxhat·xhat = γ·dγ
                            let k = gm[ci] * inv_std[ci] / m;
                            let base = (ni * c + ci) * s;
                            for j in base..base + s {
                                dx[j] = k * (m * g[j] - dbeta[ci] - xhat[j] * dgamma[ci]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::BnEval { x, gamma, beta, scale, xhat, dims } => {
                let (n, c, s) = *dims;
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let mut dx = vec![S::zero(); g.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * s;
                        for j in base..base + s {
                            dgamma[ci] = dgamma[ci] + g[j] * xhat[j];
                            dbeta[ci] = dbeta[ci] + g[j];
                            dx[j] = g[j] * scale[ci];
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Act { x, kind } => {
                let dx = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * kind.derivative_from_output(y))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da = g.iter().zip(self.value(*b).data()).map(|(&gv, &y)| gv * y).collect();
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = g.iter().zip(self.value(*a).data()).map(|(&gv, &x)| gv * x).collect();
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Concat { parts, axis } => {
                let outer: usize = out.shape()[..*axis].iter().product();
                let row: usize = out.shape()[*axis..].iter().product();
                let mut offset = 0;
                for &p in parts {
                    let inner: usize = self.shape(p)[*axis..].iter().product();
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            dp.extend_from_slice(&g[o * row + offset..o * row + offset + inner]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += inner;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = out.shape()[*axis];
                let mut dx = vec![S::zero(); self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape { x } => self.accumulate(grads, *x, g.to_vec()),
            Op::RepeatBatch { x, times } => {
                let n = self.value(*x).numel();
                let mut dx = vec![S::zero(); n];
                for k in 0..*times {
                    dx.iter_mut().zip(&g[k * n..(k + 1) * n]).for_each(|(d, &v)| *d = *d + v);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::L1 { pred, target } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let scale = g[0] / S::of(p.len() as f64);
                let sign: Vec<S> = p
                    .iter()
                    .zip(t)
                    .map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                if self.needs(*target) {
                    self.accumulate(grads, *target, sign.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *pred, sign);
            }
            Op::Xent { logits, labels, probs } => {
                let c = probs.len() / labels.len();
                let scale = g[0] / S::of(labels.len() as f64);
                let mut d: Vec<S> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * c + l] = d[r * c + l] - scale;
                }
                self.accumulate(grads, *logits, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.5, -1.0, 2.0]));
        let w = tape.param(t(&[2, 3], &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]));
        let y = tape.linear(x, w, None).unwrap();
        let coef = tape.constant(t(&[2], &[2.0, -3.0]));
        let prod = tape.mul(y, coef).unwrap();
        let s = tape.sum(prod).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(w).unwrap();
        let want = [1.0, -2.0, 4.0, -1.5, 3.0, -6.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn gradients_accumulate_over_shared_inputs() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2], &[1.0, 2.0]));
        let b = tape.add(a, a).unwrap();
        let c = tape.mul(b, a).unwrap(); // 2a²
        let s = tape.sum(c).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn narrow_concat_round_trip() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let left = tape.narrow(x, 1, 0, 1).unwrap();
        let right = tape.narrow(x, 1, 1, 2).unwrap();
        assert_eq!(tape.value(right).data(), &[2.0, 3.0, 5.0, 6.0]);
        let back = tape.concat(&[left, right], 1).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(x).data());
        let s = tape.sum(back).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn l1_subgradient_zero_at_ties() {
        let mut tape = Tape::new();
        let p = tape.param(t(&[3], &[1.0, 0.0, -2.0]));
        let q = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let l = tape.l1_loss(p, q).unwrap();
        tape.backward(l).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(tape.grad(p).unwrap(), &[third, 0.0, -third]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let p = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn repeat_batch_sums_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[1.0, 2.0]));
        let r = tape.repeat_batch(x, 3).unwrap();
        assert_eq!(tape.shape(r), &[3, 2]);
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 3.0]);
    }
}
