//! Downstream evaluation: a 2-layer LSTM classifier on frozen feature
//! sequences, trained with Adam and kept at its best validation epoch.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_features, FeatureSequence};
use crate::model::Z_AUD;
use crate::numerics::{adam_step, lstm_step, AdamConfig, AdamState, RecurrentVars, Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_interval: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 256, layers: 2, lr: 0.001, lr_decay: 0.1, decay_interval: 30, epochs: 100, batch_size: 16, n_classes: 3, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be at least 2, got {}", self.n_classes)));
        }
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 || self.decay_interval == 0 {
            return Err(Error::Config("hidden, layers, batch size and decay interval must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0 && self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Config("probe learning rate and decay must be positive".into()));
        }
        Ok(())
    }
}

/// `lr · lr_decay^⌊epoch / decay_interval⌋`.
pub fn probe_lr_at(epoch: usize, cfg: &ProbeConfig) -> f64 {
    cfg.lr * cfg.lr_decay.powi((epoch / cfg.decay_interval) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub features: FeatureSequence,
    pub label: usize,
}

/// Stacked LSTM weights followed by a linear head, stored flat as
/// `[w_ih, w_hh, b_ih, b_hh] × layers, head.weight, head.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeParams<S> {
    pub layers: usize,
    pub hidden: usize,
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ProbeParams<S> {
    /// Weights uniform in ±sqrt(1/fan_in), biases zero.
    pub fn init(d_in: usize, cfg: &ProbeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut uniform = |shape: [usize; 2], fan_in: usize| {
            let a = (1.0 / fan_in as f64).sqrt();
            let data = (0..shape[0] * shape[1]).map(|_| S::of(rng.gen_range(-a..=a))).collect();
            Tensor::new(shape, data).expect("consistent shape")
        };
        let h = cfg.hidden;
        let mut tensors = Vec::new();
        for l in 0..cfg.layers {
            let d = if l == 0 { d_in } else { h };
            tensors.push(uniform([4 * h, d], d));
            tensors.push(uniform([4 * h, h], h));
            tensors.push(Tensor::zeros([4 * h]));
            tensors.push(Tensor::zeros([4 * h]));
        }
        tensors.push(uniform([cfg.n_classes, h], h));
        tensors.push(Tensor::zeros([cfg.n_classes]));
        Self { layers: cfg.layers, hidden: h, tensors }
    }

    pub fn zeros(d_in: usize, cfg: &ProbeConfig) -> Self {
        let mut p = Self::init(d_in, cfg);
        for t in &mut p.tensors {
            t.data_mut().fill(S::zero());
        }
        p
    }

    pub fn n_classes(&self) -> usize {
        self.tensors.last().expect("head bias").numel()
    }

    pub fn d_in(&self) -> usize {
        self.tensors[0].shape()[1]
    }
}

/// Logits (`N×classes`) for `N` equal-length sequences given as per-step
/// `N×D` inputs.
pub fn lstm_logits<S: Scalar>(tape: &mut Tape<S>, vars: &[Var], layers: usize, hidden: usize, steps: &[Var]) -> Result<Var> {
    let Some(&first) = steps.first() else {
        return Err(Error::EmptyInput("sequence has no frames".into()));
    };
    let n = tape.shape(first)[0];
    let mut inputs = steps.to_vec();
    for l in 0..layers {
        let p = RecurrentVars { w_ih: vars[4 * l], w_hh: vars[4 * l + 1], b_ih: vars[4 * l + 2], b_hh: vars[4 * l + 3] };
        let mut h = tape.constant(Tensor::zeros([n, hidden]));
        let mut c = tape.constant(Tensor::zeros([n, hidden]));
        for x in inputs.iter_mut() {
            (h, c) = lstm_step(tape, *x, h, c, &p)?;
            *x = h;
        }
    }
    let last = *inputs.last().expect("non-empty");
    tape.linear(last, vars[4 * layers], Some(vars[4 * layers + 1]))
}

fn step_inputs<S: Scalar>(tape: &mut Tape<S>, seqs: &[&Tensor<S>]) -> Result<Vec<Var>> {
    let (t, d) = (seqs[0].shape()[0], seqs[0].shape()[1]);
    (0..t)
        .map(|s| {
            let mut data = Vec::with_capacity(seqs.len() * d);
            for q in seqs {
                data.extend_from_slice(q.row(s));
            }
            Ok(tape.constant(Tensor::new([seqs.len(), d], data)?))
        })
        .collect()
}

fn bind<S: Scalar>(tape: &mut Tape<S>, params: &ProbeParams<S>, trainable: bool) -> Vec<Var> {
    params.tensors.iter().map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }).collect()
}

fn check_features<S: Scalar>(x: &Tensor<S>, d_in: usize) -> Result<()> {
    match *x.shape() {
        [t, d] if t >= 1 && d == d_in => Ok(()),
        ref s => Err(Error::shape("lstm_forward", format!("features must be T×{d_in}, got {s:?}"))),
    }
}

/// Class logits for one `T×D` feature sequence.
pub fn lstm_forward<S: Scalar>(features: &Tensor<S>, params: &ProbeParams<S>) -> Result<Tensor<S>> {
    check_features(features, params.d_in())?;
    let mut tape = Tape::new();
    let vars = bind(&mut tape, params, false);
    let steps = step_inputs(&mut tape, &[features])?;
    let logits = lstm_logits(&mut tape, &vars, params.layers, params.hidden, &steps)?;
    tape.value(logits).clone().reshape([params.n_classes()])
}

/// Groups item indices by sequence length so each group runs as one batch.
fn by_length(items: &[&LabeledFeatures], idx: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        groups.entry(items[i].features.len()).or_default().push(i);
    }
    groups
}

pub fn predict(params: &ProbeParams<f32>, items: &[LabeledFeatures]) -> Result<Vec<usize>> {
    let refs: Vec<&LabeledFeatures> = items.iter().collect();
    let mut out = vec![0; items.len()];
    let all: Vec<usize> = (0..items.len()).collect();
    for (_, group) in by_length(&refs, &all) {
        for chunk in group.chunks(64) {
            let mut tape = Tape::new();
            let vars = bind(&mut tape, params, false);
            let seqs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &items[i].features.values).collect();
            for s in &seqs {
                check_features(s, params.d_in())?;
            }
            let steps = step_inputs(&mut tape, &seqs)?;
            let logits = lstm_logits(&mut tape, &vars, params.layers, params.hidden, &steps)?;
            let c = params.n_classes();
            for (row, &i) in tape.value(logits).data().chunks(c).zip(chunk) {
                out[i] = argmax(row);
            }
        }
    }
    Ok(out)
}

fn argmax(row: &[f32]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Percentage of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape("accuracy", format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("no labels to score".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

fn check_labels(items: &[LabeledFeatures], n_classes: usize) -> Result<()> {
    match items.iter().find(|it| it.label >= n_classes) {
        Some(it) => Err(Error::IndexOutOfRange { what: "class label", index: it.label, limit: n_classes }),
        None => Ok(()),
    }
}

/// Test-set accuracy percentage.
pub fn evaluate(params: &ProbeParams<f32>, test: &[LabeledFeatures]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set is empty".into()));
    }
    check_labels(test, params.n_classes())?;
    let labels: Vec<usize> = test.iter().map(|t| t.label).collect();
    accuracy(&predict(params, test)?, &labels)
}

/// Index of the highest validation accuracy; ties go to the earliest epoch.
pub fn select_best_epoch(val_acc: &[f64]) -> Option<usize> {
    val_acc.iter().enumerate().fold(None, |best, (i, &a)| match best {
        Some(b) if val_acc[b] >= a => Some(b),
        _ => Some(i),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeMetrics {
    pub train_loss: Vec<f64>,
    pub val_acc: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub test_accuracy: Option<f64>,
}

/// Trains the probe and returns the parameters of the best validation epoch.
pub fn train_probe(train: &[LabeledFeatures], val: &[LabeledFeatures], cfg: &ProbeConfig) -> Result<(ProbeParams<f32>, ProbeMetrics)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("probe needs non-empty train and validation splits".into()));
    }
    check_labels(train, cfg.n_classes)?;
    check_labels(val, cfg.n_classes)?;
    let d_in = train[0].features.dim();
    if d_in != Z_AUD {
        return Err(Error::shape("train_probe", format!("features have dim {d_in}, expected {Z_AUD}")));
    }
    let mut params = ProbeParams::<f32>::init(d_in, cfg);
    let mut adam = AdamState::new(AdamConfig::default());
    let refs: Vec<&LabeledFeatures> = train.iter().collect();
    let mut metrics = ProbeMetrics { train_loss: vec![], val_acc: vec![], best_epoch: 0, test_accuracy: None };
    let mut best = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_0BE5);
    for epoch in 0..cfg.epochs {
        let lr = probe_lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = bind(&mut tape, &params, true);
            let mut loss: Option<Var> = None;
            for (_, group) in by_length(&refs, batch) {
                let seqs: Vec<&Tensor<f32>> = group.iter().map(|&i| &train[i].features.values).collect();
                let labels: Vec<usize> = group.iter().map(|&i| train[i].label).collect();
                let steps = step_inputs(&mut tape, &seqs)?;
                let logits = lstm_logits(&mut tape, &vars, params.layers, params.hidden, &steps)?;
                let mean = tape.cross_entropy(logits, &labels)?;
                // weight each group by its share so the total is the per-sequence mean
                let w = tape.constant(Tensor::scalar(group.len() as f32 / batch.len() as f32));
                let part = tape.mul(mean, w)?;
                loss = Some(match loss {
                    Some(acc) => tape.add(acc, part)?,
                    None => part,
                });
            }
            let loss = loss.expect("non-empty batch");
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("probe loss {value} at epoch {}", epoch + 1)));
            }
            total += value * batch.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Option<&[f32]>> = vars.iter().map(|&v| tape.grad(v)).collect();
            adam_step(&mut params.tensors, &grads, &mut adam, lr)?;
        }
        let val_labels: Vec<usize> = val.iter().map(|v| v.label).collect();
        let acc = accuracy(&predict(&params, val)?, &val_labels)?;
        metrics.train_loss.push(total / train.len() as f64);
        metrics.val_acc.push(acc);
        if select_best_epoch(&metrics.val_acc) == Some(epoch) {
            best = params.clone();
        }
    }
    metrics.best_epoch = select_best_epoch(&metrics.val_acc).map_or(0, |i| i + 1);
    Ok((if cfg.epochs == 0 { params } else { best }, metrics))
}

/// Writes `epoch,train_loss,val_acc` rows and a one-line JSON summary.
pub fn write_probe_metrics(m: &ProbeMetrics, csv_path: &Path, json_path: &Path) -> Result<()> {
    let csv_err = |e| Error::io(csv_path, e);
    let mut f = std::fs::File::create(csv_path).map_err(csv_err)?;
    writeln!(f, "epoch,train_loss,val_acc").map_err(csv_err)?;
    for (i, (l, a)) in m.train_loss.iter().zip(&m.val_acc).enumerate() {
        writeln!(f, "{},{l},{a}", i + 1).map_err(csv_err)?;
    }
    let summary = serde_json::json!({ "best_epoch": m.best_epoch, "test_accuracy": m.test_accuracy });
    std::fs::write(json_path, format!("{summary}\n")).map_err(|e| Error::io(json_path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One row of the labeled-feature manifest `id,feature_path,label,split`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub id: String,
    pub feature_path: PathBuf,
    pub label: usize,
    pub split: Split,
}

pub fn write_feature_manifest(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        let rel = r.feature_path.strip_prefix(base).unwrap_or(&r.feature_path).to_path_buf();
        w.serialize(FeatureRow { feature_path: rel, ..r.clone() }).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_feature_manifest(path: &Path) -> Result<Vec<FeatureRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Manifest { path: path.into(), row: 0, msg: e.to_string() })?;
    r.deserialize::<FeatureRow>()
        .enumerate()
        .map(|(i, row)| {
            let mut row = row.map_err(|e| Error::Manifest { path: path.into(), row: i + 1, msg: e.to_string() })?;
            row.feature_path = base.join(&row.feature_path);
            Ok(row)
        })
        .collect()
}

/// Reads every feature file in the manifest, returning (train, val, test).
pub fn load_labeled_splits(rows: &[FeatureRow]) -> Result<[Vec<LabeledFeatures>; 3]> {
    let mut out: [Vec<LabeledFeatures>; 3] = Default::default();
    for r in rows {
        let item = LabeledFeatures { features: read_features(&r.feature_path)?, label: r.label };
        out[r.split as usize].push(item);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n_classes: usize) -> ProbeConfig {
        ProbeConfig { hidden: 8, epochs: 30, n_classes, batch_size: 4, lr: 0.01, ..Default::default() }
    }

    #[test]
    fn schedule_examples() {
        let cfg = ProbeConfig::default();
        for (e, want) in [(0, 0.001), (30, 0.0001), (65, 0.00001)] {
            assert!((probe_lr_at(e, &cfg) - want).abs() <= 1e-15 * want.max(1e-3), "{e}");
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let cfg = ProbeConfig::default();
        let p = ProbeParams::<f64>::zeros(Z_AUD, &cfg);
        for t in [1, 7] {
            let logits = lstm_forward(&Tensor::<f64>::zeros([t, Z_AUD]), &p).unwrap();
            assert!(logits.data().iter().all(|&v| v == 0.0));
        }
        assert!(lstm_forward(&Tensor::<f64>::zeros([3, 100]), &p).is_err());
    }

    #[test]
    fn best_epoch_is_earliest_argmax() {
        assert_eq!(select_best_epoch(&[10.0, 50.0, 50.0, 40.0]), Some(1));
        assert_eq!(select_best_epoch(&[60.0, 50.0, 60.0]), Some(0));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 100.0);
        assert_eq!(accuracy(&[0, 0, 2, 2], &[0, 1, 2, 1]).unwrap(), 50.0);
        assert!(accuracy(&[], &[]).is_err());
    }

    fn item(label: usize, t: usize, v: f32) -> LabeledFeatures {
        let data = (0..t * Z_AUD).map(|i| if i % Z_AUD == label { v } else { 0.0 }).collect();
        LabeledFeatures { features: FeatureSequence::new("x", 25, Tensor::new([t, Z_AUD], data).unwrap()).unwrap(), label }
    }

    #[test]
    fn single_class_data_is_learned_perfectly() {
        let train: Vec<_> = (0..6).map(|i| item(1, 2 + i % 2, 1.0)).collect();
        let (p, m) = train_probe(&train, &train, &small_cfg(2)).unwrap();
        assert_eq!(evaluate(&p, &train).unwrap(), 100.0);
        assert!(m.train_loss.last().unwrap() < &m.train_loss[0]);
        assert!(*m.train_loss.last().unwrap() < 0.05, "{:?}", m.train_loss);
    }

    #[test]
    fn separable_data_and_label_checks() {
        let train: Vec<_> = (0..12).map(|i| item(i % 3, 3 + i % 2, 1.0)).collect();
        let (p, m) = train_probe(&train, &train, &small_cfg(3)).unwrap();
        assert_eq!(evaluate(&p, &train).unwrap(), 100.0);
        assert_eq!(m.val_acc.len(), 30);
        assert_eq!(m.val_acc[m.best_epoch - 1], 100.0);
        assert!(evaluate(&p, &[item(5, 2, 1.0)]).is_err());
        assert!(train_probe(&[], &train, &small_cfg(3)).is_err());
    }
}
