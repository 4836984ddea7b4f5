//! Run configuration: defaults ← `key=value` file ← `VGS_*` environment ← flags.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use vgs_core::avdata::SyntheticSpec;
use vgs_core::pretrain::TrainConfig;
use vgs_core::probe::ProbeConfig;

pub const ENV_PREFIX: &str = "VGS_";

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "speakers",
    "clips",
    "clip_seconds",
    "classes",
    "lr",
    "decay",
    "decay_interval",
    "epochs",
    "batch_size",
    "width",
    "split",
    "probe_hidden",
    "probe_layers",
    "probe_lr",
    "probe_decay",
    "probe_decay_interval",
    "probe_epochs",
    "probe_batch_size",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub speakers: usize,
    pub clips: usize,
    pub clip_seconds: f64,
    pub classes: usize,
    pub lr: f64,
    pub decay: f64,
    pub decay_interval: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub width: f64,
    /// train/val/test speaker fractions
    pub split: [f64; 3],
    pub probe_hidden: usize,
    pub probe_layers: usize,
    pub probe_lr: f64,
    pub probe_decay: f64,
    pub probe_decay_interval: usize,
    pub probe_epochs: usize,
    pub probe_batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let p = ProbeConfig::default();
        Self {
            seed: 0,
            speakers: 8,
            clips: 10,
            clip_seconds: 1.0,
            classes: p.n_classes,
            lr: t.base_lr,
            decay: t.decay_factor,
            decay_interval: t.decay_interval_epochs,
            epochs: t.epochs,
            batch_size: t.batch_size,
            width: t.width_multiplier,
            split: [0.6, 0.2, 0.2],
            probe_hidden: p.hidden,
            probe_layers: p.layers,
            probe_lr: p.lr,
            probe_decay: p.lr_decay,
            probe_decay_interval: p.decay_interval,
            probe_epochs: p.epochs,
            probe_batch_size: p.batch_size,
        }
    }
}

fn parse<T: FromStr>(key: &str, raw: &str, expected: &str) -> Result<T, String> {
    raw.trim().parse().map_err(|_| format!("invalid value `{raw}` for `{key}` (expected {expected})"))
}

fn parse_split(raw: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = raw.split(',').collect();
    let bad = || format!("invalid value `{raw}` for `split` (expected three comma-separated fractions)");
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), String> {
        const UINT: &str = "a non-negative integer";
        const REAL: &str = "a number";
        match key {
            "seed" => self.seed = parse(key, raw, UINT)?,
            "speakers" => self.speakers = parse(key, raw, UINT)?,
            "clips" => self.clips = parse(key, raw, UINT)?,
            "clip_seconds" => self.clip_seconds = parse(key, raw, REAL)?,
            "classes" => self.classes = parse(key, raw, UINT)?,
            "lr" => self.lr = parse(key, raw, REAL)?,
            "decay" => self.decay = parse(key, raw, REAL)?,
            "decay_interval" => self.decay_interval = parse(key, raw, UINT)?,
            "epochs" => self.epochs = parse(key, raw, UINT)?,
            "batch_size" => self.batch_size = parse(key, raw, UINT)?,
            "width" => self.width = parse(key, raw, REAL)?,
            "split" => self.split = parse_split(raw)?,
            "probe_hidden" => self.probe_hidden = parse(key, raw, UINT)?,
            "probe_layers" => self.probe_layers = parse(key, raw, UINT)?,
            "probe_lr" => self.probe_lr = parse(key, raw, REAL)?,
            "probe_decay" => self.probe_decay = parse(key, raw, REAL)?,
            "probe_decay_interval" => self.probe_decay_interval = parse(key, raw, UINT)?,
            "probe_epochs" => self.probe_epochs = parse(key, raw, UINT)?,
            "probe_batch_size" => self.probe_batch_size = parse(key, raw, UINT)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fn s(v: impl Display) -> Option<String> {
            Some(v.to_string())
        }
        match key {
            "seed" => s(self.seed),
            "speakers" => s(self.speakers),
            "clips" => s(self.clips),
            "clip_seconds" => s(self.clip_seconds),
            "classes" => s(self.classes),
            "lr" => s(self.lr),
            "decay" => s(self.decay),
            "decay_interval" => s(self.decay_interval),
            "epochs" => s(self.epochs),
            "batch_size" => s(self.batch_size),
            "width" => s(self.width),
            "split" => Some(format!("{},{},{}", self.split[0], self.split[1], self.split[2])),
            "probe_hidden" => s(self.probe_hidden),
            "probe_layers" => s(self.probe_layers),
            "probe_lr" => s(self.probe_lr),
            "probe_decay" => s(self.probe_decay),
            "probe_decay_interval" => s(self.probe_decay_interval),
            "probe_epochs" => s(self.probe_epochs),
            "probe_batch_size" => s(self.probe_batch_size),
            _ => None,
        }
    }

    /// Applies a `key=value` file. `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| format!("{origin} line {}: {msg}", i + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected key=value, got `{line}`")))?;
            self.set(key.trim(), value.trim()).map_err(at)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_file_text(&text, &path.display().to_string())
    }

    /// Applies `VGS_<KEY>` variables from `vars`; other `VGS_` names are rejected.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), String> {
        let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (name, value) in vars {
            let key = name[ENV_PREFIX.len()..].to_ascii_lowercase();
            self.set(&key, &value).map_err(|e| format!("environment {name}: {e}"))?;
        }
        Ok(())
    }

    pub fn apply_flags<'a>(&mut self, flags: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<(), String> {
        for (key, value) in flags {
            self.set(key, value).map_err(|e| format!("flag --{}: {e}", key.replace('_', "-")))?;
        }
        Ok(())
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_speakers: self.speakers,
            clips_per_speaker: self.clips,
            clip_seconds: self.clip_seconds,
            n_classes: self.classes,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            base_lr: self.lr,
            decay_factor: self.decay,
            decay_interval_epochs: self.decay_interval,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            width_multiplier: self.width,
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            hidden: self.probe_hidden,
            layers: self.probe_layers,
            lr: self.probe_lr,
            lr_decay: self.probe_decay,
            decay_interval: self.probe_decay_interval,
            epochs: self.probe_epochs,
            batch_size: self.probe_batch_size,
            n_classes: self.classes,
            seed: self.seed,
        }
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<(), String> {
        self.synthetic_spec().validate().map_err(|e| e.to_string())?;
        self.train_config().validate().map_err(|e| e.to_string())?;
        self.probe_config().validate().map_err(|e| e.to_string())?;
        if self.split.iter().any(|r| !r.is_finite() || *r < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("invalid configuration: split {:?} must be non-negative and sum to 1", self.split));
        }
        Ok(())
    }

    /// The resolved configuration in the same `key=value` format the file uses.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("known key"))).collect()
    }
}
