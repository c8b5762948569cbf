use std::fmt::Write as _;
use std::path::Path;

use crate::codec::ArchSpec;
use crate::error::{Error, Result};
use crate::numkernel::AdamConfig;

/// Training hyperparameters. The text form is one `key = value` line per
/// field, using the field names below; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub lambda_r: f64,
    pub lambda_q: f64,
    pub gamma: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub segment_len: usize,
    pub clusters: usize,
    pub rvq_layers: usize,
    pub seed: u64,
    pub dead_code_threshold: f64,
    pub kernel: usize,
    /// Zero together with `dec_blocks` trains the quantizer on raw frames.
    pub enc_blocks: usize,
    pub dec_blocks: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda_r: 45.0,
            lambda_q: 1.0,
            gamma: 0.99,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            adam_eps: 1e-8,
            steps: 200_000,
            batch_size: 32,
            segment_len: 96,
            clusters: 1024,
            rvq_layers: 1,
            seed: 0,
            dead_code_threshold: 0.01,
            kernel: 3,
            enc_blocks: 2,
            dec_blocks: 2,
        }
    }
}

pub(crate) const KEYS: [&str; 17] = [
    "lambda_r",
    "lambda_q",
    "gamma",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "steps",
    "batch_size",
    "segment_len",
    "clusters",
    "rvq_layers",
    "seed",
    "dead_code_threshold",
    "kernel",
    "enc_blocks",
    "dec_blocks",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainingConfig {
    /// Quantizer trained directly on frames, with no encoder or decoder.
    pub fn vq_baseline() -> Self {
        Self {
            steps: 50_000,
            enc_blocks: 0,
            dec_blocks: 0,
            ..Self::default()
        }
    }

    pub fn arch(&self, dim: usize) -> ArchSpec {
        ArchSpec {
            dim,
            enc_blocks: self.enc_blocks,
            dec_blocks: self.dec_blocks,
            kernel: self.kernel,
            clusters: self.clusters,
            rvq_layers: self.rvq_layers,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Sets one field from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda_r" => self.lambda_r = parse(key, value)?,
            "lambda_q" => self.lambda_q = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "segment_len" => self.segment_len = parse(key, value)?,
            "clusters" => self.clusters = parse(key, value)?,
            "rvq_layers" => self.rvq_layers = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dead_code_threshold" => self.dead_code_threshold = parse(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "enc_blocks" => self.enc_blocks = parse(key, value)?,
            "dec_blocks" => self.dec_blocks = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Returns the keys that were set.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<String>> {
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            self.set(key, value)?;
            seen.push(key.to_string());
        }
        Ok(seen)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let values: [String; 17] = [
            self.lambda_r.to_string(),
            self.lambda_q.to_string(),
            self.gamma.to_string(),
            self.lr.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.adam_eps.to_string(),
            self.steps.to_string(),
            self.batch_size.to_string(),
            self.segment_len.to_string(),
            self.clusters.to_string(),
            self.rvq_layers.to_string(),
            self.seed.to_string(),
            self.dead_code_threshold.to_string(),
            self.kernel.to_string(),
            self.enc_blocks.to_string(),
            self.dec_blocks.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("lambda_r", self.lambda_r),
            ("lambda_q", self.lambda_q),
            ("gamma", self.gamma),
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
            ("dead_code_threshold", self.dead_code_threshold),
        ];
        if let Some((k, v)) = reals.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{k} = {v} is not finite")));
        }
        if self.lambda_r < 0.0 || self.lambda_q < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} outside [0, 1]", self.gamma)));
        }
        if self.lr <= 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.adam_eps < 0.0 || self.dead_code_threshold <= 0.0 {
            return Err(Error::Config(
                "adam_eps must be >= 0 and dead_code_threshold > 0".into(),
            ));
        }
        if self.batch_size == 0 || self.segment_len == 0 {
            return Err(Error::Config("batch_size and segment_len must be positive".into()));
        }
        // dim is irrelevant to the remaining structural checks
        self.arch(1).validate()
    }
}
