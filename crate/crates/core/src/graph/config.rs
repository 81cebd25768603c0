use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which node representation feeds the Student-t soft assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CahInput {
    /// Posterior means (deterministic).
    Mean,
    /// The reparameterized sample.
    Sample,
}

/// Hyperparameters and paths for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Embedding size J.
    pub embedding_dim: usize,
    pub hidden: usize,
    /// Pretraining epochs.
    pub t1: usize,
    /// Alternating epochs.
    pub t2: usize,
    /// Within each block of ten alternating epochs, the first `interval`
    /// residues update the networks and the rest update the prior.
    pub interval: usize,
    pub lr: f64,
    /// Weight on the assignment-hardening loss.
    pub omega: f64,
    /// Weight on the mutual-distance loss.
    pub beta: f64,
    /// Student-t degrees of freedom.
    pub alpha: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub self_loops: bool,
    /// Weight on positive adjacency entries in the reconstruction likelihood; 1 disables it.
    pub pos_weight: f64,
    pub cah_input: CahInput,
    /// When false the mixture prior is never used (single standard-normal prior throughout).
    pub mixture_prior: bool,
    /// Cluster count; taken from the labels when absent.
    pub k: Option<usize>,
    pub checkpoint_every: usize,
    pub dataset: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub planetoid_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            hidden: 64,
            t1: 200,
            t2: 100,
            interval: 5,
            lr: 0.002,
            omega: 1.0,
            beta: 1.0,
            alpha: 1.0,
            mc_samples: 1,
            seed: 0,
            self_loops: true,
            pos_weight: 1.0,
            cah_input: CahInput::Mean,
            mixture_prior: true,
            k: None,
            checkpoint_every: 50,
            dataset: None,
            edges: None,
            features: None,
            labels: None,
            planetoid_dir: None,
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Input(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Input(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Every key accepted by [`RunConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "j",
        "hidden",
        "t1",
        "t2",
        "interval",
        "lr",
        "omega",
        "beta",
        "alpha",
        "mc_samples",
        "seed",
        "self_loops",
        "pos_weight",
        "cah_input",
        "mixture_prior",
        "k",
        "checkpoint_every",
        "dataset",
        "edges",
        "features",
        "labels",
        "planetoid_dir",
        "out",
    ];

    /// Sets one field by key. Dashes in keys are treated as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "j" | "embedding_dim" => self.embedding_dim = parse_num(&key, value)?,
            "hidden" => self.hidden = parse_num(&key, value)?,
            "t1" => self.t1 = parse_num(&key, value)?,
            "t2" => self.t2 = parse_num(&key, value)?,
            "interval" | "t" => self.interval = parse_num(&key, value)?,
            "lr" => self.lr = parse_num(&key, value)?,
            "omega" => self.omega = parse_num(&key, value)?,
            "beta" => self.beta = parse_num(&key, value)?,
            "alpha" => self.alpha = parse_num(&key, value)?,
            "mc_samples" => self.mc_samples = parse_num(&key, value)?,
            "seed" => self.seed = parse_num(&key, value)?,
            "self_loops" => self.self_loops = parse_bool(&key, value)?,
            "pos_weight" => self.pos_weight = parse_num(&key, value)?,
            "cah_input" => {
                self.cah_input = match value {
                    "mean" => CahInput::Mean,
                    "sample" => CahInput::Sample,
                    _ => return Err(Error::Input(format!("cah_input must be mean or sample, got {value:?}"))),
                }
            }
            "mixture_prior" => self.mixture_prior = parse_bool(&key, value)?,
            "k" => self.k = Some(parse_num(&key, value)?),
            "checkpoint_every" => self.checkpoint_every = parse_num(&key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "edges" => self.edges = Some(PathBuf::from(value)),
            "features" => self.features = Some(PathBuf::from(value)),
            "labels" => self.labels = Some(PathBuf::from(value)),
            "planetoid_dir" => self.planetoid_dir = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Input(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines (with `#` comments) over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("line {}: expected key = value", no + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Range checks.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Input(msg));
        if self.embedding_dim < 2 {
            return fail(format!("embedding size must be >= 2, got {}", self.embedding_dim));
        }
        if self.hidden == 0 {
            return fail("hidden size must be positive".into());
        }
        if let Some(k) = self.k {
            if k < 2 {
                return fail(format!("cluster count must be >= 2, got {k}"));
            }
        }
        if self.interval > 10 {
            return fail(format!("interval must be in 0..=10, got {}", self.interval));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.omega >= 0.0 && self.beta >= 0.0) {
            return fail("omega and beta must be non-negative".into());
        }
        if !(self.pos_weight > 0.0 && self.pos_weight.is_finite()) {
            return fail(format!("pos_weight must be positive, got {}", self.pos_weight));
        }
        if self.mc_samples == 0 {
            return fail("mc_samples must be at least 1".into());
        }
        Ok(())
    }

    /// Renders as `key = value` lines that [`RunConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "j = {}", self.embedding_dim);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "t1 = {}", self.t1);
        let _ = writeln!(s, "t2 = {}", self.t2);
        let _ = writeln!(s, "interval = {}", self.interval);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "omega = {}", self.omega);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "mc_samples = {}", self.mc_samples);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "self_loops = {}", self.self_loops);
        let _ = writeln!(s, "pos_weight = {}", self.pos_weight);
        let _ = writeln!(
            s,
            "cah_input = {}",
            match self.cah_input {
                CahInput::Mean => "mean",
                CahInput::Sample => "sample",
            }
        );
        let _ = writeln!(s, "mixture_prior = {}", self.mixture_prior);
        if let Some(k) = self.k {
            let _ = writeln!(s, "k = {k}");
        }
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        for (key, p) in [
            ("dataset", &self.dataset),
            ("edges", &self.edges),
            ("features", &self.features),
            ("labels", &self.labels),
            ("planetoid_dir", &self.planetoid_dir),
            ("out", &self.out),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s, "{key} = {}", p.display());
            }
        }
        s
    }
}
