//! Training configuration: defaults, key=value files, and resolved snapshots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Every knob the trainer reads. Field order matches the snapshot layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub env_batch: usize,
    pub replay_batch: usize,
    pub total_env_steps: usize,
    pub horizon: usize,
    pub gamma: f32,
    pub omega: f32,
    pub seed: u64,
    pub image_size: usize,
    pub content_dir: PathBuf,
    pub style_dir: PathBuf,
    pub checkpoint_interval: usize,
    pub pool_capacity: usize,
    pub warmup_steps: usize,
    pub twin_critic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            env_batch: 1,
            replay_batch: 8,
            total_env_steps: 2000,
            horizon: 10,
            gamma: 0.9,
            omega: 0.005,
            seed: 0,
            image_size: 64,
            content_dir: PathBuf::new(),
            style_dir: PathBuf::new(),
            checkpoint_interval: 500,
            pool_capacity: 5000,
            warmup_steps: 64,
            twin_critic: true,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

impl TrainConfig {
    /// Applies one key=value assignment; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "env_batch" => self.env_batch = parse_value(key, value)?,
            "replay_batch" => self.replay_batch = parse_value(key, value)?,
            "total_env_steps" => self.total_env_steps = parse_value(key, value)?,
            "horizon" => self.horizon = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "omega" => self.omega = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "image_size" => self.image_size = parse_value(key, value)?,
            "content_dir" => self.content_dir = PathBuf::from(value),
            "style_dir" => self.style_dir = PathBuf::from(value),
            "checkpoint_interval" => self.checkpoint_interval = parse_value(key, value)?,
            "pool_capacity" => self.pool_capacity = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "twin_critic" => self.twin_critic = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of `self`. `#` starts a comment,
    /// blank lines are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Defaults overlaid with the assignments in `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = TrainConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Full key=value dump; feeding it back through `apply_text` reproduces
    /// the configuration.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "env_batch = {}", self.env_batch);
        let _ = writeln!(out, "replay_batch = {}", self.replay_batch);
        let _ = writeln!(out, "total_env_steps = {}", self.total_env_steps);
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(out, "gamma = {}", self.gamma);
        let _ = writeln!(out, "omega = {}", self.omega);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "image_size = {}", self.image_size);
        let _ = writeln!(out, "content_dir = {}", self.content_dir.display());
        let _ = writeln!(out, "style_dir = {}", self.style_dir.display());
        let _ = writeln!(out, "checkpoint_interval = {}", self.checkpoint_interval);
        let _ = writeln!(out, "pool_capacity = {}", self.pool_capacity);
        let _ = writeln!(out, "warmup_steps = {}", self.warmup_steps);
        let _ = writeln!(out, "twin_critic = {}", self.twin_critic);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.replay_batch < 2 {
            return Err(Error::Config(
                "replay_batch must be >= 2 (contrastive terms need in-batch negatives)".into(),
            ));
        }
        if self.env_batch < 1 {
            return Err(Error::Config("env_batch must be >= 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config("omega must be in [0, 1]".into()));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(
                "image_size must be a positive multiple of 4".into(),
            ));
        }
        if self.pool_capacity < self.replay_batch {
            return Err(Error::Config(
                "pool_capacity must be >= replay_batch".into(),
            ));
        }
        if self.warmup_steps < self.replay_batch {
            return Err(Error::Config(
                "warmup_steps must be >= replay_batch".into(),
            ));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint_interval must be >= 1".into()));
        }
        Ok(())
    }
}
