//! Run configuration: a flat JSON document plus command-line overrides.
//! Unknown keys in the file are rejected.

use okfem_core::summarize::Aggregation;
use okfem_core::tensor::OptimizerConfig;
use okfem_core::training::{EvalProtocol, LossConfig};
use serde::Deserialize;
use std::path::Path;

use crate::CliError;

/// Optional values as read from `--config`; every field can be overridden
/// by the matching flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub budget: Option<f64>,
    pub aggregation: Option<Aggregation>,
    pub alpha: Option<f32>,
    pub beta: Option<f32>,
    pub tau: Option<f32>,
    pub sigma: Option<f32>,
    pub max_iter: Option<usize>,
    pub stability_run: Option<usize>,
    pub learning_rate: Option<f32>,
    pub momentum: Option<f32>,
    pub decay_factor: Option<f32>,
    pub decay_every_epochs: Option<usize>,
    pub epochs: Option<usize>,
    pub penalty: Option<f64>,
    pub max_segments: Option<usize>,
    pub frames: Option<usize>,
    pub events: Option<usize>,
    pub noise: Option<f32>,
    pub shape: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {path:?}: {e}")))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad config {path:?}: {e}")))
    }
}

/// Fully resolved options used by the commands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub budget: f64,
    pub aggregation: Aggregation,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub max_iter: usize,
    pub stability_run: usize,
    pub penalty: f64,
    pub max_segments: Option<usize>,
    pub frames: usize,
    pub events: usize,
    pub noise: f32,
    pub shape: (usize, usize, usize),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 1,
            budget: 0.15,
            aggregation: Aggregation::Mean,
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            max_iter: 10,
            stability_run: 3,
            penalty: 1.0,
            max_segments: None,
            frames: 64,
            events: 3,
            noise: 0.01,
            shape: (3, 32, 32),
        }
    }
}

fn parse_shape(text: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("bad shape {text:?}, expected C,H,W")))?;
    match parts[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(CliError::usage(format!(
            "bad shape {text:?}, expected three comma-separated extents"
        ))),
    }
}

impl RunConfig {
    /// Defaults, overlaid with the config file, overlaid with flags.
    pub fn resolve(file: Option<FileConfig>, flags: &crate::CommonFlags) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            if let Some(v) = f.seed {
                cfg.seed = v;
            }
            if let Some(v) = f.jobs {
                cfg.jobs = v;
            }
            if let Some(v) = f.budget {
                cfg.budget = v;
            }
            if let Some(v) = f.aggregation {
                cfg.aggregation = v;
            }
            if let Some(v) = f.alpha {
                cfg.loss.alpha = v;
            }
            if let Some(v) = f.beta {
                cfg.loss.beta = v;
            }
            if let Some(v) = f.tau {
                cfg.loss.ste_temperature = v;
            }
            if let Some(v) = f.sigma {
                cfg.loss.score_scale = v;
            }
            if let Some(v) = f.max_iter {
                cfg.max_iter = v;
            }
            if let Some(v) = f.stability_run {
                cfg.stability_run = v;
            }
            if let Some(v) = f.learning_rate {
                cfg.optimizer.learning_rate = v;
            }
            if let Some(v) = f.momentum {
                cfg.optimizer.momentum = v;
            }
            if let Some(v) = f.decay_factor {
                cfg.optimizer.decay_factor = v;
            }
            if let Some(v) = f.decay_every_epochs {
                cfg.optimizer.decay_every_epochs = v;
            }
            if let Some(v) = f.epochs {
                cfg.optimizer.total_epochs = v;
            }
            if let Some(v) = f.penalty {
                cfg.penalty = v;
            }
            if let Some(v) = f.max_segments {
                cfg.max_segments = Some(v);
            }
            if let Some(v) = f.frames {
                cfg.frames = v;
            }
            if let Some(v) = f.events {
                cfg.events = v;
            }
            if let Some(v) = f.noise {
                cfg.noise = v;
            }
            if let Some(v) = &f.shape {
                cfg.shape = parse_shape(v)?;
            }
        }
        let fl = flags;
        if let Some(v) = fl.seed {
            cfg.seed = v;
        }
        if let Some(v) = fl.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = fl.budget {
            cfg.budget = v;
        }
        if let Some(v) = fl.aggregation {
            cfg.aggregation = match v {
                crate::AggregationArg::Mean => Aggregation::Mean,
                crate::AggregationArg::Max => Aggregation::Max,
            };
        }
        if let Some(v) = fl.alpha {
            cfg.loss.alpha = v;
        }
        if let Some(v) = fl.beta {
            cfg.loss.beta = v;
        }
        if let Some(v) = fl.tau {
            cfg.loss.ste_temperature = v;
        }
        if let Some(v) = fl.sigma {
            cfg.loss.score_scale = v;
        }
        if let Some(v) = fl.max_iter {
            cfg.max_iter = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(CliError::usage(format!(
                "budget must be in (0, 1], got {}",
                self.budget
            )));
        }
        if self.jobs == 0 {
            return Err(CliError::usage("jobs must be >= 1".into()));
        }
        self.loss
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        if self.stability_run == 0 || self.max_iter < self.stability_run {
            return Err(CliError::usage(format!(
                "need max_iter >= stability_run >= 1, got {} / {}",
                self.max_iter, self.stability_run
            )));
        }
        Ok(())
    }

    pub fn eval_protocol(&self) -> EvalProtocol {
        EvalProtocol {
            budget: self.budget,
            max_segments: self.max_segments,
            penalty: self.penalty,
            aggregation: self.aggregation,
        }
    }
}
