//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys and
//! unparsable values are errors, and all of them are reported at once.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::dataset::Layout;
use crate::latent_prior::{DEFAULT_ALPHA, DEFAULT_ORDER};
use crate::nn::{Mode, OptimizerKind, ReconstructionLoss, TrainConfig};

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    /// The built-in 8-dimensional manifold in 32 dimensions.
    SyntheticManifold,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::File(p) => write!(f, "{}", p.display()),
            DataSource::SyntheticManifold => f.write_str("synthetic:manifold"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookInit {
    /// K distinct encoder outputs from the first batch.
    Data,
    /// A tight Gaussian cluster (radius `init_scale`) displaced from the
    /// mean encoder output by `init_offset` along the first axis.
    Clustered,
}

/// One training mode in a stability sweep, e.g. `soft_em:m=10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSpec {
    pub mode: Mode,
    pub samples: Option<usize>,
}

impl ModeSpec {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        c.mode = self.mode;
        if let Some(m) = self.samples {
            c.samples = m;
        }
        c
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ModeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.samples {
            Some(m) => write!(f, "{}:m={m}", self.mode),
            None => write!(f, "{}", self.mode),
        }
    }
}

impl FromStr for ModeSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (mode, samples) = match s.split_once(':') {
            Some((mode, rest)) => {
                let m = rest
                    .strip_prefix("m=")
                    .and_then(|v| v.parse::<usize>().ok())
                    .filter(|&m| m > 0)
                    .ok_or_else(|| format!("bad sample count in mode `{s}`"))?;
                (mode, Some(m))
            }
            None => (s, None),
        };
        Ok(Self {
            mode: mode.parse()?,
            samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<DataSource>,
    pub data_layout: Option<Layout>,
    pub synthetic_rows: usize,
    pub standardize: bool,
    /// Steps between metrics records.
    pub log_interval: u64,
    /// Steps between checkpoints; 0 writes only the initial and final ones.
    pub checkpoint_interval: u64,
    pub log_wall_time: bool,
    /// Lloyd iterations for `cluster`.
    pub max_iters: usize,
    pub codebook_init: CodebookInit,
    pub init_scale: f64,
    pub init_offset: f64,
    /// Modes compared by `stability`.
    pub modes: Vec<ModeSpec>,
    /// Collapse threshold as a fraction of K.
    pub collapse_fraction: f64,
    /// Checkpoint directory read by `eval`.
    pub checkpoint: Option<PathBuf>,
    pub train_fraction: f64,
    pub prior_order: usize,
    pub prior_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: None,
            data_layout: None,
            synthetic_rows: crate::harness::synthetic::MANIFOLD_ROWS,
            standardize: false,
            log_interval: 100,
            checkpoint_interval: 0,
            log_wall_time: false,
            max_iters: 100,
            codebook_init: CodebookInit::Data,
            init_scale: 0.01,
            init_offset: 0.0,
            modes: vec![
                ModeSpec {
                    mode: Mode::HardEma,
                    samples: None,
                },
                ModeSpec {
                    mode: Mode::SoftEm,
                    samples: Some(5),
                },
                ModeSpec {
                    mode: Mode::SoftEm,
                    samples: Some(10),
                },
            ],
            collapse_fraction: 0.1,
            checkpoint: None,
            train_fraction: 0.8,
            prior_order: DEFAULT_ORDER,
            prior_alpha: DEFAULT_ALPHA,
        }
    }
}

const KEYS: &[&str] = &[
    "batch_size",
    "beta",
    "checkpoint",
    "checkpoint_interval",
    "codebook_init",
    "codebook_size",
    "collapse_fraction",
    "data",
    "data_layout",
    "decay",
    "downsample_factor",
    "epsilon",
    "hidden_dim",
    "init_offset",
    "init_scale",
    "latent_dim",
    "learning_rate",
    "log_interval",
    "log_wall_time",
    "loss",
    "lr_half_life",
    "max_iters",
    "max_steps",
    "mode",
    "modes",
    "optimizer",
    "prior_alpha",
    "prior_order",
    "samples",
    "seed",
    "standardize",
    "synthetic_rows",
    "train_fraction",
    "warmup_steps",
];

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("`{v}` is not a valid number"))
}

impl RunConfig {
    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut errors = Vec::new();
        let mut seen: Vec<String> = Vec::new();
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = n + 1;
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {lineno}: expected `key = value`"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                errors.push(format!("line {lineno}: unknown key `{key}`"));
                continue;
            }
            if seen.iter().any(|k| k == key) {
                errors.push(format!("line {lineno}: duplicate key `{key}`"));
                continue;
            }
            seen.push(key.to_string());
            let t = &mut cfg.train;
            let result: std::result::Result<(), String> = match key {
                "batch_size" => parse_num(value).map(|v| t.batch_size = v),
                "beta" => parse_num(value).map(|v| t.beta = v),
                "codebook_size" => parse_num(value).map(|v| t.codebook_size = v),
                "decay" => parse_num(value).map(|v| t.decay = v),
                "downsample_factor" => parse_num(value).map(|v| t.downsample_factor = v),
                "epsilon" => parse_num(value).map(|v| t.epsilon = v),
                "hidden_dim" => parse_num(value).map(|v| t.hidden_dim = v),
                "latent_dim" => parse_num(value).map(|v| t.latent_dim = v),
                "learning_rate" => parse_num(value).map(|v| t.learning_rate = v),
                "lr_half_life" => parse_num(value).map(|v| t.lr_half_life = v),
                "max_steps" => parse_num(value).map(|v| t.max_steps = v),
                "samples" => parse_num(value).map(|v| t.samples = v),
                "seed" => parse_num(value).map(|v| t.seed = v),
                "warmup_steps" => parse_num(value).map(|v| t.warmup_steps = v),
                "mode" => value.parse().map(|v| t.mode = v),
                "optimizer" => match value {
                    "sgd" => Ok(OptimizerKind::Sgd),
                    "adam" => Ok(OptimizerKind::Adam),
                    _ => Err(format!(
                        "unknown optimizer `{value}` (expected sgd or adam)"
                    )),
                }
                .map(|v| t.optimizer = v),
                "loss" => match value {
                    "mse" => Ok(ReconstructionLoss::Mse),
                    "bce" => Ok(ReconstructionLoss::BinaryCrossEntropy),
                    _ => Err(format!("unknown loss `{value}` (expected mse or bce)")),
                }
                .map(|v| t.loss = v),
                "data" => {
                    cfg.data = Some(match value {
                        "synthetic:manifold" => DataSource::SyntheticManifold,
                        _ => DataSource::File(resolve(value)),
                    });
                    Ok(())
                }
                "data_layout" => Layout::parse(value)
                    .map(|l| cfg.data_layout = Some(l))
                    .ok_or_else(|| {
                        format!("unknown data_layout `{value}` (expected csv or raw-f32)")
                    }),
                "synthetic_rows" => parse_num(value).map(|v| cfg.synthetic_rows = v),
                "standardize" => parse_bool(value).map(|v| cfg.standardize = v),
                "log_interval" => parse_num(value).map(|v| cfg.log_interval = v),
                "checkpoint_interval" => parse_num(value).map(|v| cfg.checkpoint_interval = v),
                "log_wall_time" => parse_bool(value).map(|v| cfg.log_wall_time = v),
                "max_iters" => parse_num(value).map(|v| cfg.max_iters = v),
                "codebook_init" => match value {
                    "data" => Ok(CodebookInit::Data),
                    "clustered" => Ok(CodebookInit::Clustered),
                    _ => Err(format!(
                        "unknown codebook_init `{value}` (expected data or clustered)"
                    )),
                }
                .map(|v| cfg.codebook_init = v),
                "init_scale" => parse_num(value).map(|v| cfg.init_scale = v),
                "init_offset" => parse_num(value).map(|v| cfg.init_offset = v),
                "modes" => value
                    .split(',')
                    .map(str::parse::<ModeSpec>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map(|v| cfg.modes = v),
                "collapse_fraction" => parse_num(value).map(|v| cfg.collapse_fraction = v),
                "checkpoint" => {
                    cfg.checkpoint = Some(resolve(value));
                    Ok(())
                }
                "train_fraction" => parse_num(value).map(|v| cfg.train_fraction = v),
                "prior_order" => parse_num(value).map(|v| cfg.prior_order = v),
                "prior_alpha" => parse_num(value).map(|v| cfg.prior_alpha = v),
                _ => unreachable!("key list and parser disagree on `{key}`"),
            };
            if let Err(msg) = result {
                errors.push(format!("line {lineno}: {key}: {msg}"));
            }
        }
        if errors.is_empty() {
            if let Err(Error::Config(mut more)) = cfg.validate() {
                errors.append(&mut more);
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = match self.train.validate() {
            Ok(()) => Vec::new(),
            Err(Error::Config(e)) => e,
            Err(e) => vec![e.to_string()],
        };
        if self.log_interval == 0 {
            errs.push("log_interval must be positive".into());
        }
        if self.synthetic_rows == 0 {
            errs.push("synthetic_rows must be positive".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            errs.push("init_scale must be nonnegative".into());
        }
        if !self.init_offset.is_finite() {
            errs.push("init_offset must be finite".into());
        }
        if !(self.collapse_fraction > 0.0 && self.collapse_fraction <= 1.0) {
            errs.push("collapse_fraction must lie in (0, 1]".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            errs.push("train_fraction must lie in (0, 1)".into());
        }
        if self.prior_order == 0 {
            errs.push("prior_order must be positive".into());
        }
        if !(self.prior_alpha.is_finite() && self.prior_alpha >= 0.0) {
            errs.push("prior_alpha must be nonnegative".into());
        }
        if self.modes.is_empty() {
            errs.push("modes must list at least one mode".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Usage perplexity below which a run counts as collapsed.
    pub fn collapse_threshold(&self) -> f64 {
        self.collapse_fraction * self.train.codebook_size as f64
    }

    /// Canonical text for the training hyperparameters, readable by [`RunConfig::parse`].
    pub fn train_text(train: &TrainConfig) -> String {
        let optimizer = match train.optimizer {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        };
        let loss = match train.loss {
            ReconstructionLoss::Mse => "mse",
            ReconstructionLoss::BinaryCrossEntropy => "bce",
        };
        format!(
            "batch_size = {}\nbeta = {}\ncodebook_size = {}\ndecay = {}\ndownsample_factor = {}\n\
             epsilon = {}\nhidden_dim = {}\nlatent_dim = {}\nlearning_rate = {}\nloss = {loss}\n\
             lr_half_life = {}\nmax_steps = {}\nmode = {}\noptimizer = {optimizer}\nsamples = {}\n\
             seed = {}\nwarmup_steps = {}\n",
            train.batch_size,
            train.beta,
            train.codebook_size,
            train.decay,
            train.downsample_factor,
            train.epsilon,
            train.hidden_dim,
            train.latent_dim,
            train.learning_rate,
            train.lr_half_life,
            train.max_steps,
            train.mode,
            train.samples,
            train.seed,
            train.warmup_steps,
        )
    }
}
