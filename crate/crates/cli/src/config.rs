//! Run configuration: a TOML file whose keys mirror the command-line flags
//! (snake_case in the file, kebab-case on the command line). Flags override
//! file keys; the seed falls back to `IRLAS_SEED`, then 0.
//!
//! Keys: `mode`, `eta`, `gamma_q`, `lambda`, `batch`, `max_len`, `iterations`,
//! `samples_per_iteration`, `seed`, `replay_capacity` (0 = unbounded), `pool`,
//! `window`, `top_k`, `epsilon_start`, `epsilon_end`, `epsilon_decay`,
//! `evaluator` (`surrogate` | `external`), `plugin`, `eval_timeout`,
//! `expert`, `weights` (path or `train`), `out`, `surrogate_noise`,
//! `surrogate_seed`. A run manifest uses the same keys plus `version`, so it
//! can be passed back with `--config`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use mirror_nas::arch::{parse_pool, OpKind};
use mirror_nas::qagent::{EpsilonSchedule, SearchConfig};

use crate::error::{read_file, usage, CliError};

pub const SEED_ENV: &str = "IRLAS_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Qsearch,
    Diffsearch,
    #[serde(rename = "irl-only")]
    #[value(name = "irl-only")]
    IrlOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    Surrogate,
    External,
}

/// Optional settings, read from a config file or from flags.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[arg(skip)]
    pub mode: Option<Mode>,
    /// Informational; written into run manifests.
    #[arg(skip)]
    pub version: Option<String>,
    /// Q-learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Q-learning discount.
    #[arg(long)]
    pub gamma_q: Option<f64>,
    /// Weight of the topology score in the reward.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Stored blocks replayed per iteration.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub samples_per_iteration: Option<usize>,
    /// Falls back to IRLAS_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replay buffer size; 0 keeps every sample.
    #[arg(long)]
    pub replay_capacity: Option<usize>,
    /// Comma-separated op pool (e.g. `dwconv3,identity,add`) or `all`.
    #[arg(long)]
    pub pool: Option<String>,
    /// Maximum evaluations in flight.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub epsilon_start: Option<f64>,
    #[arg(long)]
    pub epsilon_end: Option<f64>,
    /// Fraction of the iterations over which epsilon decays.
    #[arg(long)]
    pub epsilon_decay: Option<f64>,
    #[arg(long, value_enum)]
    pub evaluator: Option<EvaluatorKind>,
    /// Plugin command line for the external evaluator, split on whitespace.
    #[arg(long)]
    pub plugin: Option<String>,
    /// Per-evaluation timeout in seconds.
    #[arg(long)]
    pub eval_timeout: Option<f64>,
    #[arg(long)]
    pub expert: Option<String>,
    /// Mirror weights file, or `train` to fit them first.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Noise amplitude of the surrogate evaluator.
    #[arg(long)]
    pub surrogate_noise: Option<f64>,
    #[arg(long)]
    pub surrogate_seed: Option<u64>,
}

macro_rules! pick {
    ($flags:expr, $file:expr, $($field:ident),*) => {
        Overrides {
            $($field: $flags.$field.clone().or_else(|| $file.$field.clone()),)*
        }
    };
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = read_file(path)?;
        toml::from_str(&text).map_err(|e| usage(format!("bad config file {}: {e}", path.display())))
    }

    /// `self` wins over `file`.
    pub fn over(&self, file: &Overrides) -> Overrides {
        pick!(
            self,
            file,
            mode,
            version,
            eta,
            gamma_q,
            lambda,
            batch,
            max_len,
            iterations,
            samples_per_iteration,
            seed,
            replay_capacity,
            pool,
            window,
            top_k,
            epsilon_start,
            epsilon_end,
            epsilon_decay,
            evaluator,
            plugin,
            eval_timeout,
            expert,
            weights,
            out,
            surrogate_noise,
            surrogate_seed
        )
    }
}

/// Seed from the flag/file, else `IRLAS_SEED`, else 0.
pub fn resolve_seed(explicit: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = explicit {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| usage(format!("{SEED_ENV} is not an integer: {text:?}"))),
        Err(_) => Ok(0),
    }
}

pub fn resolve_pool(text: &str) -> Result<Vec<OpKind>, CliError> {
    parse_pool(text).ok_or_else(|| usage(format!("bad op pool {text:?}")))
}

/// Fully resolved settings of a search run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub eta: f64,
    pub gamma_q: f64,
    pub lambda: f64,
    pub batch: usize,
    pub max_len: usize,
    pub iterations: usize,
    pub samples_per_iteration: usize,
    pub seed: u64,
    pub replay_capacity: usize,
    pub pool: String,
    pub window: usize,
    pub top_k: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay: f64,
    pub evaluator: EvaluatorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plugin: Option<String>,
    pub eval_timeout: f64,
    pub expert: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub surrogate_noise: f64,
    pub surrogate_seed: u64,
}

impl RunConfig {
    pub fn resolve(o: &Overrides, mode: Mode) -> Result<Self, CliError> {
        if let Some(m) = o.mode.filter(|&m| m != mode) {
            return Err(usage(format!("config is for mode {m:?}, not {mode:?}")));
        }
        let d = SearchConfig::default();
        let cfg = RunConfig {
            mode,
            eta: o.eta.unwrap_or(d.eta),
            gamma_q: o.gamma_q.unwrap_or(d.gamma_q),
            lambda: o.lambda.unwrap_or(d.lambda),
            batch: o.batch.unwrap_or(d.batch),
            max_len: o.max_len.unwrap_or(d.max_len),
            iterations: o.iterations.unwrap_or(d.iterations),
            samples_per_iteration: o.samples_per_iteration.unwrap_or(d.samples_per_iteration),
            seed: resolve_seed(o.seed)?,
            replay_capacity: o.replay_capacity.unwrap_or(2000),
            pool: o.pool.clone().unwrap_or_else(|| "all".into()),
            window: o.window.unwrap_or(1),
            top_k: o.top_k.unwrap_or(d.top_k),
            epsilon_start: o.epsilon_start.unwrap_or(d.epsilon.start),
            epsilon_end: o.epsilon_end.unwrap_or(d.epsilon.end),
            epsilon_decay: o.epsilon_decay.unwrap_or(d.epsilon.decay_fraction),
            evaluator: o.evaluator.unwrap_or(EvaluatorKind::Surrogate),
            plugin: o.plugin.clone(),
            eval_timeout: o.eval_timeout.unwrap_or(600.0),
            expert: o.expert.clone().unwrap_or_else(|| "resnet_block".into()),
            weights: o.weights.clone(),
            out: o.out.clone(),
            surrogate_noise: o.surrogate_noise.unwrap_or(1.0),
            surrogate_seed: o.surrogate_seed.unwrap_or(0),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        resolve_pool(&self.pool)?;
        if self.window == 0 {
            return Err(usage("window must be at least 1"));
        }
        if self.evaluator == EvaluatorKind::External && self.plugin_command().is_empty() {
            return Err(usage("the external evaluator needs --plugin <command>"));
        }
        if !(self.eval_timeout > 0.0 && self.eval_timeout.is_finite()) {
            return Err(usage("eval_timeout must be a positive number of seconds"));
        }
        if self.surrogate_noise.is_nan() || self.surrogate_noise < 0.0 {
            return Err(usage("surrogate_noise must be non-negative"));
        }
        if let Some(w) = &self.weights {
            if w != "train" && !Path::new(w).is_file() {
                return Err(usage(format!("weights file {w} does not exist")));
            }
        }
        self.search_config().check().map_err(|e| usage(e.to_string()))
    }

    pub fn op_pool(&self) -> Vec<OpKind> {
        parse_pool(&self.pool).expect("checked at resolve time")
    }

    pub fn plugin_command(&self) -> Vec<String> {
        self.plugin.as_deref().unwrap_or("").split_whitespace().map(String::from).collect()
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.eval_timeout)
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            eta: self.eta,
            gamma_q: self.gamma_q,
            lambda: self.lambda,
            batch: self.batch,
            max_len: self.max_len,
            iterations: self.iterations,
            samples_per_iteration: self.samples_per_iteration,
            epsilon: EpsilonSchedule {
                start: self.epsilon_start,
                end: self.epsilon_end,
                decay_fraction: self.epsilon_decay,
            },
            seed: self.seed,
            replay_capacity: (self.replay_capacity > 0).then_some(self.replay_capacity),
            op_pool: parse_pool(&self.pool).unwrap_or_default(),
            window: self.window,
            top_k: self.top_k,
        }
    }

    /// Manifest text: the resolved config plus a version line, readable
    /// again through `--config`.
    pub fn manifest(&self, version: &str) -> String {
        let body = toml::to_string(self).expect("run config serializes");
        format!("version = {}\n{body}", toml::Value::String(version.to_string()))
    }
}
