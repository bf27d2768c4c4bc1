//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys are dotted (`hp.K`, `train.lr0`, ...). Repeated or unknown keys are
//! errors. See the README for the full key list.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::MetricsOptions;
use crate::model::{HyperParams, InitConfig};
use crate::optimizer::{Method, Schedule, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    BiasMeanOffset,
    LambdaB,
    BatchSize,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::BiasMeanOffset => "bias_mean_offset",
            SweepVariable::LambdaB => "lambda_b",
            SweepVariable::BatchSize => "batch_size",
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bias_mean_offset" => Ok(SweepVariable::BiasMeanOffset),
            "lambda_b" => Ok(SweepVariable::LambdaB),
            "batch_size" => Ok(SweepVariable::BatchSize),
            other => Err(Error::Config(format!(
                "unknown sweep variable `{other}` (expected bias_mean_offset, lambda_b or batch_size)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hp: HyperParams<f64>,
    pub init: InitConfig,
    pub loss: LossKind,
    pub train: TrainConfig<f64>,
    /// Steps between trajectory records (each record carries full metrics).
    pub metrics_every: usize,
    pub metrics: MetricsOptions,
    pub output_dir: PathBuf,
    pub sweep: Option<Sweep>,
}

impl ExperimentConfig {
    pub fn new(hp: HyperParams<f64>, loss: LossKind, output_dir: impl Into<PathBuf>) -> Self {
        let train = TrainConfig::default();
        Self {
            hp,
            init: InitConfig::default(),
            loss,
            metrics_every: train.record_every,
            train,
            metrics: MetricsOptions::default(),
            output_dir: output_dir.into(),
            sweep: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.loss.check_classes(self.hp.k)?;
        if self.metrics_every == 0 {
            return Err(Error::Config("metrics_every must be >= 1".into()));
        }
        if self.metrics.n_thresholds == 0 {
            return Err(Error::Config("metrics.n_thresholds must be >= 1".into()));
        }
        if !self.init.bias_mean_offset.is_finite() {
            return Err(Error::Config("init.bias_mean_offset must be finite".into()));
        }
        let mut train = self.train;
        train.record_every = self.metrics_every;
        train.validate(self.hp.n_total())?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep.values is empty".into()));
            }
            for &v in &sweep.values {
                self.with_value(sweep.variable, v)?;
            }
        }
        Ok(())
    }

    /// Copy with one sweep variable set, the sweep removed, and validated.
    pub fn with_value(&self, variable: SweepVariable, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        match variable {
            SweepVariable::BiasMeanOffset => cfg.init.bias_mean_offset = value,
            SweepVariable::LambdaB => cfg.hp.lambda_b = value,
            SweepVariable::BatchSize => {
                if !(value >= 1.0) || value.fract() != 0.0 {
                    return Err(Error::Config(format!("batch_size sweep value {value} is not a positive integer")));
                }
                cfg.train.batch_size = Some(value as usize);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training config with the record cadence taken from `metrics_every`.
    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            record_every: self.metrics_every,
            ..self.train
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Parses config text; `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };

        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(err(line_no, "empty key".into()));
            }
            if !KNOWN_KEYS.contains(&key) {
                return Err(err(line_no, format!("unknown key `{key}`")));
            }
            if let Some((first, _)) = entries.get(key) {
                return Err(err(line_no, format!("duplicate key `{key}` (first set on line {first})")));
            }
            entries.insert(key.to_string(), (line_no, value.to_string()));
        }

        let mut r = Reader { entries, err: &err };

        let hp = HyperParams {
            k: r.req("hp.K")?,
            d: r.req("hp.d")?,
            n: r.req("hp.n")?,
            lambda_w: r.req("hp.lambda_w")?,
            lambda_h: r.req("hp.lambda_h")?,
            lambda_b: r.req("hp.lambda_b")?,
        };
        let init = InitConfig {
            seed: r.opt("init.seed")?.unwrap_or(0),
            bias_mean_offset: r.opt("init.bias_mean_offset")?.unwrap_or(0.0),
            center_bias: r.opt("init.center_bias")?.unwrap_or(false),
        };
        let loss: LossKind = r.req("loss")?;

        let defaults = TrainConfig::<f64>::default();
        let method = match r.opt::<String>("train.method")?.as_deref() {
            None | Some("gd") => Method::Gd,
            Some("momentum") => Method::Momentum {
                beta: r.opt("train.beta")?.unwrap_or(0.9),
            },
            Some("adaptive_moments") => Method::AdaptiveMoments {
                beta1: r.opt("train.beta1")?.unwrap_or(0.9),
                beta2: r.opt("train.beta2")?.unwrap_or(0.999),
                eps: r.opt("train.eps")?.unwrap_or(1e-8),
            },
            Some(other) => return Err(r.fail("train.method", format!("unknown method `{other}`"))),
        };
        let schedule = match r.opt::<String>("train.schedule")?.as_deref() {
            None | Some("constant") => Schedule::Constant,
            Some("step") => Schedule::Step {
                period: r.req("train.period")?,
                gamma: r.req("train.gamma")?,
            },
            Some("cosine") => Schedule::Cosine {
                total: r.req("train.total")?,
                lr_min: r.opt("train.lr_min")?.unwrap_or(0.0),
            },
            Some(other) => return Err(r.fail("train.schedule", format!("unknown schedule `{other}`"))),
        };
        let batch_size = match r.opt::<String>("train.batch_size")?.as_deref() {
            None | Some("full") => None,
            Some(_) => Some(r.req("train.batch_size")?),
        };
        let metrics_every = r.opt("metrics_every")?.unwrap_or(defaults.record_every);
        let train = TrainConfig {
            method,
            lr0: r.opt("train.lr0")?.unwrap_or(defaults.lr0),
            schedule,
            steps: r.opt("train.steps")?.unwrap_or(defaults.steps),
            batch_size,
            grad_tol: r.opt("train.grad_tol")?.unwrap_or(defaults.grad_tol),
            seed: r.opt("train.seed")?.unwrap_or(0),
            record_every: metrics_every,
        };
        let metrics = MetricsOptions {
            centered_classifier: !r.opt("metrics.uncentered")?.unwrap_or(false),
            n_thresholds: r.opt("metrics.n_thresholds")?.unwrap_or(MetricsOptions::default().n_thresholds),
        };
        let output_dir = PathBuf::from(r.req::<String>("output_dir")?);

        let sweep = match r.opt::<SweepVariable>("sweep.variable")? {
            None => {
                if r.entries.contains_key("sweep.values") {
                    return Err(r.fail("sweep.values", "sweep.values given without sweep.variable".into()));
                }
                None
            }
            Some(variable) => {
                let (line, raw) = r
                    .entries
                    .get("sweep.values")
                    .cloned()
                    .ok_or_else(|| Error::Config("sweep.variable given without sweep.values".into()))?;
                let values = raw
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|e| err(line, format!("sweep value `{}`: {e}", v.trim()))))
                    .collect::<Result<Vec<_>>>()?;
                Some(Sweep { variable, values })
            }
        };

        let cfg = Self {
            hp,
            init,
            loss,
            train,
            metrics_every,
            metrics,
            output_dir,
            sweep,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "hp.K",
    "hp.d",
    "hp.n",
    "hp.lambda_w",
    "hp.lambda_h",
    "hp.lambda_b",
    "init.seed",
    "init.bias_mean_offset",
    "init.center_bias",
    "loss",
    "train.method",
    "train.beta",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.lr0",
    "train.schedule",
    "train.period",
    "train.gamma",
    "train.total",
    "train.lr_min",
    "train.steps",
    "train.batch_size",
    "train.grad_tol",
    "train.seed",
    "metrics_every",
    "metrics.uncentered",
    "metrics.n_thresholds",
    "output_dir",
    "sweep.variable",
    "sweep.values",
];

struct Reader<'a, F> {
    entries: BTreeMap<String, (usize, String)>,
    err: &'a F,
}

impl<F: Fn(usize, String) -> Error> Reader<'_, F> {
    fn opt<V: FromStr>(&mut self, key: &str) -> Result<Option<V>>
    where
        V::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse::<V>()
                .map(Some)
                .map_err(|e| (self.err)(*line, format!("`{key}`: cannot parse `{raw}`: {e}"))),
        }
    }

    fn req<V: FromStr>(&mut self, key: &str) -> Result<V>
    where
        V::Err: fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn fail(&self, key: &str, message: String) -> Error {
        let line = self.entries.get(key).map_or(0, |(l, _)| *l);
        (self.err)(line, message)
    }
}
