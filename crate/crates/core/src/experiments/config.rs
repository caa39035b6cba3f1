use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitMethod;
use crate::metrics::Regime;
use crate::model::ModelSpec;
use crate::oja::ScheduleKind;
use crate::streams::StreamSpec;

/// Everything needed to reproduce an experiment bit for bit.
///
/// ```toml
/// seed = 42
/// horizon = 10000        # T
/// repetitions = 100      # R; default ceil(100 p ln 10)
/// validation = 200       # V; default 10 d
///
/// [model]
/// dim = 20
/// spectrum = "spiked(0.5)"
///
/// [stream]
/// kind = "rademacher"
///
/// [init]
/// method = "warm"
/// target_p = 8.0
///
/// [schedule]
/// kind = "gap"
///
/// [target]
/// c = 10.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub horizon: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<u64>,
    /// Wall-clock timing makes records non-reproducible; off zeroes it.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    pub model: ModelSpec,
    pub stream: StreamSpec,
    pub init: InitConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub target: TargetConfig,
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub method: InitMethod,
    /// Approximate power iteration: samples spent before the main run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<u64>,
    /// Warm start: one-row CSV holding the vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<PathBuf>,
    /// Warm start: synthesize a start with this `p` from the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    #[serde(default = "default_one")]
    pub multiplier: f64,
    /// Constant schedule: the step size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Gap-free rule: `p` to plug in. Defaults to the measured `p` for warm
    /// starts, `d` for uniform starts and `ln(d) n_A` for the approximate
    /// power start, floored at 8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Gap rule: `λ`. Defaults to the model's eigengap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// Multiplier on the target rate.
    #[serde(default = "default_one")]
    pub c: f64,
    /// Defaults to the schedule's regime (gap-free for constant steps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { c: 1.0, regime: None }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths inside the config resolve against its directory
        if let Some(dir) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            if let Some(p) = cfg.stream.path.as_mut() {
                rebase(p);
            }
            if let Some(p) = cfg.init.vector.as_mut() {
                rebase(p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon (T) must be >= 1".into()));
        }
        if self.repetitions == Some(0) {
            return Err(Error::Config("repetitions (R) must be >= 1".into()));
        }
        match self.init.method {
            InitMethod::ApproxPower if self.init.t0.unwrap_or(0) == 0 => {
                return Err(Error::Config("approx_power init needs t0 >= 1".into()))
            }
            InitMethod::Warm if self.init.vector.is_some() == self.init.target_p.is_some() => {
                return Err(Error::Config(
                    "warm init needs exactly one of `vector` or `target_p`".into(),
                ))
            }
            _ => {}
        }
        if self.schedule.kind == ScheduleKind::Constant && self.schedule.eta.is_none() {
            return Err(Error::Config("constant schedule needs `eta`".into()));
        }
        if self.target.c.is_nan() || self.target.c <= 0.0 {
            return Err(Error::Config("target.c must be positive".into()));
        }
        Ok(())
    }

    /// `R`, defaulting to `ceil(100 p ln(1/0.1))`.
    pub fn repetitions_for(&self, p: f64) -> u64 {
        self.repetitions
            .unwrap_or_else(|| (100.0 * p * 10f64.ln()).ceil().max(1.0) as u64)
    }

    /// `V`, defaulting to `10 d`.
    pub fn validation_size(&self) -> u64 {
        self.validation.unwrap_or(10 * self.model.dim as u64)
    }

    pub fn regime(&self) -> Regime {
        self.target.regime.unwrap_or(match self.schedule.kind {
            ScheduleKind::Gap => Regime::Gap,
            _ => Regime::GapFree,
        })
    }
}
