//! TOML configuration files for the command-line workflows.
//!
//! Relative paths inside a file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coupling::CouplingConfig;
use crate::data::{AugmenterKind, DataFormat, Dataset};
use crate::error::{domain, Error, Location, Result};
use crate::mixvae::{ArmDims, DropoutRates, Likelihood};
use crate::oracle::GaussianMixtureSpec;

fn line_col(src: &str, offset: usize) -> Location {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() as u64 + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u64 + 1;
    Location::LineColumn(line, col)
}

/// Deserializes TOML, reporting errors with line and column.
pub fn parse_toml<T: DeserializeOwned>(src: &str, path: &Path) -> Result<T> {
    toml::from_str(src).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: e.span().map_or(Location::Unknown, |s| line_col(src, s.start)),
        message: e.message().to_string(),
    })
}

/// Reads and parses a TOML file, then resolves relative paths.
pub fn load_config<T: DeserializeOwned + ResolvePaths>(path: &Path) -> Result<T> {
    let src = std::fs::read_to_string(path)?;
    let mut cfg: T = parse_toml(&src, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

pub trait ResolvePaths {
    fn resolve_paths(&mut self, base: &Path);
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmenterTag {
    OracleResample,
    GaussianJitter,
}

/// `[augmenter]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmenterConfig {
    pub kind: AugmenterTag,
    /// Mixture file for `oracle_resample`; defaults to the dataset's own spec.
    #[serde(default)]
    pub spec: Option<PathBuf>,
    #[serde(default = "one")]
    pub concentration: f64,
    #[serde(default)]
    pub noise_std: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for AugmenterConfig {
    fn default() -> Self {
        Self {
            kind: AugmenterTag::GaussianJitter,
            spec: None,
            concentration: 1.0,
            noise_std: 0.0,
        }
    }
}

impl AugmenterConfig {
    pub fn build(&self, dataset: &Dataset) -> Result<AugmenterKind> {
        let kind = match self.kind {
            AugmenterTag::GaussianJitter => AugmenterKind::GaussianJitter {
                noise_std: self.noise_std,
            },
            AugmenterTag::OracleResample => {
                let spec = match (&self.spec, dataset.spec()) {
                    (Some(p), _) => GaussianMixtureSpec::load(p)?,
                    (None, Some(s)) => s.clone(),
                    (None, None) => return domain("oracle_resample needs a mixture spec file"),
                };
                if dataset.labels().is_none() {
                    return domain("oracle_resample needs a labeled dataset");
                }
                AugmenterKind::OracleResample {
                    spec,
                    concentration: self.concentration,
                }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Everything [`crate::harness::train`] needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Dataset file; `.csv` is read as CSV, anything else as raw.
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub model: ArmDims,
    #[serde(default)]
    pub coupling: CouplingConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augmenter: AugmenterConfig,
    #[serde(default)]
    pub dropout: DropoutRates,
    /// Write a metrics row every this many optimizer steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub likelihood: Likelihood,
}

fn default_epochs() -> usize {
    600
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    1e-4
}
fn default_log_every() -> usize {
    10
}

impl TrainConfig {
    pub fn new(model: ArmDims) -> Self {
        Self {
            data: None,
            model,
            coupling: CouplingConfig::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            seed: 0,
            augmenter: AugmenterConfig::default(),
            dropout: DropoutRates::default(),
            log_every: default_log_every(),
            likelihood: Likelihood::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.coupling.validate()?;
        if self.batch_size < 2 {
            return domain(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.epochs < 1 {
            return domain("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return domain(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.log_every < 1 {
            return domain("log_every must be at least 1");
        }
        for r in [self.dropout.input, self.dropout.state] {
            if !(0.0..1.0).contains(&r) {
                return domain(format!("dropout rate {r} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

impl ResolvePaths for TrainConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve_opt(base, &mut self.data);
        resolve_opt(base, &mut self.augmenter.spec);
    }
}

/// `gen-data` configuration. Exactly one of `per_class` and `total` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub spec: PathBuf,
    #[serde(default)]
    pub per_class: Option<Vec<usize>>,
    #[serde(default)]
    pub total: Option<usize>,
    #[serde(default)]
    pub format: Option<DataFormat>,
    #[serde(default)]
    pub seed: u64,
}

impl ResolvePaths for GenDataConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.spec);
    }
}

/// `eval` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
}

impl ResolvePaths for EvalConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data);
        resolve(base, &mut self.checkpoint);
    }
}

/// `traverse` configuration. `arm` and `sample` are one-based, `dim` zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraverseConfig {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default = "one_usize")]
    pub arm: usize,
    #[serde(default = "one_usize")]
    pub sample: usize,
    #[serde(default)]
    pub dim: usize,
    pub grid: Vec<f64>,
    #[serde(default)]
    pub likelihood: Likelihood,
}

fn one_usize() -> usize {
    1
}

impl ResolvePaths for TraverseConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data);
        resolve(base, &mut self.checkpoint);
    }
}

/// `verify` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub spec: PathBuf,
    #[serde(default = "default_arms")]
    pub arms: Vec<usize>,
    #[serde(default = "default_mc")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_arms() -> Vec<usize> {
    vec![1, 2, 4]
}
fn default_mc() -> usize {
    100_000
}

impl ResolvePaths for VerifyConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.spec);
    }
}
