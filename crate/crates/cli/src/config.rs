//! Experiment configuration files.
//!
//! Configs are TOML with one flat table per command. Every output file
//! embeds the resolved config so a run can be reproduced from its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmsynth::geomlab::Surface;
use tmsynth::rlct::{default_multipliers, RlctHyper};

use crate::CliError;

/// A temperature given as a number or as `log(N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Temperature {
    Value(f64),
    Expr(String),
}

impl Temperature {
    pub fn resolve(&self) -> Result<f64, CliError> {
        match self {
            Temperature::Value(v) => Ok(*v),
            Temperature::Expr(s) => {
                let inner = s
                    .trim()
                    .strip_prefix("log(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| CliError::Config(format!("temperature `{s}` is neither a number nor log(N)")))?;
                let n: f64 = inner.trim().parse().map_err(|e| CliError::Config(format!("temperature `{s}`: {e}")))?;
                Ok(n.ln())
            }
        }
    }
}

/// `[rlct]` section: the problem and every sampler hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlctSection {
    pub problem: String,
    pub n: usize,
    pub a: usize,
    pub b: usize,
    pub t: usize,
    pub samples: usize,
    pub burn_in: usize,
    pub datasets: usize,
    #[serde(default = "default_accept")]
    pub target_accept: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub temperature: Temperature,
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<f64>,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
}

fn default_accept() -> f64 {
    0.8
}

fn default_alpha() -> f64 {
    1.0
}

fn default_depth() -> usize {
    10
}

impl RlctSection {
    pub fn hyper(&self) -> Result<RlctHyper, CliError> {
        let hyper = RlctHyper {
            n: self.n,
            a: self.a,
            b: self.b,
            t: self.t,
            samples: self.samples,
            burn_in: self.burn_in,
            datasets: self.datasets,
            target_accept: self.target_accept,
            alpha: self.alpha,
            temperature: self.temperature.resolve()?,
            multipliers: self.multipliers.clone(),
            max_depth: self.max_depth,
        };
        hyper.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(hyper)
    }
}

/// `[geometry]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub example: Surface,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    101
}

/// One `[[phases.candidate]]` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateEntry {
    pub label: String,
    pub loss: f64,
    pub lambda: f64,
    #[serde(default = "one")]
    pub length: usize,
}

fn one() -> usize {
    1
}

/// `[phases]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasesSection {
    pub n_min: u64,
    pub n_max: u64,
    #[serde(default = "unit_beta")]
    pub beta: f64,
    /// Number of `n` values written to the CSV.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Constant in the bound `F ≤ nβL + c·l·log n`, if it should be checked.
    pub bound_constant: Option<f64>,
    pub candidate: Vec<CandidateEntry>,
}

fn unit_beta() -> f64 {
    1.0
}

fn default_points() -> usize {
    1000
}

/// A whole config file. Sections irrelevant to the command are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub rlct: Option<RlctSection>,
    pub geometry: Option<GeometrySection>,
    pub phases: Option<PhasesSection>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize")
    }
}
