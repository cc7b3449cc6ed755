//! Declarative experiment configuration (TOML).
//!
//! Endpoint variances are variances, not standard deviations: the default toy
//! problem `p0 = N(-1, 0.3)` has `sigma0^2 = 0.3`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{GaussianEndpoint, GaussianMixtureEndpoint};
use crate::integrator::{SimulationOptions, TimeGrid, DEFAULT_DIVERGENCE_BOUND};
use crate::sde::{DiffusionSchedule, Family};
use crate::stats::KlDirection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl GaussianSpec {
    pub fn scalar(mean: f64, variance: f64) -> Self {
        Self {
            mean: vec![mean],
            variance,
        }
    }

    /// Builds `p1`; errors are reported against the `p1` table.
    pub fn build_endpoint(&self) -> Result<GaussianEndpoint> {
        GaussianEndpoint::new(self.mean.clone(), self.variance).map_err(|e| prefix("p1", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    Gaussian { mean: Vec<f64>, variance: f64 },
    Mixture { components: Vec<ComponentSpec> },
}

/// The built `p0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Gaussian(GaussianEndpoint),
    Mixture(GaussianMixtureEndpoint),
}

impl SourceSpec {
    pub fn build(&self) -> Result<Source> {
        match self {
            SourceSpec::Gaussian { mean, variance } => GaussianEndpoint::new(mean.clone(), *variance)
                .map(Source::Gaussian)
                .map_err(|e| prefix("p0", e)),
            SourceSpec::Mixture { components } => {
                let comps = components
                    .iter()
                    .map(|c| GaussianEndpoint::new(c.mean.clone(), c.variance).map(|g| (c.weight, g)))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| prefix("p0.components", e))?;
                GaussianMixtureEndpoint::new(comps)
                    .map(Source::Mixture)
                    .map_err(|e| prefix("p0.components", e))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub family: Family,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub gnuplot_script: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub trajectories_per_trial: usize,
    pub num_steps: usize,
    /// Defaults to 1, or `1 - 1e-3` for families with a pole at `t = 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start: Option<f64>,
    #[serde(default)]
    pub kl_direction: KlDirection,
    #[serde(default = "default_true")]
    pub final_step_noise: bool,
    #[serde(default = "default_bound")]
    pub divergence_bound: f64,
    pub p0: SourceSpec,
    pub p1: GaussianSpec,
    pub sampler: SamplerSpec,
    pub output: OutputSpec,
}

fn default_true() -> bool {
    true
}

fn default_bound() -> f64 {
    DEFAULT_DIVERGENCE_BOUND
}

fn prefix(field: &'static str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::InvalidParameter {
            name: field,
            reason: format!("{name}: {reason}"),
        },
        Error::DimensionMismatch { expected, got } => Error::InvalidParameter {
            name: field,
            reason: format!("dimension mismatch: expected {expected}, got {got}"),
        },
        other => other,
    }
}

impl Default for ExperimentConfig {
    /// The two-Gaussian toy problem with 10 trials of 10000 trajectories.
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 10,
            trajectories_per_trial: 10_000,
            num_steps: 100,
            t_start: None,
            kl_direction: KlDirection::EstimateToTruth,
            final_step_noise: true,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            p0: SourceSpec::Gaussian {
                mean: vec![-1.0],
                variance: 0.3,
            },
            p1: GaussianSpec::scalar(0.0, 1.0),
            sampler: SamplerSpec {
                family: Family::NonSingular,
                alpha: 1.0,
            },
            output: OutputSpec {
                path: PathBuf::from("report.csv"),
                format: OutputFormat::Csv,
                gnuplot_script: false,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::invalid("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn diffusion_schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.sampler.family, self.sampler.alpha).map_err(|e| prefix("sampler.alpha", e))
    }

    pub fn effective_t_start(&self) -> Result<f64> {
        Ok(match self.t_start {
            Some(t) => t,
            None => self.diffusion_schedule()?.default_t_start(),
        })
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.effective_t_start()?, self.num_steps).map_err(|e| match e {
            Error::InvalidParameter { name, reason } => Error::InvalidParameter {
                name: if name == "num_steps" { "num_steps" } else { "t_start" },
                reason,
            },
            other => other,
        })
    }

    pub fn options(&self, trial: u64) -> SimulationOptions {
        SimulationOptions {
            trial,
            divergence_bound: self.divergence_bound,
            final_step_noise: self.final_step_noise,
            record_stride: 1,
        }
    }

    /// Checks every numeric field against its domain and builds the endpoints.
    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::invalid("trials", "must be at least 2"));
        }
        if self.trajectories_per_trial < 2 {
            return Err(Error::invalid("trajectories_per_trial", "must be at least 2"));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::invalid("divergence_bound", "must be > 0"));
        }
        self.grid()?;
        let p0 = self.p0.build()?;
        let p1 = self.p1.build_endpoint()?;
        let d0 = match &p0 {
            Source::Gaussian(g) => g.dim(),
            Source::Mixture(m) => m.dim(),
        };
        if d0 != p1.dim() {
            return Err(Error::invalid(
                "p1.mean",
                format!("p0 has dimension {d0} but p1 has dimension {}", p1.dim()),
            ));
        }
        Ok(())
    }
}
