//! Experiment configuration and the named pendulum presets.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmaes::CmaEsConfig;
use crate::controller::ControllerFamily;
use crate::error::{Error, Result};
use crate::integrate::IntegratorConfig;
use crate::objective::SinusoidalReference;
use crate::ssm::SsmConfig;
use crate::system::{PendulumParams, SystemSpec};
use crate::validate::SweepGrid;

pub const PRESETS: [&str; 4] = ["pendulum-fig3", "pendulum-fig4", "pendulum-fig5", "pendulum-fig6"];

/// `z*(phi) = offset + amplitude sin(phi)` per output, in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub offset_deg: Vec<f64>,
    pub amplitude_deg: Vec<f64>,
    /// rad/s
    pub omega: f64,
}

impl ReferenceConfig {
    pub fn build(&self) -> Result<SinusoidalReference> {
        SinusoidalReference::from_degrees(&self.offset_deg, &self.amplitude_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonresonanceConfig {
    /// Highest order checked; `None` checks up to the spectral quotient.
    pub max_order: Option<usize>,
    pub rtol: f64,
}

impl Default for NonresonanceConfig {
    fn default() -> Self {
        Self {
            max_order: None,
            rtol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// `t1 = settle_periods * T`.
    pub settle_periods: usize,
    pub samples_per_period: usize,
    /// Fixed trust radius in reduced coordinates; when absent and
    /// `auto_trust_radius` is set, `1.2 max |(H L)^+ z*|` is used.
    pub trust_radius: Option<f64>,
    pub auto_trust_radius: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            settle_periods: 2,
            samples_per_period: 1000,
            trust_radius: None,
            auto_trust_radius: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Full-order initial state (state units, rad and rad/s for the pendulum).
    pub initial_state: Vec<f64>,
    pub total_periods: usize,
    pub samples_per_period: usize,
    pub integrator: IntegratorConfig,
    /// Use the non-truncated drift in the full-order model when available.
    pub exact_drift: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            initial_state: Vec::new(),
            total_periods: 5,
            samples_per_period: 1000,
            integrator: IntegratorConfig::default(),
            exact_drift: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub system: SystemSpec,
    /// Real dimension of the master subspace.
    #[serde(default = "one")]
    pub subspace_dim: usize,
    #[serde(default)]
    pub nonresonance: NonresonanceConfig,
    #[serde(default)]
    pub ssm: SsmConfig,
    #[serde(default)]
    pub controller: ControllerFamily,
    /// Fixed controller coefficients; when absent `simulate` and `sweep`
    /// synthesize them first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_params: Option<Vec<f64>>,
    /// CMA-ES starting mean; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_params: Option<Vec<f64>>,
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub optimizer: CmaEsConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
    /// Thread count for candidate evaluation and sweep cells. Not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Base directory for run folders. Not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let base = |b: f64| ExperimentConfig {
            preset: Some(name.to_string()),
            system: SystemSpec::pendulum(PendulumParams { b, ..Default::default() }),
            subspace_dim: 1,
            nonresonance: NonresonanceConfig::default(),
            ssm: SsmConfig::default(),
            controller: ControllerFamily::default(),
            controller_params: None,
            initial_params: None,
            reference: ReferenceConfig {
                offset_deg: vec![30.0],
                amplitude_deg: vec![60.0],
                omega: PI,
            },
            objective: ObjectiveConfig::default(),
            optimizer: CmaEsConfig {
                f_target: Some(1e-3),
                ..Default::default()
            },
            simulation: SimulationConfig {
                initial_state: vec![0.0, 0.0],
                ..Default::default()
            },
            sweep: SweepGrid::default(),
            workers: None,
            out_dir: None,
        };
        let cfg = match name {
            "pendulum-fig3" | "pendulum-fig5" => base(35.0),
            "pendulum-fig4" => {
                let mut c = base(35.0);
                c.simulation.initial_state = vec![-PI, 0.0];
                c
            }
            "pendulum-fig6" => {
                let mut c = base(35.0);
                c.sweep = SweepGrid {
                    dampings: vec![7.0],
                    ..SweepGrid::default()
                };
                c
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset '{name}' (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.reference;
        if !(r.omega > 0.0 && r.omega.is_finite()) {
            return Err(Error::Config(format!("reference omega must be positive, got {}", r.omega)));
        }
        if r.offset_deg.len() != r.amplitude_deg.len() {
            return Err(Error::Config("reference offset and amplitude lengths differ".into()));
        }
        if self.subspace_dim == 0 {
            return Err(Error::Config("subspace_dim must be at least 1".into()));
        }
        if self.objective.samples_per_period < 2 || self.simulation.samples_per_period < 2 {
            return Err(Error::Config("samples_per_period must be at least 2".into()));
        }
        if self.simulation.total_periods <= self.objective.settle_periods {
            return Err(Error::Config(format!(
                "total_periods {} must exceed settle_periods {}",
                self.simulation.total_periods, self.objective.settle_periods
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.simulation.integrator.validate()
    }

    /// SHA-256 of the canonical JSON with `workers` and `out_dir` removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
