//! Experiment configuration: one TOML file, every field optional.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hpinn_core::hpinn::{DiscretizationConfig, TrainingConfig};
use hpinn_core::network::NetworkConfig;
use hpinn_core::refsolver::ReferenceSettings;
use hpinn_core::{Flux, PdeSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `-sin(pi x)`
    #[default]
    MinusSinPi,
    /// `sin(pi x)`
    SinPi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub flux: Flux,
    pub viscosity: f64,
    pub domain: [f64; 2],
    /// Dirichlet values at the left and right ends.
    pub boundary: [f64; 2],
    /// Constant source term `h`.
    pub source: f64,
    pub initial: InitialCondition,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            flux: Flux::Burgers,
            viscosity: 1e-4 / PI,
            domain: [-1.0, 1.0],
            boundary: [0.0, 0.0],
            source: 0.0,
            initial: InitialCondition::MinusSinPi,
        }
    }
}

impl PdeSection {
    pub fn to_spec(&self) -> PdeSpec {
        let mut spec = PdeSpec::burgers(self.viscosity);
        spec.flux = self.flux;
        spec.domain = (self.domain[0], self.domain[1]);
        spec.boundary = (self.boundary[0], self.boundary[1]);
        if self.source != 0.0 {
            let h = self.source;
            spec.source = Some(Arc::new(move |_, _| h));
        }
        spec.initial = match self.initial {
            InitialCondition::MinusSinPi => Arc::new(|x: f64| -(PI * x).sin()),
            InitialCondition::SinPi => Arc::new(|x: f64| (PI * x).sin()),
        };
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden_layers: 5,
            width: 20,
            seed: 0,
        }
    }
}

impl NetworkSection {
    pub fn to_config(&self, q: usize) -> NetworkConfig {
        NetworkConfig {
            hidden_layers: self.hidden_layers,
            width: self.width,
            outputs: q + 1,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Times at which solution profiles are written; empty means the final time.
    pub profile_times: Vec<f64>,
    /// Also train the plain PINN in `run` and add its column to the profiles.
    pub include_baseline: bool,
    pub format: OutputFormat,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            profile_times: Vec::new(),
            include_baseline: false,
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub q: Vec<usize>,
    pub dt: Vec<f64>,
    pub viscosity: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            q: vec![1, 4, 10, 50],
            dt: vec![0.1, 0.3, 0.6],
            viscosity: vec![1e-4 / PI, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pde: PdeSection,
    pub discretization: DiscretizationConfig,
    pub network: NetworkSection,
    pub training: TrainingConfig,
    pub reference: ReferenceSettings,
    pub outputs: OutputSection,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks every section, reporting the offending field path.
    pub fn validate(&self) -> Result<(), CliError> {
        let field = |path: &str, msg: String| Err(CliError::Config(format!("{path}: {msg}")));
        self.pde
            .to_spec()
            .validate()
            .or_else(|m| field("pde", m))?;
        self.discretization
            .validate()
            .or_else(|e| field("discretization", e.to_string()))?;
        self.training
            .validate()
            .or_else(|e| field("training", e.to_string()))?;
        self.network
            .to_config(self.discretization.q)
            .validate()
            .or_else(|e| field("network", e.to_string()))?;
        let r = &self.reference;
        if r.n_cells < 16 {
            return field("reference.n_cells", format!("{} < 16", r.n_cells));
        }
        if !(r.cfl > 0.0 && r.cfl <= 1.0) {
            return field("reference.cfl", format!("{} outside (0, 1]", r.cfl));
        }
        for &t in &self.outputs.profile_times {
            let k = (t / self.discretization.dt).round();
            if t.is_nan() || t <= 0.0 || (k * self.discretization.dt - t).abs() > 1e-9 {
                return field(
                    "outputs.profile_times",
                    format!("{t} is not a positive multiple of dt = {}", self.discretization.dt),
                );
            }
        }
        if self.sweep.q.is_empty() || self.sweep.dt.is_empty() || self.sweep.viscosity.is_empty() {
            return field("sweep", "every sweep axis needs at least one value".into());
        }
        Ok(())
    }

    /// Last time reached by `run`: `t_final` or the latest profile time.
    pub fn end_time(&self) -> f64 {
        self.outputs
            .profile_times
            .iter()
            .copied()
            .fold(self.discretization.t_final, f64::max)
    }

    pub fn profile_times(&self) -> Vec<f64> {
        if self.outputs.profile_times.is_empty() {
            vec![self.end_time()]
        } else {
            self.outputs.profile_times.clone()
        }
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one sweep cell, a pure function of the base seed and the cell.
pub fn cell_seed(base: u64, q: usize, dt: f64, viscosity: f64) -> u64 {
    [q as u64, dt.to_bits(), viscosity.to_bits()]
        .iter()
        .fold(mix(base), |acc, &v| mix(acc ^ v))
}
