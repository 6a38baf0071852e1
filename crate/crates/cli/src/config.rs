//! The JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use heston_hjb::hjb::{GridConfig, SchemeConfig, Window};
use heston_hjb::model::{ControlBounds, CostSpec, InitialState, ModelParams};
use heston_hjb::policy::PolicySpec;
use heston_hjb::sde::SimConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_levels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Also dump every simulated path from `simulate`.
    #[serde(default)]
    pub write_paths: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            write_paths: false,
        }
    }
}

/// Refinement study settings. The base grid and time-step count come from the
/// `grid` and `scheme` sections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub window: Window,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            window: Window::whole(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub bounds: ControlBounds,
    pub cost: CostSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitialState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }

    pub fn grid(&self) -> Result<&GridConfig, CliError> {
        self.grid.as_ref().ok_or_else(|| missing("grid"))
    }

    pub fn init(&self) -> Result<&InitialState, CliError> {
        self.init.as_ref().ok_or_else(|| missing("init"))
    }

    pub fn sim(&self) -> Result<&SimConfig, CliError> {
        self.sim.as_ref().ok_or_else(|| missing("sim"))
    }

    /// Applies `--seed` and `--resolution NX,NY,N`.
    pub fn apply_overrides(&mut self, seed: Option<u64>, resolution: Option<Resolution>) -> Result<(), CliError> {
        if let Some(seed) = seed {
            if let Some(sim) = self.sim.as_mut() {
                sim.seed = seed;
            }
        }
        if let Some(r) = resolution {
            let grid = self.grid.as_mut().ok_or_else(|| missing("grid"))?;
            grid.nx = r.nx;
            grid.ny = r.ny;
            self.scheme.n_time_steps = r.n_time_steps;
        }
        Ok(())
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("this command needs a `{section}` section"))
}

/// `NX,NY,N` from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution {
    pub nx: usize,
    pub ny: usize,
    pub n_time_steps: usize,
}

impl std::str::FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [nx, ny, n] = parts.as_slice() else {
            return Err(format!("expected NX,NY,N (got `{s}`)"));
        };
        let num = |v: &str| v.parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
        Ok(Self {
            nx: num(nx)?,
            ny: num(ny)?,
            n_time_steps: num(n)?,
        })
    }
}
