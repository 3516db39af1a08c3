use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sevastyanov::simulator::{Caps, SimSpec};
use sevastyanov::solver::{uniform, GridSpec};
use sevastyanov::validation::SuiteConfig;
use sevastyanov::{AgeMode, Kernel, KernelConfig};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Sample genealogies directly by thinning.
    #[default]
    Direct,
    /// Prune simulated trees and discard extinct ones.
    Prune,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_t: Option<usize>,
    pub s_grid: Option<Vec<f64>>,
    pub alpha_grid: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenealogyConfig {
    pub method: Method,
    /// Bins of the root-length histogram on `[0, T − τ]`.
    pub length_bins: usize,
}

impl Default for GenealogyConfig {
    fn default() -> Self {
        GenealogyConfig { method: Method::Direct, length_bins: 20 }
    }
}

/// One JSON document driving every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub mode: AgeMode,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(rename = "T", default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub genealogy: GenealogyConfig,
    #[serde(default)]
    pub validate: SuiteConfig,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Kernel and start of the population, checked for the model commands.
    pub fn model(&self) -> Result<(Kernel, SimSpec), CliError> {
        let config = self.kernel.clone().ok_or_else(|| CliError::Config("missing \"kernel\"".into()))?;
        let horizon = self.horizon.ok_or_else(|| CliError::Config("missing \"T\"".into()))?;
        if !(self.tau >= 0.0 && horizon > self.tau && horizon.is_finite()) {
            return Err(CliError::Config(format!("need T > tau >= 0, got tau={} T={horizon}", self.tau)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CliError::Config(format!("alpha={} must be finite and nonnegative", self.alpha)));
        }
        if self.replicates == 0 {
            return Err(CliError::Config("replicates must be at least 1".into()));
        }
        let kernel = Kernel::new(config).map_err(|e| CliError::Config(e.to_string()))?;
        let mut spec = SimSpec::new(self.tau, self.alpha, horizon, self.mode);
        spec.caps = self.caps;
        Ok((kernel, spec))
    }

    /// Solver grid on `[0, T]`.
    pub fn grid_spec(&self, horizon: f64) -> Result<GridSpec, CliError> {
        let defaults = GridSpec::with_defaults(horizon);
        let grid = GridSpec {
            horizon,
            n_t: self.grid.n_t.unwrap_or(defaults.n_t),
            s_grid: self.grid.s_grid.clone().unwrap_or_else(|| uniform(0.0, 1.0, 21)),
            alpha_grid: self.grid.alpha_grid.clone().unwrap_or(defaults.alpha_grid),
        };
        grid.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c: RunConfig = serde_json::from_str(
            r#"{"kernel": {"type": "birth_death", "beta": {"kind": "constant", "value": 1.0},
                "delta": {"kind": "constant", "value": 0.0}}, "T": 1.0}"#,
        )
        .unwrap();
        assert_eq!(c.replicates, 1);
        let (k, spec) = c.model().unwrap();
        assert_eq!(k.max_offspring(), 2);
        assert_eq!(spec.horizon, 1.0);
        assert_eq!(c.grid_spec(1.0).unwrap().n_t, 512);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad: RunConfig = serde_json::from_str(r#"{"T": 1.0}"#).unwrap();
        assert!(matches!(bad.model(), Err(CliError::Config(_))));
        assert!(serde_json::from_str::<RunConfig>(r#"{"T": 1.0, "unknown": 3}"#).is_err());
        let c: RunConfig = serde_json::from_str(
            r#"{"kernel": {"type": "birth_death", "beta": {"kind": "constant", "value": 1.0},
                "delta": {"kind": "constant", "value": 0.0}}, "T": 1.0, "tau": 2.0}"#,
        )
        .unwrap();
        assert!(matches!(c.model(), Err(CliError::Config(_))));
    }
}
