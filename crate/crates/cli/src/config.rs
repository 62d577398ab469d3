use std::path::{Path, PathBuf};

use bridgelab_core::{Potential, PotentialDescriptor, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bridge,
    Flow,
    Gaussian,
    Verify,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub csv_dir: PathBuf,
    /// Defaults to `<csv_dir>/<name>.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    /// Not used by the Gaussian mode, whose reference measure is fixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialDescriptor>,
    pub endpoints: Endpoints,
    #[serde(rename = "T_values")]
    pub horizons: Vec<f64>,
    #[serde(default = "default_thetas")]
    pub theta_values: Vec<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
    pub outputs: Outputs,
}

fn default_thetas() -> Vec<f64> {
    (1..10).map(|i| i as f64 / 10.0).collect()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail(format!("name must be a non-empty file stem, got {:?}", self.name));
        }
        if self.horizons.is_empty() {
            return fail("T_values must not be empty".into());
        }
        if let Some(t) = self.horizons.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return fail(format!("T_values must be positive and finite, got {t}"));
        }
        if self.horizons.windows(2).any(|w| !(w[1] > w[0])) {
            return fail("T_values must be strictly increasing".into());
        }
        if let Some(th) = self.theta_values.iter().find(|th| !(**th > 0.0 && **th < 1.0)) {
            return fail(format!("theta_values must lie in (0, 1), got {th}"));
        }
        let (x, y) = (&self.endpoints.x, &self.endpoints.y);
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return fail("endpoints must be finite".into());
        }
        if x.len() != y.len() {
            return fail(format!("endpoint dimensions differ: {} vs {}", x.len(), y.len()));
        }
        if self.mode == Mode::Sweep && self.horizons.len() < 3 {
            return fail("sweep mode needs at least 3 T_values".into());
        }
        if self.mode == Mode::Gaussian {
            if x.len() != 1 {
                return fail(format!("gaussian mode takes scalar endpoints, got dimension {}", x.len()));
            }
            return Ok(());
        }
        let potential = self.potential()?;
        if x.len() != potential.dim() {
            return fail(format!("endpoints have dimension {}, potential has {}", x.len(), potential.dim()));
        }
        for point in [x, y] {
            if !potential.contains(point) {
                return fail(format!("endpoint {point:?} is outside the domain of the potential"));
            }
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<Potential, CliError> {
        let descriptor = self
            .potential
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("mode {:?} requires a potential", self.mode)))?;
        Potential::from_descriptor(descriptor).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn json_path(&self) -> PathBuf {
        self.outputs
            .json_path
            .clone()
            .unwrap_or_else(|| self.outputs.csv_dir.join(format!("{}.json", self.name)))
    }

    /// Redirects every artifact into `dir`, keeping file names.
    pub fn redirect(&mut self, dir: &Path) {
        let json_name = self.json_path().file_name().map(PathBuf::from);
        self.outputs.csv_dir = dir.to_path_buf();
        self.outputs.json_path = json_name.map(|n| dir.join(n));
    }
}
