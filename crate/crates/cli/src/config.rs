//! Experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use linresp::dynamics::Modulation;
use linresp::lattice::ModelSpec;
use linresp::response::{NumericsOptions, Route};
use linresp::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), message: message.into() }
    }

    /// Offending key, when known.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    pub state: StateConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub butterfly: ButterflyConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// Default adiabatic rate when `run.eps_grid` is absent.
    pub eps: f64,
    /// Time profile shared by both directions.
    pub modulation: Modulation,
    /// Observation time.
    pub t: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { eps: 0.1, modulation: Modulation::Constant, t: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateConfig {
    FermiProjection { fermi: f64 },
    FermiDirac { beta: f64, fermi: f64 },
}

impl StateConfig {
    pub fn fermi(&self) -> f64 {
        match *self {
            StateConfig::FermiProjection { fermi } | StateConfig::FermiDirac { fermi, .. } => fermi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub routes: Vec<Route>,
    pub eps_grid: Option<Vec<f64>>,
    /// Finite-difference steps `dPhi`; only the `fd` route uses them.
    pub phi_grid: Vec<f64>,
    /// Inverse temperatures at the configured Fermi energy. With a
    /// `fermi_projection` state the projection itself is added as `beta = inf`.
    pub beta_grid: Vec<f64>,
    pub ensemble_n: usize,
    /// Defaults to `1e-3 * 2 pi / ||H||`.
    pub dt: Option<f64>,
    /// Defaults to the available parallelism.
    pub workers: Option<usize>,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            routes: vec![Route::Streda],
            eps_grid: None,
            phi_grid: vec![1e-3],
            beta_grid: Vec::new(),
            ensemble_n: 1,
            dt: None,
            workers: None,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub tail_tol: f64,
    pub fd_tol: f64,
    pub quadrature_nodes: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let n = NumericsOptions::default();
        Self { tail_tol: n.tail_tol, fd_tol: n.fd_tol, quadrature_nodes: n.quadrature_nodes }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub bins: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { bins: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ButterflyConfig {
    pub q_max: i64,
    /// Momentum samples per direction of the magnetic Brillouin zone.
    pub k_points: usize,
}

impl Default for ButterflyConfig {
    fn default() -> Self {
        Self { q_max: 12, k_points: 2 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn eps_grid(&self) -> Vec<f64> {
        self.run.eps_grid.clone().unwrap_or_else(|| vec![self.perturbation.eps])
    }

    pub fn numerics(&self, h_norm: f64) -> NumericsOptions {
        let t = self.run.tolerances;
        NumericsOptions {
            dt: self.run.dt.unwrap_or_else(|| NumericsOptions::default_dt(h_norm)),
            tail_tol: t.tail_tol,
            fd_tol: t.fd_tol,
            quadrature_nodes: t.quadrature_nodes,
            ..NumericsOptions::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| match e {
            Error::FluxIncommensurate(_) => ConfigError::invalid("model.flux_q", e.to_string()),
            other => ConfigError::invalid("model", other.to_string()),
        })?;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(key, format!("must be positive and finite, got {v}")))
            }
        };
        let grid = |key: &str, values: &[f64]| {
            if values.is_empty() {
                return Err(ConfigError::invalid(key, "grid must not be empty"));
            }
            values.iter().try_for_each(|v| positive(key, *v))
        };
        positive("perturbation.eps", self.perturbation.eps)?;
        if !self.perturbation.t.is_finite() {
            return Err(ConfigError::invalid("perturbation.t", "must be finite"));
        }
        match self.perturbation.modulation {
            Modulation::Constant => {}
            Modulation::FourierCosine { omega0 } => {
                if !omega0.is_finite() {
                    return Err(ConfigError::invalid("perturbation.modulation.omega0", "must be finite"));
                }
            }
            Modulation::CompactBump { t0, t1 } => {
                if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
                    return Err(ConfigError::invalid("perturbation.modulation.t1", "needs finite t0 < t1"));
                }
            }
        }
        match self.state {
            StateConfig::FermiProjection { fermi } => {
                if !fermi.is_finite() {
                    return Err(ConfigError::invalid("state.fermi", "must be finite"));
                }
            }
            StateConfig::FermiDirac { beta, fermi } => {
                positive("state.beta", beta)?;
                if !fermi.is_finite() {
                    return Err(ConfigError::invalid("state.fermi", "must be finite"));
                }
            }
        }
        if self.run.routes.is_empty() {
            return Err(ConfigError::invalid("run.routes", "at least one route is required"));
        }
        grid("run.eps_grid", &self.eps_grid())?;
        grid("run.phi_grid", &self.run.phi_grid)?;
        self.run.beta_grid.iter().try_for_each(|b| positive("run.beta_grid", *b))?;
        if self.run.ensemble_n == 0 {
            return Err(ConfigError::invalid("run.ensemble_n", "must be at least 1"));
        }
        if let Some(dt) = self.run.dt {
            positive("run.dt", dt)?;
        }
        if self.run.workers == Some(0) {
            return Err(ConfigError::invalid("run.workers", "must be at least 1"));
        }
        let t = &self.run.tolerances;
        positive("run.tolerances.tail_tol", t.tail_tol)?;
        positive("run.tolerances.fd_tol", t.fd_tol)?;
        if t.quadrature_nodes < 2 {
            return Err(ConfigError::invalid("run.tolerances.quadrature_nodes", "must be at least 2"));
        }
        if self.output.formats.is_empty() {
            return Err(ConfigError::invalid("output.formats", "at least one format is required"));
        }
        if self.spectrum.bins == 0 {
            return Err(ConfigError::invalid("spectrum.bins", "must be at least 1"));
        }
        if self.butterfly.q_max < 1 || self.butterfly.k_points == 0 {
            return Err(ConfigError::invalid("butterfly.q_max", "q_max and k_points must be at least 1"));
        }
        Ok(())
    }
}
