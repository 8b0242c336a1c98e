//! Experiment configuration files.
//!
//! Every section and every field is optional; omitted values take the
//! defaults below. Unknown keys are rejected so that typos do not silently
//! fall back to defaults. Complex matrix entries are `[re, im]` pairs.
//!
//! ```json
//! {
//!   "plant":    { "r_p": [0, 0, 0], "c_p": [1, 0, 0],
//!                 "rho_p": [[[0.5, 0], [0, 0]], [[0, 0], [0.5, 0]]] },
//!   "observer": { "omega_o": 1.0, "kappa": 4.0, "beta": [1, 0] },
//!   "sim":      { "dt": 0.01, "t_final": 10, "n_paths": 2000, "seed": 1, "scheme": "exact_lti" },
//!   "filter":   { "dt": 0.001, "t_final": 20, "n_paths": 2000, "checkpoints": 10 },
//!   "oracle":   { "n_trunc": 20, "dt": 0.001 },
//!   "outputs":  { "directory": "out", "export_paths": 4 }
//! }
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::{Matrix2, RowVector3, Vector2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use coherent_observer::fock::FockConfig;
use coherent_observer::sde::{Scheme, SimConfig};
use coherent_observer::{ObserverSpec, PlantSpec};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSection,
    pub observer: ObserverSection,
    pub sim: SimSection,
    pub filter: FilterSection,
    pub oracle: OracleSection,
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub r_p: [f64; 3],
    pub c_p: [f64; 3],
    /// Row-major 2x2 density matrix, entries as `[re, im]`.
    pub rho_p: [[[f64; 2]; 2]; 2],
}

impl Default for PlantSection {
    fn default() -> Self {
        PlantSection {
            r_p: [0.0; 3],
            c_p: [1.0, 0.0, 0.0],
            rho_p: [[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.5, 0.0]]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverSection {
    pub omega_o: f64,
    pub kappa: f64,
    pub beta: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_o0: Option<[f64; 2]>,
    /// Row-major initial observer covariance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_o0: Option<[[f64; 2]; 2]>,
}

impl Default for ObserverSection {
    fn default() -> Self {
        ObserverSection { omega_o: 1.0, kappa: 4.0, beta: [1.0, 0.0], x_o0: None, sigma_o0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    EulerMaruyama,
    #[default]
    ExactLti,
}

impl From<SchemeName> for Scheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::EulerMaruyama => Scheme::EulerMaruyama,
            SchemeName::ExactLti => Scheme::ExactLti,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: SchemeName,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { dt: 0.01, t_final: 10.0, n_paths: 2000, seed: 1, scheme: SchemeName::ExactLti }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// Grid step shared by the Riccati solver, the simulator and the filter.
    pub dt: f64,
    pub t_final: f64,
    pub n_paths: usize,
    pub checkpoints: usize,
    /// Number of random constant gain perturbations checked for optimality.
    pub perturbations: usize,
    /// Scale of the perturbation entries.
    pub perturbation_scale: f64,
    /// Also check the scalar regression case against `1/(1+t)` on `[0, 10]`.
    pub scalar_self_test: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            dt: 1e-3,
            t_final: 20.0,
            n_paths: 2000,
            checkpoints: 10,
            perturbations: 50,
            perturbation_scale: 0.5,
            scalar_self_test: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub n_trunc: usize,
    pub dt: f64,
    /// Defaults to `10 / kappa`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    /// Row stride of `oracle.csv`.
    pub record_every: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { n_trunc: 20, dt: 1e-3, t_final: None, record_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Number of paths written to `paths.csv`.
    pub export_paths: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("out"), export_paths: 4 }
    }
}

impl ExperimentConfig {
    /// Parse and validate a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("at `{}`: {}", e.path(), e.inner()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Re-run every model-level validation.
    pub fn validate(&self) -> Result<()> {
        let plant = self.plant_spec()?;
        let observer = self.observer_spec()?;
        coherent_observer::build_augmented(&plant, &observer)?;
        self.sim_config()?;
        self.filter_sim_config()?;
        if self.filter.n_paths < 2 {
            anyhow::bail!("invalid parameter `filter.n_paths`: error statistics need at least 2 paths");
        }
        if self.filter.checkpoints == 0 {
            anyhow::bail!("invalid parameter `filter.checkpoints`: must be at least 1");
        }
        if !(self.filter.perturbation_scale.is_finite() && self.filter.perturbation_scale > 0.0) {
            anyhow::bail!("invalid parameter `filter.perturbation_scale`: must be finite and > 0");
        }
        if self.oracle.record_every == 0 {
            anyhow::bail!("invalid parameter `oracle.record_every`: must be at least 1");
        }
        self.fock_config()?;
        Ok(())
    }

    pub fn plant_spec(&self) -> Result<PlantSpec> {
        let p = &self.plant;
        let rho = Matrix2::from_fn(|i, j| Complex64::new(p.rho_p[i][j][0], p.rho_p[i][j][1]));
        Ok(PlantSpec::new(Vector3::from(p.r_p), RowVector3::from(p.c_p), rho)?)
    }

    pub fn observer_spec(&self) -> Result<ObserverSpec> {
        let o = &self.observer;
        let spec = ObserverSpec::new(o.omega_o, o.kappa, Vector2::from(o.beta))?;
        if o.x_o0.is_none() && o.sigma_o0.is_none() {
            return Ok(spec);
        }
        let mean = o.x_o0.map(Vector2::from).unwrap_or_else(Vector2::zeros);
        let cov = o.sigma_o0.map(|s| Matrix2::new(s[0][0], s[0][1], s[1][0], s[1][1])).unwrap_or_else(Matrix2::identity);
        Ok(spec.with_initial_state(mean, cov)?)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = &self.sim;
        Ok(SimConfig::new(s.dt, s.t_final, s.n_paths, s.seed)?.with_scheme(s.scheme.into()))
    }

    /// Simulation settings for the filter run: the filter grid with the
    /// simulation seed and scheme.
    pub fn filter_sim_config(&self) -> Result<SimConfig> {
        let f = &self.filter;
        Ok(SimConfig::new(f.dt, f.t_final, f.n_paths, self.sim.seed)?.with_scheme(self.sim.scheme.into()))
    }

    pub fn fock_config(&self) -> Result<FockConfig> {
        let o = &self.oracle;
        let t_final = o.t_final.unwrap_or(10.0 / self.observer.kappa);
        Ok(FockConfig::new(o.n_trunc, o.dt, t_final)?.with_record_every(o.record_every))
    }
}
