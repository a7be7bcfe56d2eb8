//! Run configuration: JSON document, defaults, dotted-path overrides and
//! validation with path-qualified messages.

use std::path::PathBuf;
use std::sync::Arc;

use clap::ValueEnum;
use ergodic_core::eigensolver::BoundaryMode;
use ergodic_core::hamiltonian::TabulatedPotential;
use ergodic_core::lp::uniform_xi_grid;
use ergodic_core::sde::SimParams;
use ergodic_core::{DriftSpec, Grid, HamiltonianKind, HamiltonianModel, PotentialSpec, SolverOptions, Vector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed configuration: {0}")]
    Malformed(String),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Scenario {
    #[default]
    Solve,
    Exhaust,
    Lp,
    FokkerPlanck,
    Simulate,
    Compare,
    Check,
    FullVerify,
}

/// Top-level document. Every block and field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Default `solve`.
    pub scenario: Scenario,
    /// Seeds the Monte Carlo paths and the random feasible measures.
    pub seed: u64,
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub potential: PotentialConfig,
    pub solver: SolverOptions,
    pub exhaustion: ExhaustionConfig,
    pub lp: LpConfig,
    pub sde: SdeConfig,
    pub checks: CheckConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Solve,
            seed: 20240917,
            grid: GridConfig::default(),
            model: ModelConfig::default(),
            potential: PotentialConfig::default(),
            solver: SolverOptions::default(),
            exhaustion: ExhaustionConfig::default(),
            lp: LpConfig::default(),
            sde: SdeConfig::default(),
            checks: CheckConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Default `dim = 1`, `radius = 8`, `spacing = 0.01`. The radius leaves
/// room for the truncation layer near the box edge, where the reflected
/// solution flattens and its control weakens; simulated paths extend the
/// control beyond the grid by its outermost value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub radius: f64,
    pub spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 1, radius: 8.0, spacing: 0.01 }
    }
}

/// Default pure power with `gamma = 1.5`; `drift` is required for `drift_power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: HamiltonianKind,
    pub gamma: f64,
    pub drift: Option<DriftSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: HamiltonianKind::PurePower, gamma: 1.5, drift: None }
    }
}

/// Default `quadratic_power` with the model's `gamma`, the instance whose
/// exact eigenvalue is `1 + dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// `f = 1 + |x|^γ/γ`.
    QuadraticPower {
        #[serde(default)]
        gamma: Option<f64>,
    },
    /// `f = 1 + |x|^β`.
    PowerBeta { beta: f64 },
    Constant { value: f64 },
    /// `f = 1 + e^{|x|}`.
    Exponential,
    /// `f = |x|² + sin(|x|⁴) + 2`.
    QuarticOscillation,
    /// Node values on the run grid, in node order.
    Tabulated { values: Vec<f64> },
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self::QuadraticPower { gamma: None }
    }
}

/// Default radii `{3, 4, 5, 6}` at the run grid's spacing with the
/// large-Dirichlet closure `M = 1000`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExhaustionConfig {
    pub radii: Vec<f64>,
    /// Defaults to `grid.spacing`.
    pub spacing: Option<f64>,
    pub boundary_mode: BoundaryMode,
}

impl Default for ExhaustionConfig {
    fn default() -> Self {
        Self { radii: vec![3.0, 4.0, 5.0, 6.0], spacing: None, boundary_mode: BoundaryMode::DirichletBig(1e3) }
    }
}

/// The LP runs on its own, coarser grid: default `radius = 4`, `spacing = 0.1`,
/// 41 controls per axis on `[−4, 4]`, 100 random feasible measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpConfig {
    pub radius: f64,
    pub spacing: f64,
    pub xi_bound: f64,
    pub xi_count: usize,
    pub random_measures: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self { radius: 4.0, spacing: 0.1, xi_bound: 4.0, xi_count: 41, random_measures: 100 }
    }
}

/// Default `T = 2000`, `dt = 1e-3`, 16 paths from the origin, burn-in 10;
/// competitors are the optimal control scaled by 0.5 and 2 and switched off
/// on the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub horizon: f64,
    pub timestep: f64,
    pub n_paths: usize,
    pub x0: Vector,
    pub burn_in: f64,
    pub competitor_scales: Vec<f64>,
    pub dead_zone: Option<f64>,
}

impl Default for SdeConfig {
    fn default() -> Self {
        let p = SimParams::default();
        Self {
            horizon: p.horizon,
            timestep: p.timestep,
            n_paths: p.n_paths,
            x0: p.x0,
            burn_in: p.burn_in,
            competitor_scales: vec![0.5, 2.0],
            dead_zone: Some(1.0),
        }
    }
}

/// Ball radii for the interior gradient bound, default `{0.25, 0.5, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub gradient_radii: Vec<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { gradient_radii: vec![0.25, 0.5, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Default directory `out`, both formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), formats: vec![Format::Json, Format::Csv] }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

/// Core objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Instance {
    pub grid: Grid,
    pub model: HamiltonianModel,
    pub potential: PotentialSpec,
    pub lp_grid: Grid,
    pub xi_grid: Vec<Vector>,
    pub sim: SimParams,
}

impl RunConfig {
    pub fn sim_params(&self) -> SimParams {
        SimParams {
            horizon: self.sde.horizon,
            timestep: self.sde.timestep,
            n_paths: self.sde.n_paths,
            seed: self.seed,
            x0: self.sde.x0,
            burn_in: self.sde.burn_in,
        }
    }

    /// Validates every block and builds the core objects.
    pub fn build(&self) -> Result<Instance, ConfigError> {
        let g = &self.grid;
        if !(1..=2).contains(&g.dim) {
            return Err(invalid("grid.dim", format!("dim must be 1 or 2 (desk-scale limit), got {}", g.dim)));
        }
        let grid = Grid::new(g.dim, g.radius, g.spacing).map_err(|e| invalid("grid", e))?;

        let m = &self.model;
        if !(m.gamma.is_finite() && m.gamma > 1.0) {
            return Err(invalid("model.gamma", format!("gamma must exceed 1, got {}", m.gamma)));
        }
        let model = match (m.kind, &m.drift) {
            (HamiltonianKind::PurePower, None) => HamiltonianModel::pure_power(m.gamma),
            (HamiltonianKind::PurePower, Some(_)) => {
                return Err(invalid("model.drift", "a drift needs kind = drift_power"));
            }
            (HamiltonianKind::DriftPower, Some(b)) => HamiltonianModel::drift_power(m.gamma, b.clone()),
            (HamiltonianKind::DriftPower, None) => return Err(invalid("model.drift", "drift_power needs a drift")),
        }
        .map_err(|e| invalid("model", e))?;

        let potential = match &self.potential {
            PotentialConfig::QuadraticPower { gamma } => {
                PotentialSpec::QuadraticPower { gamma: gamma.unwrap_or(m.gamma) }
            }
            PotentialConfig::PowerBeta { beta } => PotentialSpec::PowerBeta { beta: *beta },
            PotentialConfig::Constant { value } => PotentialSpec::Constant { value: *value },
            PotentialConfig::Exponential => PotentialSpec::Exponential,
            PotentialConfig::QuarticOscillation => PotentialSpec::QuarticOscillation,
            PotentialConfig::Tabulated { values } => PotentialSpec::Tabulated(Arc::new(
                TabulatedPotential::new(grid.clone(), values.clone()).map_err(|e| invalid("potential.values", e))?,
            )),
        };
        potential.validate().map_err(|e| invalid("potential", e))?;

        self.solver.validate().map_err(|e| invalid("solver", e))?;

        let ex = &self.exhaustion;
        let ex_spacing = ex.spacing.unwrap_or(g.spacing);
        if ex.radii.is_empty() || ex.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("exhaustion.radii", "radii must be non-empty and strictly increasing"));
        }
        if ex.radii[0] < 4.0 * ex_spacing {
            return Err(invalid("exhaustion.radii", "the smallest radius must be at least four grid steps"));
        }
        if let BoundaryMode::DirichletBig(v) = ex.boundary_mode {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid("exhaustion.boundary_mode", "the Dirichlet value must be positive"));
            }
        }

        let lp_grid = Grid::new(g.dim, self.lp.radius, self.lp.spacing).map_err(|e| invalid("lp", e))?;
        let xi_grid =
            uniform_xi_grid(g.dim, self.lp.xi_bound, self.lp.xi_count).map_err(|e| invalid("lp.xi_count", e))?;

        let sim = self.sim_params();
        sim.validate().map_err(|e| invalid("sde", e))?;
        if self.sde.competitor_scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("sde.competitor_scales", "scales must be finite and nonnegative"));
        }
        if let Some(z) = self.sde.dead_zone {
            if !(z.is_finite() && z > 0.0) {
                return Err(invalid("sde.dead_zone", "the dead-zone radius must be positive"));
            }
        }

        let quarter = grid.extent() / 4.0;
        let radii = &self.checks.gradient_radii;
        if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0 && r <= quarter + 1e-12)) {
            return Err(invalid("checks.gradient_radii", format!("radii must lie in (0, {quarter}]")));
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "at least one output format is needed"));
        }

        Ok(Instance { grid, model, potential, lp_grid, xi_grid, sim })
    }
}

/// Sets `path` (dot-separated) to `value`, parsed as JSON when possible and
/// taken as a string otherwise. Missing intermediate objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Malformed(format!("override {assignment:?} is not key=value")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(ConfigError::Malformed(format!("override key {path:?} is not a dotted path")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if !node.is_object() {
            let parent = keys[..i].join(".");
            return Err(invalid(&parent, "cannot set a field inside a non-object value"));
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one key")
}

/// Parses and validates a JSON document after applying `key=value` overrides.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    if !doc.is_object() {
        return Err(ConfigError::Malformed("the document must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let config: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        invalid(if path == "." { "<root>" } else { &path }, e.into_inner())
    })?;
    config.build()?;
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &[])
}
