//! Typed run configuration: a TOML file plus `--set section.key=value`
//! overrides, with every default matching the experiment settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub noise: NoiseConfig,
    pub regularization: RegularizationConfig,
    pub optimizer: OptimizerConfig,
    pub observation: ObservationConfig,
    pub solver: SolverConfig,
    pub output: OutputConfig,
    pub table: TableConfig,
    pub custom: Option<CustomProblemConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Experiment preset 1..=6, or 0 to use the [custom] block.
    pub experiment: u32,
    /// Refinement level l: h = 2^-l.
    pub level: u32,
    /// Time-step rule Δt = dt_per_h · h.
    pub dt_per_h: f64,
    /// "computed" (forward solve) or "exact" (closed-form solution).
    pub data_mode: String,
    /// Optional measured-trace CSV consumed by `reconstruct` instead of
    /// synthesizing data inline.
    pub data_file: Option<String>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            experiment: 1,
            level: 4,
            dt_per_h: 1.0,
            data_mode: "computed".into(),
            data_file: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub delta_percent: f64,
    pub seed: u64,
    pub smooth_halfwidth: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            delta_percent: 1.0,
            seed: 42,
            smooth_halfwidth: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    /// Initial γ⁰; when absent it is (δ/100)^ζ, or 0 for noise-free data.
    pub gamma0: Option<f64>,
    pub zeta: f64,
    pub p: f64,
    /// Keep γ fixed at γ⁰ instead of the decaying schedule.
    pub fixed: bool,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            gamma0: None,
            zeta: 0.5,
            p: 0.5,
            fixed: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    pub theta1: f64,
    pub theta2: f64,
    /// Optional projection of every iterate onto [lo, hi].
    pub clamp: Option<[f64; 2]>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 40,
            theta1: 0.0,
            theta2: 0.0,
            clamp: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub band_width: usize,
    pub sigma: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            band_width: 1,
            sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Norm realization for the Θ/e_m metrics: "trapezoid" or "nodal".
    pub norm: String,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
            norm: "trapezoid".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    pub experiments: Vec<u32>,
    pub level_min: u32,
    pub level_max: u32,
    pub deltas: Vec<f64>,
    /// Fan independent (experiment, level, δ) runs across worker threads.
    pub workers: usize,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            experiments: vec![1],
            level_min: 2,
            level_max: 6,
            deltas: vec![1.0, 3.0],
            workers: 0,
        }
    }
}

/// Analytic atoms for a user-defined problem (experiment = 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomProblemConfig {
    pub dim: usize,
    /// Coefficient: "one_plus_coords" (1+xy or 1+xyz) or "const:<v>".
    pub a: String,
    /// Exact source (optional; enables Θ reporting): "const:<v>" or
    /// "gaussian:<cx>,<cy>[,<cz>],<m1>".
    pub f_true: Option<String>,
    /// Initial guess, same atoms as f_true.
    pub f0: String,
    /// Modulation: "const:<v>" or "poly_cos" ((1+Πx+dπ²t)·Πcos(πx)).
    pub g: String,
}

impl Default for CustomProblemConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            a: "one_plus_coords".into(),
            f_true: None,
            f0: "const:1.0".into(),
            g: "poly_cos".into(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Load the config file (if any) and apply `--set section.key=value`
/// overrides, then validate.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            text.parse()
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| config_err(format!("invalid configuration: {e}")))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key_path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set {spec:?}: expected section.key=value")))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|t| t["v"].clone())
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key_path.trim().split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("--set {spec:?}: bad key path {key_path:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("--set {spec:?}: {part} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    let p = &cfg.problem;
    if p.experiment > 6 {
        return Err(config_err(format!(
            "problem.experiment: must be 0 (custom) or 1..=6, got {}",
            p.experiment
        )));
    }
    if p.experiment == 0 && cfg.custom.is_none() {
        return Err(config_err("problem.experiment = 0 requires a [custom] block"));
    }
    let max_level = if p.experiment == 6 { 4 } else { 6 };
    if p.experiment != 0 && !(2..=max_level).contains(&p.level) {
        return Err(config_err(format!(
            "problem.level: must be in 2..={max_level} for experiment {}, got {}",
            p.experiment, p.level
        )));
    }
    if !(p.dt_per_h > 0.0) {
        return Err(config_err(format!("problem.dt_per_h: must be positive, got {}", p.dt_per_h)));
    }
    if p.data_mode != "computed" && p.data_mode != "exact" {
        return Err(config_err(format!(
            "problem.data_mode: expected \"computed\" or \"exact\", got {:?}",
            p.data_mode
        )));
    }
    if !(0.0..100.0).contains(&cfg.noise.delta_percent) {
        return Err(config_err(format!(
            "noise.delta_percent: must be in [0, 100), got {}",
            cfg.noise.delta_percent
        )));
    }
    let r = &cfg.regularization;
    if let Some(g0) = r.gamma0 {
        if !(g0 >= 0.0) {
            return Err(config_err(format!("regularization.gamma0: must be nonnegative, got {g0}")));
        }
    }
    if !(r.zeta > 0.0 && r.zeta < 1.0) {
        return Err(config_err(format!("regularization.zeta: must lie in (0,1), got {}", r.zeta)));
    }
    if !(r.p > 0.0 && r.p < 1.0) {
        return Err(config_err(format!("regularization.p: must lie in (0,1), got {}", r.p)));
    }
    let o = &cfg.optimizer;
    if o.max_iter == 0 {
        return Err(config_err("optimizer.max_iter: must be at least 1"));
    }
    if o.theta1 < 0.0 || o.theta2 < 0.0 {
        return Err(config_err("optimizer.theta1/theta2: must be nonnegative"));
    }
    if let Some([lo, hi]) = o.clamp {
        if !(lo < hi) {
            return Err(config_err(format!("optimizer.clamp: need lo < hi, got [{lo}, {hi}]")));
        }
    }
    if cfg.observation.band_width == 0 {
        return Err(config_err("observation.band_width: must be at least 1"));
    }
    if !(cfg.observation.sigma > 0.0) {
        return Err(config_err(format!(
            "observation.sigma: must be positive, got {}",
            cfg.observation.sigma
        )));
    }
    if !(cfg.solver.tolerance > 0.0) {
        return Err(config_err(format!(
            "solver.tolerance: must be positive, got {}",
            cfg.solver.tolerance
        )));
    }
    if cfg.solver.max_iterations == 0 {
        return Err(config_err("solver.max_iterations: must be at least 1"));
    }
    if cfg.solver.norm != "trapezoid" && cfg.solver.norm != "nodal" {
        return Err(config_err(format!(
            "solver.norm: expected \"trapezoid\" or \"nodal\", got {:?}",
            cfg.solver.norm
        )));
    }
    let t = &cfg.table;
    if t.level_min > t.level_max {
        return Err(config_err(format!(
            "table.level_min..level_max: empty range {}..{}",
            t.level_min, t.level_max
        )));
    }
    if t.experiments.is_empty() {
        return Err(config_err("table.experiments: need at least one experiment"));
    }
    if t.deltas.is_empty() {
        return Err(config_err("table.deltas: need at least one noise level"));
    }
    if let Some(c) = &cfg.custom {
        if c.dim != 2 && c.dim != 3 {
            return Err(config_err(format!("custom.dim: must be 2 or 3, got {}", c.dim)));
        }
    }
    Ok(())
}
