//! Assemble the runnable problem (grid, fields, schedules, weights) from a
//! validated configuration.

use invsource::grid::{make_grid, NormKind, TimeAxis};
use invsource::objective::{build_weights, BoundaryTrace, ObservationWeights};
use invsource::optimizer::{
    initial_gamma, ExecParams, RegularizationSchedule, StoppingCriteria,
};
use invsource::pde::LinearSolveParams;
use invsource::synth::{
    add_noise, make_data_with, preset_with_time, smooth_data, DataMode, NoiseSpec, ProblemSpec,
};
use invsource::{Field64, Problem64, Trace64};

use crate::config::{CustomProblemConfig, RunConfig};
use crate::error::{CliError, CliResult};

pub struct BuiltProblem {
    pub spec: Problem64,
    pub f_exact: Option<Field64>,
    pub weights: ObservationWeights<f64>,
    pub noise: NoiseSpec,
    pub data_mode: DataMode,
    pub exec: ExecParams<f64>,
    pub sched: RegularizationSchedule<f64>,
    pub stop: StoppingCriteria<f64>,
}

fn time_axis_for(level: u32, dt_per_h: f64) -> CliResult<TimeAxis<f64>> {
    let cells = 1usize << level;
    let n_steps = (cells as f64 / dt_per_h).round().max(1.0) as usize;
    Ok(TimeAxis::new(1.0, n_steps)?)
}

/// Tiny analytic-atom parser for custom scalar fields.
fn parse_field_atom(atom: &str, key: &str, grid: invsource::grid::Grid) -> CliResult<Field64> {
    if let Some(v) = atom.strip_prefix("const:") {
        let c: f64 = v
            .parse()
            .map_err(|_| CliError::Config(format!("custom.{key}: bad constant {v:?}")))?;
        return Ok(Field64::constant(grid, c));
    }
    if atom == "one_plus_coords" {
        return Ok(Field64::from_fn(grid, |x| {
            1.0 + x.iter().take(grid.dim()).product::<f64>()
        }));
    }
    if let Some(rest) = atom.strip_prefix("gaussian:") {
        let parts: Vec<f64> = rest
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("custom.{key}: bad gaussian params {rest:?}")))?;
        if parts.len() != grid.dim() + 1 {
            return Err(CliError::Config(format!(
                "custom.{key}: gaussian needs {} center coordinates plus a width",
                grid.dim()
            )));
        }
        let m1 = parts[grid.dim()];
        if !(m1 > 0.0) {
            return Err(CliError::Config(format!("custom.{key}: gaussian width must be positive")));
        }
        let center = parts;
        return Ok(Field64::from_fn(grid, move |x| {
            let mut d2 = 0.0;
            for ax in 0..grid.dim() {
                d2 += (x[ax] - center[ax]).powi(2);
            }
            (-d2 / m1).exp()
        }));
    }
    Err(CliError::Config(format!(
        "custom.{key}: unknown field expression {atom:?} (try const:<v>, one_plus_coords, gaussian:...)",
    )))
}

fn build_custom(cfg: &RunConfig, c: &CustomProblemConfig) -> CliResult<(Problem64, Option<Field64>)> {
    let n = 1usize << cfg.problem.level;
    let grid = if c.dim == 2 {
        make_grid(2, &[n, n])?
    } else {
        make_grid(3, &[n, n, n])?
    };
    let time = time_axis_for(cfg.problem.level, cfg.problem.dt_per_h)?;
    let a = parse_field_atom(&c.a, "a", grid)?;
    let f0 = parse_field_atom(&c.f0, "f0", grid)?;
    let f_true = c
        .f_true
        .as_deref()
        .map(|s| parse_field_atom(s, "f_true", grid))
        .transpose()?;
    let dim = grid.dim();
    let g_mod = if let Some(v) = c.g.strip_prefix("const:") {
        let cv: f64 = v
            .parse()
            .map_err(|_| CliError::Config(format!("custom.g: bad constant {v:?}")))?;
        invsource::SpaceTimeField64::from_fn(grid, time, move |_, _| cv)
    } else if c.g == "poly_cos" {
        invsource::SpaceTimeField64::from_fn(grid, time, move |x, t| {
            let pi = std::f64::consts::PI;
            let mut v = 1.0 + x.iter().take(dim).product::<f64>() + dim as f64 * pi * pi * t;
            for ax in 0..dim {
                v *= (pi * x[ax]).cos();
            }
            v
        })
    } else {
        return Err(CliError::Config(format!(
            "custom.g: unknown modulation {:?} (try const:<v> or poly_cos)",
            c.g
        )));
    };
    let spec = ProblemSpec {
        grid,
        time,
        a,
        g_mod,
        f0,
        f_true: f_true.clone(),
        exact: None,
    };
    spec.validate()?;
    Ok((spec, f_true))
}

pub fn build_problem(cfg: &RunConfig) -> CliResult<BuiltProblem> {
    let (spec, f_exact) = if cfg.problem.experiment == 0 {
        let c = cfg
            .custom
            .as_ref()
            .ok_or_else(|| CliError::Config("problem.experiment = 0 requires a [custom] block".into()))?;
        build_custom(cfg, c)?
    } else {
        let time = time_axis_for(cfg.problem.level, cfg.problem.dt_per_h)?;
        let (spec, f_true, _) = preset_with_time::<f64>(cfg.problem.experiment, cfg.problem.level, time)?;
        (spec, Some(f_true))
    };

    let weights = build_weights(spec.grid, cfg.observation.band_width, cfg.observation.sigma)?;
    let noise = NoiseSpec {
        delta_percent: cfg.noise.delta_percent,
        seed: cfg.noise.seed,
        smooth_halfwidth: cfg.noise.smooth_halfwidth,
    };
    let data_mode = match cfg.problem.data_mode.as_str() {
        "exact" => DataMode::ExactFormula,
        _ => DataMode::Computed,
    };
    let exec = ExecParams {
        linear: LinearSolveParams::new(cfg.solver.tolerance, cfg.solver.max_iterations)?,
        metric: if cfg.solver.norm == "nodal" {
            NormKind::Nodal
        } else {
            NormKind::Trapezoid
        },
        clamp: cfg.optimizer.clamp.map(|[lo, hi]| (lo, hi)),
    };
    let gamma0 = match cfg.regularization.gamma0 {
        Some(g0) => g0,
        None if cfg.noise.delta_percent > 0.0 => {
            initial_gamma(cfg.noise.delta_percent, cfg.regularization.zeta)?
        }
        None => 0.0,
    };
    let sched = RegularizationSchedule::new(gamma0, cfg.regularization.p, cfg.regularization.fixed)?;
    let stop = StoppingCriteria::new(cfg.optimizer.theta1, cfg.optimizer.theta2, cfg.optimizer.max_iter)?;

    Ok(BuiltProblem {
        spec,
        f_exact,
        weights,
        noise,
        data_mode,
        exec,
        sched,
        stop,
    })
}

pub struct SynthesizedData {
    pub clean: Trace64,
    pub noisy: Trace64,
    pub smoothed: Trace64,
}

/// The full measurement pipeline. With δ = 0 the corruption path is the
/// identity: noisy and smoothed traces equal the clean one bitwise.
pub fn synthesize_data(built: &BuiltProblem) -> CliResult<SynthesizedData> {
    let f = built
        .f_exact
        .as_ref()
        .ok_or_else(|| CliError::Config("data synthesis needs an exact source (custom.f_true)".into()))?;
    let clean = make_data_with(&built.spec, f, built.data_mode, built.exec.linear)?;
    let (noisy, smoothed) = if built.noise.delta_percent > 0.0 {
        let noisy = add_noise(&clean, &built.noise)?;
        let smoothed = smooth_data(&noisy, built.noise.smooth_halfwidth);
        (noisy, smoothed)
    } else {
        (clean.clone(), clean.clone())
    };
    Ok(SynthesizedData {
        clean,
        noisy,
        smoothed,
    })
}

/// Data for a reconstruction: an explicit trace file when configured, the
/// inline synthesis pipeline otherwise.
pub fn reconstruction_data(cfg: &RunConfig, built: &BuiltProblem) -> CliResult<BoundaryTrace<f64>> {
    match &cfg.problem.data_file {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::Config(format!("problem.data_file: cannot open {path}: {e}")))?;
            let mut reader = std::io::BufReader::new(file);
            Ok(invsource::csv::read_trace::<f64>(
                &mut reader,
                built.spec.grid,
                built.spec.time,
                path,
            )?)
        }
        None => Ok(synthesize_data(built)?.smoothed),
    }
}

/// Relative error metric in the configured norm.
pub fn theta_metric(built: &BuiltProblem, f: &Field64) -> Option<f64> {
    built.f_exact.as_ref().and_then(|ft| {
        invsource::grid::relative_error_with(f, ft, built.exec.metric).ok()
    })
}

pub fn scalar_suffix(v: f64) -> String {
    // compact float for column names: 1, 3, 0.5
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
