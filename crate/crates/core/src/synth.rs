//! Experiment presets, simulated measurement data, seeded Gaussian noise and
//! moving-average smoothing.
//!
//! Six presets are built in. Presets 1–3 share a 2-D Gaussian source whose
//! modulation factor cancels it, so `F·G = (1+xy+2π²t)cos(πx)cos(πy)` and
//! `u = t·cos(πx)cos(πy)` solves the problem exactly; preset 6 is the 3-D
//! analogue. Presets 4–5 use a discontinuous source on a disc and have no
//! closed-form solution, so their data always comes from the forward solve.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::grid::{make_grid, Grid, ScalarField, SpaceTimeField, TimeAxis};
use crate::objective::BoundaryTrace;
use crate::pde::{build_cn_operator_with, solve_forward, LinearSolveParams};
use crate::scalar::Scalar;

/// Width parameter of the Gaussian sources.
const M1: f64 = 0.1;

/// Closed-form solutions available for data synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactSolution {
    /// u(x,t) = t·Π_axis cos(π x_axis)
    CosProduct,
}

impl ExactSolution {
    pub fn eval<T: Scalar>(&self, dim: usize, x: [T; 3], t: T) -> T {
        match self {
            ExactSolution::CosProduct => {
                let mut v = t;
                for ax in 0..dim {
                    v *= (T::PI() * x[ax]).cos();
                }
                v
            }
        }
    }
}

/// Everything a reconstruction run needs to know about the problem.
#[derive(Clone, Debug)]
pub struct ProblemSpec<T> {
    pub grid: Grid,
    pub time: TimeAxis<T>,
    pub a: ScalarField<T>,
    pub g_mod: SpaceTimeField<T>,
    pub f0: ScalarField<T>,
    pub f_true: Option<ScalarField<T>>,
    pub exact: Option<ExactSolution>,
}

impl<T: Scalar> ProblemSpec<T> {
    pub fn t_final(&self) -> T {
        self.time.t_final()
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.grid() != self.grid
            || self.g_mod.grid() != self.grid
            || self.f0.grid() != self.grid
            || self.f_true.as_ref().map_or(false, |f| f.grid() != self.grid)
        {
            return Err(Error::ShapeMismatch("problem fields do not share the grid".into()));
        }
        if self.g_mod.time() != self.time {
            return Err(Error::ShapeMismatch("modulation field does not match the time axis".into()));
        }
        if self.a.values().iter().any(|&v| !(v > T::zero())) {
            return Err(Error::InvalidArgument("coefficient a(x) must be positive".into()));
        }
        Ok(())
    }
}

/// Noise & smoothing settings for simulated measurements.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Noise level in percent; the additive std deviation is δ/100.
    pub delta_percent: f64,
    pub seed: u64,
    /// Moving-average half width (nodes), applied along space then time.
    pub smooth_halfwidth: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            delta_percent: 1.0,
            seed: 42,
            smooth_halfwidth: 2,
        }
    }
}

/// Where a simulated data trace comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    /// Solve the forward problem with the exact source and observe it.
    Computed,
    /// Sample the preset's closed-form solution on the boundary.
    ExactFormula,
}

fn gauss2<T: Scalar>(x: [T; 3]) -> T {
    let m1 = T::from_f64(M1);
    let dx = x[0] - T::from_f64(0.5);
    let dy = x[1] - T::from_f64(0.3);
    (-(dx * dx + dy * dy) / m1).exp()
}

fn gauss3<T: Scalar>(x: [T; 3]) -> T {
    let m1 = T::from_f64(M1);
    let half = T::from_f64(0.5);
    let d2 = (x[0] - half) * (x[0] - half) + (x[1] - half) * (x[1] - half) + (x[2] - half) * (x[2] - half);
    (-d2 / m1).exp()
}

fn poly_cos2<T: Scalar>(x: [T; 3], t: T) -> T {
    let pi = T::PI();
    (T::one() + x[0] * x[1] + T::from_f64(2.0) * pi * pi * t) * (pi * x[0]).cos() * (pi * x[1]).cos()
}

fn poly_cos3<T: Scalar>(x: [T; 3], t: T) -> T {
    let pi = T::PI();
    (T::one() + x[0] * x[1] * x[2] + T::from_f64(3.0) * pi * pi * t)
        * (pi * x[0]).cos()
        * (pi * x[1]).cos()
        * (pi * x[2]).cos()
}

fn in_disc<T: Scalar>(x: [T; 3]) -> bool {
    let dx = x[0] - T::from_f64(0.25);
    let dy = x[1] - T::from_f64(0.3);
    dx * dx + dy * dy <= T::from_f64(0.25)
}

/// Build experiment preset `id` (1..=6) at refinement level `l`
/// (h = 2^−l; levels 2..=6 in 2-D, 2..=4 in 3-D), with the default time
/// axis Δt = h, T = 1. Returns the problem, the exact source, and the
/// recommended noise settings.
pub fn preset<T: Scalar>(id: u32, l: u32) -> Result<(ProblemSpec<T>, ScalarField<T>, NoiseSpec)> {
    let n = 1usize << l;
    let time = TimeAxis::new(T::one(), n)?;
    preset_with_time(id, l, time)
}

/// Preset with an explicit time axis (for non-default Δt rules).
pub fn preset_with_time<T: Scalar>(
    id: u32,
    l: u32,
    time: TimeAxis<T>,
) -> Result<(ProblemSpec<T>, ScalarField<T>, NoiseSpec)> {
    let dim = if id == 6 { 3 } else { 2 };
    let max_l = if dim == 2 { 6 } else { 4 };
    if !(1..=6).contains(&id) {
        return Err(Error::InvalidArgument(format!("unknown experiment id {id}")));
    }
    if !(2..=max_l).contains(&l) {
        return Err(Error::InvalidArgument(format!(
            "level {l} out of range 2..={max_l} for experiment {id}"
        )));
    }
    let n = 1usize << l;
    let grid = if dim == 2 {
        make_grid(2, &[n, n])?
    } else {
        make_grid(3, &[n, n, n])?
    };

    let (a, f_true, g_mod, f0, exact) = match id {
        1 | 2 | 3 => {
            let a = ScalarField::from_fn(grid, |x: [T; 3]| T::one() + x[0] * x[1]);
            let f = ScalarField::from_fn(grid, gauss2);
            // the Gaussian factors cancel in F·G
            let g = SpaceTimeField::from_fn(grid, time, |x, t| {
                poly_cos2(x, t) / gauss2(x)
            });
            let f0 = if id == 3 {
                ScalarField::from_fn(grid, |x: [T; 3]| gauss2(x) + x[0] * x[0] * x[1] * x[1])
            } else {
                ScalarField::constant(grid, T::one())
            };
            (a, f, g, f0, Some(ExactSolution::CosProduct))
        }
        4 | 5 => {
            let a = ScalarField::from_fn(grid, |x: [T; 3]| T::one() + x[0] * x[1]);
            let f = ScalarField::from_fn(grid, |x: [T; 3]| {
                if in_disc(x) {
                    T::one()
                } else {
                    T::from_f64(0.5)
                }
            });
            let g = SpaceTimeField::from_fn(grid, time, |x, t| {
                let fac = if in_disc(x) { T::one() } else { T::from_f64(2.0) };
                fac * poly_cos2(x, t)
            });
            let f0 = if id == 5 {
                ScalarField::from_fn(grid, |x: [T; 3]| {
                    let base = if in_disc(x) { T::one() } else { T::from_f64(0.5) };
                    base + x[0] * x[0] * x[1] * x[1]
                })
            } else {
                ScalarField::constant(grid, T::from_f64(0.9))
            };
            (a, f, g, f0, None)
        }
        _ => {
            let a = ScalarField::from_fn(grid, |x: [T; 3]| T::one() + x[0] * x[1] * x[2]);
            let f = ScalarField::from_fn(grid, gauss3);
            let g = SpaceTimeField::from_fn(grid, time, |x, t| poly_cos3(x, t) / gauss3(x));
            let f0 = ScalarField::from_fn(grid, |x: [T; 3]| {
                let sq = x[0] * x[0] * x[1] * x[1] * x[2] * x[2];
                gauss3(x) + sq / T::from_f64(10.0)
            });
            (a, f, g, f0, Some(ExactSolution::CosProduct))
        }
    };

    let spec = ProblemSpec {
        grid,
        time,
        a,
        g_mod,
        f0,
        f_true: Some(f_true.clone()),
        exact,
    };
    Ok((spec, f_true, NoiseSpec::default()))
}

/// Produce the clean measurement trace for a problem, either by solving the
/// forward problem with source `f` or by sampling the closed-form solution.
pub fn make_data<T: Scalar>(
    spec: &ProblemSpec<T>,
    f: &ScalarField<T>,
    mode: DataMode,
) -> Result<BoundaryTrace<T>> {
    make_data_with(spec, f, mode, LinearSolveParams::default())
}

pub fn make_data_with<T: Scalar>(
    spec: &ProblemSpec<T>,
    f: &ScalarField<T>,
    mode: DataMode,
    params: LinearSolveParams<T>,
) -> Result<BoundaryTrace<T>> {
    match mode {
        DataMode::Computed => {
            let op = build_cn_operator_with(spec.grid, &spec.a, spec.time.dt(), params)?;
            let u = solve_forward(&op, spec.time, f, &spec.g_mod)?;
            Ok(crate::objective::observe(&u))
        }
        DataMode::ExactFormula => {
            let exact = spec.exact.ok_or_else(|| {
                Error::InvalidArgument(
                    "this problem has no closed-form solution; use the computed data mode".into(),
                )
            })?;
            let dim = spec.grid.dim();
            Ok(BoundaryTrace::from_fn(spec.grid, spec.time, |x, t| {
                exact.eval(dim, x, t)
            }))
        }
    }
}

/// Deterministic standard-normal stream: ChaCha8 keyed by the seed, one
/// normal per Box–Muller pair (the second value is discarded), uniforms
/// taken as 53-bit mantissas.
pub struct GaussianSampler {
    rng: ChaCha8Rng,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_standard(&mut self) -> f64 {
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.rng.next_u64() >> 11) as f64 + 1.0) * scale; // (0, 1]
        let u2 = (self.rng.next_u64() >> 11) as f64 * scale; // [0, 1)
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Add i.i.d. Gaussian noise with std δ/100 to a trace. Sample order is
/// fixed: trace nodes in storage order within a level, levels in time order.
pub fn add_noise<T: Scalar>(trace: &BoundaryTrace<T>, spec: &NoiseSpec) -> Result<BoundaryTrace<T>> {
    if !(0.0..100.0).contains(&spec.delta_percent) {
        return Err(Error::InvalidArgument(format!(
            "delta_percent must be in [0, 100), got {}",
            spec.delta_percent
        )));
    }
    let mut out = trace.clone();
    if spec.delta_percent == 0.0 {
        return Ok(out);
    }
    let sigma = spec.delta_percent / 100.0;
    let mut sampler = GaussianSampler::new(spec.seed);
    for v in out.values_mut() {
        *v += T::from_f64(sigma * sampler.next_standard());
    }
    Ok(out)
}

/// Truncated moving average with renormalized edge windows.
pub fn moving_average_1d<T: Scalar>(xs: &[T], halfwidth: usize) -> Vec<T> {
    if halfwidth == 0 {
        return xs.to_vec();
    }
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    for p in 0..n {
        let lo = p.saturating_sub(halfwidth);
        let hi = (p + halfwidth).min(n - 1);
        let mut acc = T::zero();
        for q in lo..=hi {
            acc += xs[q];
        }
        out.push(acc / T::from_usize(hi - lo + 1));
    }
    out
}

fn smooth_lane<T: Scalar>(values: &mut [T], offset: usize, stride: usize, len: usize, hw: usize) {
    let lane: Vec<T> = (0..len).map(|k| values[offset + k * stride]).collect();
    let smoothed = moving_average_1d(&lane, hw);
    for (k, v) in smoothed.into_iter().enumerate() {
        values[offset + k * stride] = v;
    }
}

/// Moving-average smoothing along each space axis of the trace, then along
/// time. A half width of 0 is the identity.
pub fn smooth_data<T: Scalar>(trace: &BoundaryTrace<T>, halfwidth: usize) -> BoundaryTrace<T> {
    let mut out = trace.clone();
    if halfwidth == 0 {
        return out;
    }
    let grid = trace.grid();
    let time = trace.time();
    let n_levels = time.n_levels();
    let ntr = grid.top_layer_len();
    let nxn = grid.nodes(0);
    {
        let v = out.values_mut();
        if grid.dim() == 2 {
            for n in 0..n_levels {
                smooth_lane(v, n * ntr, 1, nxn, halfwidth);
            }
        } else {
            let nyn = grid.nodes(1);
            for n in 0..n_levels {
                for j in 0..nyn {
                    smooth_lane(v, n * ntr + j * nxn, 1, nxn, halfwidth);
                }
                for i in 0..nxn {
                    smooth_lane(v, n * ntr + i, nxn, nyn, halfwidth);
                }
            }
        }
        for k in 0..ntr {
            smooth_lane(v, k, ntr, n_levels, halfwidth);
        }
    }
    out
}
