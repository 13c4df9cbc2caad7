//! Crank–Nicolson stepping for the forward, sensitivity and adjoint
//! parabolic problems on 2-D/3-D grids with homogeneous Neumann boundary
//! conditions (second-order ghost-node reflection).
//!
//! Each step solves `A v = rhs` with `A = diag(a) + (Δt/2)(−Δ_h)` and
//! `B = diag(a) − (Δt/2)(−Δ_h)`. The reflected-stencil Laplacian is
//! self-adjoint in the trapezoid-weighted inner product, so the conjugate
//! gradient solver runs with weighted dot products; reductions are serial
//! and therefore bitwise deterministic.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, SpaceTimeField, TimeAxis};
use crate::scalar::Scalar;

/// Inner linear-solver settings (relative residual in the weighted norm).
#[derive(Clone, Copy, Debug)]
pub struct LinearSolveParams<T> {
    pub rel_tolerance: T,
    pub max_iterations: usize,
}

impl<T: Scalar> Default for LinearSolveParams<T> {
    fn default() -> Self {
        Self {
            rel_tolerance: T::default_linear_tolerance(),
            max_iterations: 10_000,
        }
    }
}

impl<T: Scalar> LinearSolveParams<T> {
    pub fn new(rel_tolerance: T, max_iterations: usize) -> Result<Self> {
        if !(rel_tolerance > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "linear-solver tolerance must be positive, got {rel_tolerance}"
            )));
        }
        if max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "linear-solver max_iterations must be at least 1".into(),
            ));
        }
        Ok(Self { rel_tolerance, max_iterations })
    }
}

/// Apply the 5-point (2-D) / 7-point (3-D) Laplacian with ghost-node
/// reflection at all boundaries into `out`.
fn laplacian_into<T: Scalar>(grid: Grid, f: &[T], out: &mut [T]) {
    let two = T::from_f64(2.0);
    let nx = grid.nodes(0);
    let ny = grid.nodes(1);
    let hx: T = grid.spacing(0);
    let hy: T = grid.spacing(1);
    let ihx2 = T::one() / (hx * hx);
    let ihy2 = T::one() / (hy * hy);
    if grid.dim() == 2 {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * j;
                let xm = if i == 0 { idx + 1 } else { idx - 1 };
                let xp = if i == nx - 1 { idx - 1 } else { idx + 1 };
                let ym = if j == 0 { idx + nx } else { idx - nx };
                let yp = if j == ny - 1 { idx - nx } else { idx + nx };
                out[idx] = (f[xm] - two * f[idx] + f[xp]) * ihx2
                    + (f[ym] - two * f[idx] + f[yp]) * ihy2;
            }
        }
    } else {
        let nz = grid.nodes(2);
        let hz: T = grid.spacing(2);
        let ihz2 = T::one() / (hz * hz);
        let plane = nx * ny;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * (j + ny * k);
                    let xm = if i == 0 { idx + 1 } else { idx - 1 };
                    let xp = if i == nx - 1 { idx - 1 } else { idx + 1 };
                    let ym = if j == 0 { idx + nx } else { idx - nx };
                    let yp = if j == ny - 1 { idx - nx } else { idx + nx };
                    let zm = if k == 0 { idx + plane } else { idx - plane };
                    let zp = if k == nz - 1 { idx - plane } else { idx + plane };
                    out[idx] = (f[xm] - two * f[idx] + f[xp]) * ihx2
                        + (f[ym] - two * f[idx] + f[yp]) * ihy2
                        + (f[zm] - two * f[idx] + f[zp]) * ihz2;
                }
            }
        }
    }
}

/// Discrete Neumann Laplacian Δ_h f (ghost-node reflection, second order).
pub fn apply_neumann_laplacian<T: Scalar>(grid: Grid, f: &ScalarField<T>) -> ScalarField<T> {
    assert_eq!(grid, f.grid(), "field is not on the given grid");
    let mut out = ScalarField::zeros(grid);
    laplacian_into(grid, f.values(), out.values_mut());
    out
}

/// The pair of Crank–Nicolson operators for one (grid, a, Δt); reused across
/// every time step and every solve of a reconstruction run.
#[derive(Clone, Debug)]
pub struct CnOperator<T> {
    grid: Grid,
    a: ScalarField<T>,
    dt: T,
    inv_diag: Vec<T>,
    quad: Vec<T>,
    params: LinearSolveParams<T>,
}

/// Assemble the implicit/explicit operator pair; `a` must be positive
/// nodewise and `dt` positive. The Jacobi preconditioner is built once.
pub fn build_cn_operator<T: Scalar>(grid: Grid, a: &ScalarField<T>, dt: T) -> Result<CnOperator<T>> {
    build_cn_operator_with(grid, a, dt, LinearSolveParams::default())
}

pub fn build_cn_operator_with<T: Scalar>(
    grid: Grid,
    a: &ScalarField<T>,
    dt: T,
    params: LinearSolveParams<T>,
) -> Result<CnOperator<T>> {
    if a.grid() != grid {
        return Err(Error::ShapeMismatch("coefficient field is not on the given grid".into()));
    }
    if let Some(&bad) = a.values().iter().find(|&&v| !(v > T::zero())) {
        return Err(Error::InvalidArgument(format!(
            "coefficient a(x) must be positive nodewise, found {bad}"
        )));
    }
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    // diag(A) = a + Δt·Σ_axis 1/h²; the reflected stencil keeps the same
    // center coefficient on boundary nodes.
    let mut stencil_center = T::zero();
    for ax in 0..grid.dim() {
        let h: T = grid.spacing(ax);
        stencil_center += T::one() / (h * h);
    }
    let inv_diag = a
        .values()
        .iter()
        .map(|&ai| T::one() / (ai + dt * stencil_center))
        .collect();
    Ok(CnOperator {
        grid,
        a: a.clone(),
        dt,
        inv_diag,
        quad: grid.quadrature_weights(),
        params,
    })
}

impl<T: Scalar> CnOperator<T> {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn coefficient(&self) -> &ScalarField<T> {
        &self.a
    }

    pub fn params(&self) -> LinearSolveParams<T> {
        self.params
    }

    /// out = A x = a∘x + (Δt/2)·(−Δ_h x)
    pub fn apply_implicit(&self, x: &[T], out: &mut [T]) {
        laplacian_into(self.grid, x, out);
        let half_dt = self.dt.half();
        let a = self.a.values();
        for i in 0..x.len() {
            out[i] = a[i] * x[i] - half_dt * out[i];
        }
    }

    /// out = B x = a∘x − (Δt/2)·(−Δ_h x)
    pub fn apply_explicit(&self, x: &[T], out: &mut [T]) {
        laplacian_into(self.grid, x, out);
        let half_dt = self.dt.half();
        let a = self.a.values();
        for i in 0..x.len() {
            out[i] = a[i] * x[i] + half_dt * out[i];
        }
    }

    fn dot_weighted(&self, x: &[T], y: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..x.len() {
            acc += self.quad[i] * x[i] * y[i];
        }
        acc
    }

    /// Solve A x = b by Jacobi-preconditioned CG in the weighted inner
    /// product, warm-started from `x0`.
    pub fn solve_implicit(&self, b: &[T], x0: &[T], step: usize) -> Result<Vec<T>> {
        let n = b.len();
        let b_norm = self.dot_weighted(b, b).sqrt();
        if b_norm == T::zero() {
            return Ok(vec![T::zero(); n]);
        }
        let tol = self.params.rel_tolerance * b_norm;

        let mut x = x0.to_vec();
        let mut r = vec![T::zero(); n];
        self.apply_implicit(&x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut z: Vec<T> = (0..n).map(|i| r[i] * self.inv_diag[i]).collect();
        let mut p = z.clone();
        let mut rho = self.dot_weighted(&r, &z);
        let mut w = vec![T::zero(); n];
        let mut res = self.dot_weighted(&r, &r).sqrt();
        for _ in 0..self.params.max_iterations {
            if res <= tol {
                return Ok(x);
            }
            self.apply_implicit(&p, &mut w);
            let alpha = rho / self.dot_weighted(&p, &w);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * w[i];
            }
            res = self.dot_weighted(&r, &r).sqrt();
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rho_new = self.dot_weighted(&r, &z);
            let beta = rho_new / rho;
            rho = rho_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if res <= tol {
            return Ok(x);
        }
        Err(Error::LinearSolver {
            step,
            residual: (res / b_norm).to_f64(),
            iterations: self.params.max_iterations,
        })
    }
}

fn check_spacetime<T: Scalar>(op: &CnOperator<T>, time: TimeAxis<T>, g: &SpaceTimeField<T>, what: &str) -> Result<()> {
    if g.grid() != op.grid() {
        return Err(Error::ShapeMismatch(format!("{what} is not on the operator grid")));
    }
    if g.time() != time {
        return Err(Error::ShapeMismatch(format!("{what} does not match the time axis")));
    }
    Ok(())
}

/// March `a·u_t − Δu = F·G` from `u(·,0) = 0` over the full time axis.
/// Each step solves `A·u^{n+1} = B·u^n + (Δt/2)·F∘(G^{n+1}+G^n)`.
pub fn solve_forward<T: Scalar>(
    op: &CnOperator<T>,
    time: TimeAxis<T>,
    f_source: &ScalarField<T>,
    g: &SpaceTimeField<T>,
) -> Result<SpaceTimeField<T>> {
    if f_source.grid() != op.grid() {
        return Err(Error::ShapeMismatch("source factor is not on the operator grid".into()));
    }
    check_spacetime(op, time, g, "modulation field")?;
    let n = op.grid().node_count();
    let half_dt = time.dt().half();
    let mut u = SpaceTimeField::zeros(op.grid(), time);
    let mut rhs = vec![T::zero(); n];
    for step in 0..time.n_steps() {
        op.apply_explicit(u.level(step).values(), &mut rhs);
        let fv = f_source.values();
        let g0 = g.level(step).values();
        let g1 = g.level(step + 1).values();
        for i in 0..n {
            rhs[i] += half_dt * fv[i] * (g1[i] + g0[i]);
        }
        let next = op.solve_implicit(&rhs, u.level(step).values(), step)?;
        u.level_mut(step + 1).values_mut().copy_from_slice(&next);
    }
    Ok(u)
}

/// Linearized problem: identical scheme with source `δF·G`.
pub fn solve_sensitivity<T: Scalar>(
    op: &CnOperator<T>,
    time: TimeAxis<T>,
    delta_f: &ScalarField<T>,
    g: &SpaceTimeField<T>,
) -> Result<SpaceTimeField<T>> {
    solve_forward(op, time, delta_f, g)
}

/// March the adjoint problem backward from `λ(·,T) = 0`:
/// `A·λ^n = B·λ^{n+1} − (Δt/2)·(rhs^{n+1}+rhs^n)`, with `rhs` the weighted
/// data mismatch. The spatial operator pair is the forward one.
pub fn solve_adjoint<T: Scalar>(
    op: &CnOperator<T>,
    time: TimeAxis<T>,
    rhs_field: &SpaceTimeField<T>,
) -> Result<SpaceTimeField<T>> {
    check_spacetime(op, time, rhs_field, "adjoint right-hand side")?;
    let n = op.grid().node_count();
    let half_dt = time.dt().half();
    let mut lam = SpaceTimeField::zeros(op.grid(), time);
    let mut rhs = vec![T::zero(); n];
    for step in (0..time.n_steps()).rev() {
        op.apply_explicit(lam.level(step + 1).values(), &mut rhs);
        let r0 = rhs_field.level(step).values();
        let r1 = rhs_field.level(step + 1).values();
        for i in 0..n {
            rhs[i] -= half_dt * (r1[i] + r0[i]);
        }
        let sol = op.solve_implicit(&rhs, lam.level(step + 1).values(), step)?;
        lam.level_mut(step).values_mut().copy_from_slice(&sol);
    }
    Ok(lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        }
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        for grid in [make_grid(2, &[6, 4]).unwrap(), make_grid(3, &[3, 4, 5]).unwrap()] {
            let f = ScalarField::constant(grid, 7.5f64);
            let lap = apply_neumann_laplacian(grid, &f);
            assert!(lap.values().iter().all(|&v| v.abs() < 1e-11));
        }
    }

    #[test]
    fn laplacian_eigenfunction() {
        // cos(πx)cos(πy) is even across every boundary, so reflection is exact.
        let grid = make_grid(2, &[64, 64]).unwrap();
        let f = ScalarField::from_fn(grid, |x: [f64; 3]| (std::f64::consts::PI * x[0]).cos() * (std::f64::consts::PI * x[1]).cos());
        let lap = apply_neumann_laplacian(grid, &f);
        let lam = -2.0 * std::f64::consts::PI.powi(2);
        let max_err = lap
            .values()
            .iter()
            .zip(f.values())
            .map(|(&l, &v)| (l - lam * v).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-2, "max deviation {max_err}");
    }

    #[test]
    fn laplacian_quadratic_is_exact_in_the_interior() {
        let grid = make_grid(2, &[8, 8]).unwrap();
        let f = ScalarField::from_fn(grid, |x: [f64; 3]| x[0] * x[0]);
        let lap = apply_neumann_laplacian(grid, &f);
        for j in 0..=8 {
            for i in 1..8 {
                let v = lap.values()[grid.index2(i, j)];
                assert!((v - 2.0).abs() < 1e-10, "node ({i},{j}): {v}");
            }
        }
    }

    #[test]
    fn cn_operator_identities() {
        let grid = make_grid(2, &[9, 7]).unwrap();
        let a = ScalarField::from_fn(grid, |x: [f64; 3]| 1.0 + x[0] * x[1]);
        let op = build_cn_operator(grid, &a, 0.05f64).unwrap();
        let n = grid.node_count();

        // A maps constants to a (Neumann row sums vanish)
        let ones = vec![1.0; n];
        let mut out = vec![0.0; n];
        op.apply_implicit(&ones, &mut out);
        for i in 0..n {
            assert!((out[i] - a.values()[i]).abs() < 1e-11);
        }

        // (A + B) v = 2 a∘v for random v
        let mut rng = lcg(3);
        let v: Vec<f64> = (0..n).map(|_| rng()).collect();
        let mut av = vec![0.0; n];
        let mut bv = vec![0.0; n];
        op.apply_implicit(&v, &mut av);
        op.apply_explicit(&v, &mut bv);
        for i in 0..n {
            assert!((av[i] + bv[i] - 2.0 * a.values()[i] * v[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn implicit_operator_tends_to_identity_as_dt_vanishes() {
        let grid = make_grid(2, &[16, 16]).unwrap();
        let a = ScalarField::constant(grid, 1.0f64);
        let f = ScalarField::from_fn(grid, |x: [f64; 3]| (std::f64::consts::PI * x[0]).cos());
        let dev = |dt: f64| {
            let op = build_cn_operator(grid, &a, dt).unwrap();
            let mut out = vec![0.0; grid.node_count()];
            op.apply_implicit(f.values(), &mut out);
            out.iter()
                .zip(f.values())
                .map(|(&o, &v)| (o - v).abs())
                .fold(0.0f64, f64::max)
        };
        let d1 = dev(1e-4);
        let d2 = dev(5e-5);
        assert!(d1 < 1e-2);
        assert!((d1 / d2 - 2.0).abs() < 0.05, "deviation not linear in dt: {d1} vs {d2}");
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let grid = make_grid(2, &[4, 4]).unwrap();
        let a = ScalarField::constant(grid, 1.0f64);
        assert!(build_cn_operator(grid, &a, 0.0).is_err());
        let mut bad = a.clone();
        bad.values_mut()[3] = 0.0;
        assert!(build_cn_operator(grid, &bad, 0.1).is_err());
    }

    #[test]
    fn forward_zero_source_stays_zero() {
        let grid = make_grid(2, &[8, 8]).unwrap();
        let time = TimeAxis::new(1.0f64, 8).unwrap();
        let a = ScalarField::from_fn(grid, |x: [f64; 3]| 1.0 + x[0] * x[1]);
        let op = build_cn_operator(grid, &a, time.dt()).unwrap();
        let g = SpaceTimeField::from_fn(grid, time, |x, t| 1.0 + x[0] + t);
        let u = solve_forward(&op, time, &ScalarField::zeros(grid), &g).unwrap();
        let du = solve_sensitivity(&op, time, &ScalarField::zeros(grid), &g).unwrap();
        for n in 0..time.n_levels() {
            assert!(u.level(n).values().iter().all(|&v| v == 0.0));
            assert!(du.level(n).values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forward_integrates_constant_forcing_exactly() {
        // a ≡ 1, G ≡ 1, F ≡ c: spatially constant solution u(t) = c·t.
        let grid = make_grid(2, &[8, 8]).unwrap();
        let time = TimeAxis::new(1.0f64, 10).unwrap();
        let a = ScalarField::constant(grid, 1.0f64);
        let op = build_cn_operator(grid, &a, time.dt()).unwrap();
        let g = SpaceTimeField::from_fn(grid, time, |_, _| 1.0);
        let c = 0.7;
        let u = solve_forward(&op, time, &ScalarField::constant(grid, c), &g).unwrap();
        for n in 0..time.n_levels() {
            let want = c * time.time_at(n);
            for &v in u.level(n).values() {
                assert!((v - want).abs() < 1e-9, "level {n}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn forward_matches_manufactured_solution() {
        // a = 1+xy with the cancelling source pair: u = t·cos(πx)cos(πy).
        let pi = std::f64::consts::PI;
        let grid = make_grid(2, &[16, 16]).unwrap();
        let time = TimeAxis::new(1.0f64, 16).unwrap();
        let a = ScalarField::from_fn(grid, |x: [f64; 3]| 1.0 + x[0] * x[1]);
        let op = build_cn_operator(grid, &a, time.dt()).unwrap();
        let f = ScalarField::from_fn(grid, |x: [f64; 3]| {
            (-((x[0] - 0.5).powi(2) + (x[1] - 0.3).powi(2)) / 0.1).exp()
        });
        let g = SpaceTimeField::from_fn(grid, time, |x, t| {
            (1.0 + x[0] * x[1] + 2.0 * pi * pi * t)
                * (pi * x[0]).cos()
                * (pi * x[1]).cos()
                * (((x[0] - 0.5).powi(2) + (x[1] - 0.3).powi(2)) / 0.1).exp()
        });
        let u = solve_forward(&op, time, &f, &g).unwrap();
        let corner = u.level(16).values()[grid.index2(0, 0)];
        assert!((corner - 1.0).abs() < 0.01, "u(0,0,1) = {corner}");
    }

    #[test]
    fn sensitivity_is_linear() {
        let grid = make_grid(2, &[16, 16]).unwrap();
        let time = TimeAxis::new(1.0f64, 16).unwrap();
        let a = ScalarField::from_fn(grid, |x: [f64; 3]| 1.0 + x[0] * x[1]);
        let op = build_cn_operator(grid, &a, time.dt()).unwrap();
        let g = SpaceTimeField::from_fn(grid, time, |x, t| 1.0 + x[0] + x[1] * t);
        let d1 = ScalarField::from_fn(grid, |x: [f64; 3]| (std::f64::consts::PI * x[0]).cos());
        let d2 = ScalarField::from_fn(grid, |x: [f64; 3]| x[0] * x[1]);

        let s1 = solve_sensitivity(&op, time, &d1, &g).unwrap();
        let mut d1_scaled = d1.clone();
        d1_scaled.scale(2.0);
        let s1_scaled = solve_sensitivity(&op, time, &d1_scaled, &g).unwrap();
        let mut sum = d1.clone();
        sum.scaled_add(1.0, &d2);
        let s_sum = solve_sensitivity(&op, time, &sum, &g).unwrap();
        let s2 = solve_sensitivity(&op, time, &d2, &g).unwrap();

        for n in 0..time.n_levels() {
            for i in 0..grid.node_count() {
                let a1 = s1.level(n).values()[i];
                let a2 = s2.level(n).values()[i];
                assert!((s1_scaled.level(n).values()[i] - 2.0 * a1).abs() < 1e-8);
                assert!((s_sum.level(n).values()[i] - (a1 + a2)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn adjoint_zero_rhs_is_zero() {
        let grid = make_grid(2, &[8, 8]).unwrap();
        let time = TimeAxis::new(1.0f64, 8).unwrap();
        let a = ScalarField::from_fn(grid, |x: [f64; 3]| 1.0 + x[0] * x[1]);
        let op = build_cn_operator(grid, &a, time.dt()).unwrap();
        let lam = solve_adjoint(&op, time, &SpaceTimeField::zeros(grid, time)).unwrap();
        for n in 0..time.n_levels() {
            assert!(lam.level(n).values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn adjoint_is_a_time_reversed_forward_solve() {
        // With a ≡ 1 and rhs(x,t) = −r(x,T−t), the backward march reproduces
        // the forward solution of source r read at T−t, step for step.
        let grid = make_grid(2, &[8, 8]).unwrap();
        let time = TimeAxis::new(1.0f64, 8).unwrap();
        let a = ScalarField::constant(grid, 1.0f64);
        let op = build_cn_operator(grid, &a, time.dt()).unwrap();
        let pi = std::f64::consts::PI;
        let r = |x: [f64; 3], t: f64| (1.0 + t) * (pi * x[0]).cos() + x[1] * t;

        let rhs = SpaceTimeField::from_fn(grid, time, |x, t| -r(x, 1.0 - t));
        let lam = solve_adjoint(&op, time, &rhs).unwrap();

        let g = SpaceTimeField::from_fn(grid, time, r);
        let u = solve_forward(&op, time, &ScalarField::constant(grid, 1.0), &g).unwrap();

        let nt = time.n_steps();
        for n in 0..=nt {
            for i in 0..grid.node_count() {
                let diff = (lam.level(n).values()[i] - u.level(nt - n).values()[i]).abs();
                assert!(diff < 1e-8, "level {n} node {i}: {diff}");
            }
        }
    }

    #[test]
    fn forward_is_stable_at_large_time_steps() {
        let grid = make_grid(2, &[20, 20]).unwrap();
        let time = TimeAxis::new(1.0f64, 2).unwrap(); // Δt = 0.5 = 10·h
        let a = ScalarField::from_fn(grid, |x: [f64; 3]| 1.0 + x[0] * x[1]);
        let op = build_cn_operator(grid, &a, time.dt()).unwrap();
        let f = ScalarField::constant(grid, 1.0f64);
        let g = SpaceTimeField::from_fn(grid, time, |x, t| {
            (1.0 + x[0] * x[1] + 2.0 * std::f64::consts::PI.powi(2) * t)
                * (std::f64::consts::PI * x[0]).cos()
        });
        let u = solve_forward(&op, time, &f, &g).unwrap();
        let max = u
            .levels()
            .iter()
            .flat_map(|l| l.values())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max.is_finite() && max < 1e3, "max |u| = {max}");
    }
}
