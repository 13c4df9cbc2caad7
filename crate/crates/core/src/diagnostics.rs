//! Discrete forms of the a-priori energy estimates and the adjoint duality
//! identity. Used by the verification command and the acceptance suite.

use crate::error::Result;
use crate::grid::{h1_seminorm_sq, ScalarField, SpaceTimeField};
use crate::objective::{
    assemble_mismatch, observe, trace_residual, BoundaryTrace, ObservationWeights,
};
use crate::pde::{solve_adjoint, solve_forward, solve_sensitivity, CnOperator};
use crate::scalar::Scalar;
use crate::synth::ProblemSpec;

/// Two sides of an inequality; holds iff `lhs <= rhs`.
#[derive(Clone, Copy, Debug)]
pub struct EnergySides<T> {
    pub lhs: T,
    pub rhs: T,
}

impl<T: Scalar> EnergySides<T> {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// C₁(a,T) = 1 + (T/a_min)·e^{T/a_min}.
pub fn stability_constant<T: Scalar>(t_final: T, a_min: T) -> T {
    let r = t_final / a_min;
    T::one() + r * r.exp()
}

/// Squared L²(0,T; L²(Ω)) norm of a space-time field (trapezoid in both).
pub fn spacetime_l2_norm_sq<T: Scalar>(f: &SpaceTimeField<T>) -> T {
    let time = f.time();
    let dt = time.dt();
    let mut acc = T::zero();
    for n in 0..time.n_levels() {
        let lv = f.level(n);
        acc += time.trapezoid_coeff(n) * dt * lv.inner(lv);
    }
    acc
}

/// Squared L²(0,T; L∞(Ω)) norm: time trapezoid of the squared nodal max.
pub fn spacetime_sup_norm_sq<T: Scalar>(f: &SpaceTimeField<T>) -> T {
    let time = f.time();
    let dt = time.dt();
    let mut acc = T::zero();
    for n in 0..time.n_levels() {
        let max = f
            .level(n)
            .values()
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs()));
        acc += time.trapezoid_coeff(n) * dt * max * max;
    }
    acc
}

fn weighted_sq<T: Scalar>(a: &ScalarField<T>, u: &ScalarField<T>) -> T {
    // ‖√a·u‖²
    let grid = u.grid();
    let mut acc = T::zero();
    for idx in 0..u.len() {
        acc += grid.quadrature_weight::<T>(idx) * a.values()[idx] * u.values()[idx] * u.values()[idx];
    }
    acc
}

fn grad_history_term<T: Scalar>(u: &SpaceTimeField<T>) -> T {
    let time = u.time();
    let dt = time.dt();
    let mut acc = T::zero();
    for n in 0..time.n_levels() {
        acc += time.trapezoid_coeff(n) * dt * h1_seminorm_sq(u.level(n));
    }
    acc
}

/// Discrete energy estimate for the forward solution `u` of source `f`:
/// ‖√a·u(T)‖² + 2·Σ_n Δt‖∇u^n‖² ≤ C₁·‖f‖²·‖G‖²_{L²(0,T;L∞)}.
pub fn forward_energy<T: Scalar>(
    spec: &ProblemSpec<T>,
    f: &ScalarField<T>,
    u: &SpaceTimeField<T>,
    a_min: T,
) -> EnergySides<T> {
    let two = T::from_f64(2.0);
    let lhs = weighted_sq(&spec.a, u.level(spec.time.n_steps())) + two * grad_history_term(u);
    let c1 = stability_constant(spec.t_final(), a_min);
    let rhs = c1 * f.inner(f) * spacetime_sup_norm_sq(&spec.g_mod);
    EnergySides { lhs, rhs }
}

/// Discrete energy estimate for the adjoint solution `lambda` of the
/// weighted mismatch `r`: ‖√a·λ(0)‖² + 2·Σ_n Δt‖∇λ^n‖² ≤ C₁·‖r‖².
pub fn adjoint_energy<T: Scalar>(
    spec: &ProblemSpec<T>,
    lambda: &SpaceTimeField<T>,
    mismatch: &SpaceTimeField<T>,
    a_min: T,
) -> EnergySides<T> {
    let two = T::from_f64(2.0);
    let lhs = weighted_sq(&spec.a, lambda.level(0)) + two * grad_history_term(lambda);
    let c1 = stability_constant(spec.t_final(), a_min);
    let rhs = c1 * spacetime_l2_norm_sq(mismatch);
    EnergySides { lhs, rhs }
}

/// Both sides of the adjoint identity at iterate `f_at` in direction `d`:
/// lhs pairs the observed mismatch with the sensitivity solution, rhs pairs
/// the modulated direction with the adjoint solution. They agree up to the
/// discretization error of the adjoint scheme.
#[derive(Clone, Copy, Debug)]
pub struct DualityGap<T> {
    pub lhs: T,
    pub rhs: T,
}

impl<T: Scalar> DualityGap<T> {
    pub fn relative_residual(&self) -> T {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(self.rhs.abs())
    }
}

pub fn duality_gap<T: Scalar>(
    op: &CnOperator<T>,
    spec: &ProblemSpec<T>,
    w: &ObservationWeights<T>,
    data: &BoundaryTrace<T>,
    f_at: &ScalarField<T>,
    d: &ScalarField<T>,
) -> Result<DualityGap<T>> {
    let time = spec.time;
    let u = solve_forward(op, time, f_at, &spec.g_mod)?;
    let r = assemble_mismatch(&u, data, w)?;
    let lambda = solve_adjoint(op, time, &r)?;
    let du = solve_sensitivity(op, time, d, &spec.g_mod)?;

    let res = trace_residual(&u, data)?;
    let lhs = w.trace_inner(&res, &observe(&du));

    let dt = time.dt();
    let grid = spec.grid;
    let mut rhs = T::zero();
    for n in 0..time.n_levels() {
        let c = time.trapezoid_coeff(n) * dt;
        let gv = spec.g_mod.level(n).values();
        let lv = lambda.level(n).values();
        let dv = d.values();
        let mut level = T::zero();
        for i in 0..grid.node_count() {
            level += grid.quadrature_weight::<T>(i) * dv[i] * gv[i] * lv[i];
        }
        rhs -= c * level;
    }
    Ok(DualityGap { lhs, rhs })
}
