//! Observation operator on the top boundary, the regularized misfit
//! functional, weighted-mismatch assembly for the adjoint solve, and the
//! adjoint-based gradient.
//!
//! Observation functionals always sample the solution at the top-boundary
//! node of the column (`u_{i,Ny}` in 2-D), scaled by the weight field; the
//! weight is 1 on the boundary layer and decays inside a band of
//! `band_width` node layers.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, SpaceTimeField, TimeAxis};
use crate::scalar::Scalar;

/// Measured (or simulated) values on the top boundary at every time level,
/// stored level-major in node storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace<T> {
    grid: Grid,
    time: TimeAxis<T>,
    values: Vec<T>,
}

impl<T: Scalar> BoundaryTrace<T> {
    pub fn zeros(grid: Grid, time: TimeAxis<T>) -> Self {
        Self {
            grid,
            time,
            values: vec![T::zero(); grid.top_layer_len() * time.n_levels()],
        }
    }

    /// Sample `f(x, t)` at the top-boundary nodes of every level.
    pub fn from_fn(grid: Grid, time: TimeAxis<T>, f: impl Fn([T; 3], T) -> T) -> Self {
        let mut tr = Self::zeros(grid, time);
        for n in 0..time.n_levels() {
            let t = time.time_at(n);
            for k in 0..grid.top_layer_len() {
                let x = grid.node_coords(grid.top_layer_node(k));
                *tr.get_mut(n, k) = f(x, t);
            }
        }
        tr
    }

    pub fn from_values(grid: Grid, time: TimeAxis<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.top_layer_len() * time.n_levels() {
            return Err(Error::ShapeMismatch(format!(
                "trace has {} values, expected {}",
                values.len(),
                grid.top_layer_len() * time.n_levels()
            )));
        }
        Ok(Self { grid, time, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn time(&self) -> TimeAxis<T> {
        self.time
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.top_layer_len()
    }

    pub fn get(&self, level: usize, node: usize) -> T {
        self.values[level * self.n_nodes() + node]
    }

    pub fn get_mut(&mut self, level: usize, node: usize) -> &mut T {
        let n = self.n_nodes();
        &mut self.values[level * n + node]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn level_values(&self, level: usize) -> &[T] {
        let n = self.n_nodes();
        &self.values[level * n..(level + 1) * n]
    }
}

/// Restrict a space-time field to the top boundary at every time level.
pub fn observe<T: Scalar>(u: &SpaceTimeField<T>) -> BoundaryTrace<T> {
    let grid = u.grid();
    let mut tr = BoundaryTrace::zeros(grid, u.time());
    for n in 0..u.time().n_levels() {
        let lv = u.level(n).values();
        for k in 0..grid.top_layer_len() {
            *tr.get_mut(n, k) = lv[grid.top_layer_node(k)];
        }
    }
    tr
}

/// Discrete observation mask-times-smoothing weight field: 1 on the top
/// boundary, `exp(−dist²/σ²)` inside a band of `band_width` node layers,
/// zero elsewhere.
#[derive(Clone, Debug)]
pub struct ObservationWeights<T> {
    grid: Grid,
    band_width: usize,
    sigma: T,
    weight_field: ScalarField<T>,
    // nonzero-weight nodes: (flat node index, trace column index, weight)
    active: Vec<(usize, usize, T)>,
    // per trace node, the column-summed quadrature·weight factor
    trace_quad: Vec<T>,
}

pub fn build_weights<T: Scalar>(grid: Grid, band_width: usize, sigma: T) -> Result<ObservationWeights<T>> {
    let min_nodes = (0..grid.dim()).map(|ax| grid.nodes(ax)).min().unwrap();
    if band_width == 0 || band_width > min_nodes {
        return Err(Error::InvalidArgument(format!(
            "band_width must be in 1..={min_nodes}, got {band_width}"
        )));
    }
    if !(sigma > T::zero()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let vertical = grid.dim() - 1;
    let n_vert = grid.cells(vertical);
    let h_vert: T = grid.spacing(vertical);
    let mut weight_field = ScalarField::zeros(grid);
    let mut active = Vec::new();
    let mut trace_quad = vec![T::zero(); grid.top_layer_len()];
    for idx in 0..grid.node_count() {
        let ijk = grid.unravel(idx);
        let layers_below = n_vert - ijk[vertical];
        if layers_below >= band_width {
            continue;
        }
        let dist = T::from_usize(layers_below) * h_vert;
        let w = (-(dist * dist) / (sigma * sigma)).exp();
        weight_field.values_mut()[idx] = w;
        let trace_idx = if grid.dim() == 2 {
            ijk[0]
        } else {
            ijk[0] + grid.nodes(0) * ijk[1]
        };
        active.push((idx, trace_idx, w));
        trace_quad[trace_idx] += grid.quadrature_weight::<T>(idx) * w;
    }
    Ok(ObservationWeights {
        grid,
        band_width,
        sigma,
        weight_field,
        active,
        trace_quad,
    })
}

impl<T: Scalar> ObservationWeights<T> {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn band_width(&self) -> usize {
        self.band_width
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn weight_field(&self) -> &ScalarField<T> {
        &self.weight_field
    }

    /// Time-trapezoid, observation-weighted inner product of two traces:
    /// Σ_n c_n Δt Σ_k W_k p_k^n q_k^n with W_k the column-summed
    /// quadrature·weight factor.
    pub fn trace_inner(&self, p: &BoundaryTrace<T>, q: &BoundaryTrace<T>) -> T {
        debug_assert_eq!(p.grid(), self.grid);
        debug_assert_eq!(q.grid(), self.grid);
        let time = p.time();
        let dt = time.dt();
        let mut acc = T::zero();
        for n in 0..time.n_levels() {
            let c = time.trapezoid_coeff(n);
            let pv = p.level_values(n);
            let qv = q.level_values(n);
            let mut level = T::zero();
            for k in 0..self.trace_quad.len() {
                level += self.trace_quad[k] * pv[k] * qv[k];
            }
            acc += c * dt * level;
        }
        acc
    }

    /// Weighted squared L²(0,T; L²(Ω)) norm of the assembled mismatch field.
    pub fn mismatch_norm_sq(&self, r: &SpaceTimeField<T>) -> T {
        let time = r.time();
        let dt = time.dt();
        let mut acc = T::zero();
        for n in 0..time.n_levels() {
            let f = r.level(n);
            let mut level = T::zero();
            for idx in 0..f.len() {
                let v = f.values()[idx];
                level += self.grid.quadrature_weight::<T>(idx) * v * v;
            }
            acc += time.trapezoid_coeff(n) * dt * level;
        }
        acc
    }
}

/// u restricted to the top boundary minus data, per level.
pub fn trace_residual<T: Scalar>(u: &SpaceTimeField<T>, data: &BoundaryTrace<T>) -> Result<BoundaryTrace<T>> {
    if data.grid() != u.grid() || data.time() != u.time() {
        return Err(Error::ShapeMismatch("data trace does not match the solution field".into()));
    }
    let mut res = observe(u);
    for (r, &d) in res.values_mut().iter_mut().zip(data.values()) {
        *r -= d;
    }
    Ok(res)
}

/// Assemble the adjoint right-hand side: at every node of the weight band,
/// the top-of-column mismatch times the node weight; zero elsewhere.
pub fn assemble_mismatch<T: Scalar>(
    u: &SpaceTimeField<T>,
    data: &BoundaryTrace<T>,
    w: &ObservationWeights<T>,
) -> Result<SpaceTimeField<T>> {
    if w.grid() != u.grid() {
        return Err(Error::ShapeMismatch("weights are not on the solution grid".into()));
    }
    let res = trace_residual(u, data)?;
    let time = u.time();
    let mut out = SpaceTimeField::zeros(u.grid(), time);
    for n in 0..time.n_levels() {
        let rv = res.level_values(n).to_vec();
        let ov = out.level_mut(n).values_mut();
        for &(node, trace_idx, weight) in &w.active {
            ov[node] = rv[trace_idx] * weight;
        }
    }
    Ok(out)
}

/// Regularized misfit J_γ = ½⟨u−ũ, u−ũ⟩_obs + (γ/2)‖F−F₀‖².
pub fn tikhonov<T: Scalar>(
    u: &SpaceTimeField<T>,
    data: &BoundaryTrace<T>,
    f: &ScalarField<T>,
    f0: &ScalarField<T>,
    gamma: T,
    w: &ObservationWeights<T>,
) -> Result<T> {
    if gamma < T::zero() {
        return Err(Error::InvalidArgument(format!("gamma must be nonnegative, got {gamma}")));
    }
    if f.grid() != u.grid() || f0.grid() != u.grid() {
        return Err(Error::ShapeMismatch("source iterate/reference not on the solution grid".into()));
    }
    let res = trace_residual(u, data)?;
    let half = T::from_f64(0.5);
    let misfit = half * w.trace_inner(&res, &res);
    let df = f.sub(f0);
    Ok(misfit + half * gamma * df.inner(&df))
}

/// Adjoint-based gradient g = −trap_t(G·λ) + γ(F−F₀).
pub fn gradient<T: Scalar>(
    lambda: &SpaceTimeField<T>,
    g_mod: &SpaceTimeField<T>,
    f: &ScalarField<T>,
    f0: &ScalarField<T>,
    gamma: T,
) -> Result<ScalarField<T>> {
    if lambda.grid() != g_mod.grid() || lambda.time() != g_mod.time() {
        return Err(Error::ShapeMismatch("adjoint and modulation fields do not match".into()));
    }
    if f.grid() != lambda.grid() || f0.grid() != lambda.grid() {
        return Err(Error::ShapeMismatch("source iterate/reference not on the adjoint grid".into()));
    }
    let time = lambda.time();
    let dt = time.dt();
    let n_nodes = lambda.grid().node_count();
    let mut out = ScalarField::zeros(lambda.grid());
    {
        let ov = out.values_mut();
        for n in 0..time.n_levels() {
            let c = time.trapezoid_coeff(n) * dt;
            let lv = lambda.level(n).values();
            let gv = g_mod.level(n).values();
            for i in 0..n_nodes {
                ov[i] -= c * gv[i] * lv[i];
            }
        }
        let fv = f.values();
        let f0v = f0.values();
        for i in 0..n_nodes {
            ov[i] += gamma * (fv[i] - f0v[i]);
        }
    }
    Ok(out)
}
