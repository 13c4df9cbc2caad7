//! Uniform tensor-product node grids on the unit square/cube, nodal fields,
//! and the discrete L² machinery shared by every module.
//!
//! Nodes are stored row-major with x fastest: `idx = i + (Nx+1)*(j + (Ny+1)*k)`.
//! The default discrete L²(Ω) norm uses composite trapezoidal weights
//! (boundary nodes weighted ½ per touching axis), which is second-order
//! accurate and consistent with the time stepping.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform grid over [0,1]^d, d in {2,3}. Stores cells per axis; node count
/// per axis is `cells + 1`. Spacing is `1/cells` on every axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    // n[2] == 0 encodes a 2-D grid.
    n: [usize; 3],
}

/// Build a grid; `dim` must be 2 or 3 and every axis needs at least 2 cells.
pub fn make_grid(dim: usize, n_per_axis: &[usize]) -> Result<Grid> {
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidGrid(format!("dim must be 2 or 3, got {dim}")));
    }
    if n_per_axis.len() != dim {
        return Err(Error::InvalidGrid(format!(
            "expected {dim} axis sizes, got {}",
            n_per_axis.len()
        )));
    }
    if let Some(&bad) = n_per_axis.iter().find(|&&n| n < 2) {
        return Err(Error::InvalidGrid(format!(
            "each axis needs at least 2 cells, got {bad}"
        )));
    }
    let mut n = [0usize; 3];
    n[..dim].copy_from_slice(n_per_axis);
    Ok(Grid { n })
}

impl Grid {
    pub fn dim(&self) -> usize {
        if self.n[2] == 0 {
            2
        } else {
            3
        }
    }

    /// Cells along `axis` (0 = x, 1 = y, 2 = z).
    pub fn cells(&self, axis: usize) -> usize {
        self.n[axis]
    }

    /// Nodes along `axis` (= cells + 1).
    pub fn nodes(&self, axis: usize) -> usize {
        self.n[axis] + 1
    }

    pub fn spacing<T: Scalar>(&self, axis: usize) -> T {
        T::one() / T::from_usize(self.n[axis])
    }

    pub fn node_count(&self) -> usize {
        let mut c = self.nodes(0) * self.nodes(1);
        if self.dim() == 3 {
            c *= self.nodes(2);
        }
        c
    }

    pub fn index2(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.dim() == 2 && i <= self.n[0] && j <= self.n[1]);
        i + self.nodes(0) * j
    }

    pub fn index3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(self.dim() == 3 && i <= self.n[0] && j <= self.n[1] && k <= self.n[2]);
        i + self.nodes(0) * (j + self.nodes(1) * k)
    }

    /// Per-axis node indices of a flat index; unused axes are 0.
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.nodes(0);
        let rest = idx / self.nodes(0);
        if self.dim() == 2 {
            [i, rest, 0]
        } else {
            [i, rest % self.nodes(1), rest / self.nodes(1)]
        }
    }

    /// Coordinates of a node; the z entry is 0 on 2-D grids.
    pub fn node_coords<T: Scalar>(&self, idx: usize) -> [T; 3] {
        let ijk = self.unravel(idx);
        let mut x = [T::zero(); 3];
        for ax in 0..self.dim() {
            // i/N rather than i·(1/N): correctly rounded node coordinates
            x[ax] = T::from_usize(ijk[ax]) / T::from_usize(self.n[ax]);
        }
        x
    }

    /// Trapezoidal quadrature weight of a node (product over axes).
    pub fn quadrature_weight<T: Scalar>(&self, idx: usize) -> T {
        let ijk = self.unravel(idx);
        let mut w = T::one();
        for ax in 0..self.dim() {
            let f = if ijk[ax] == 0 || ijk[ax] == self.n[ax] {
                T::from_f64(0.5)
            } else {
                T::one()
            };
            w *= f * self.spacing(ax);
        }
        w
    }

    pub fn quadrature_weights<T: Scalar>(&self) -> Vec<T> {
        (0..self.node_count()).map(|i| self.quadrature_weight(i)).collect()
    }

    /// Number of nodes on the top boundary (y = 1 in 2-D, z = 1 in 3-D).
    pub fn top_layer_len(&self) -> usize {
        if self.dim() == 2 {
            self.nodes(0)
        } else {
            self.nodes(0) * self.nodes(1)
        }
    }

    /// Flat node index of top-boundary node number `k` (storage order).
    pub fn top_layer_node(&self, k: usize) -> usize {
        if self.dim() == 2 {
            self.index2(k, self.n[1])
        } else {
            let i = k % self.nodes(0);
            let j = k / self.nodes(0);
            self.index3(i, j, self.n[2])
        }
    }
}

/// Time axis 0 = t_0 < ... < t_{N_t} = T with uniform step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeAxis<T> {
    t_final: T,
    n_steps: usize,
}

impl<T: Scalar> TimeAxis<T> {
    pub fn new(t_final: T, n_steps: usize) -> Result<Self> {
        if !(t_final > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("need at least one time step".into()));
        }
        Ok(Self { t_final, n_steps })
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> T {
        self.t_final / T::from_usize(self.n_steps)
    }

    pub fn time_at(&self, level: usize) -> T {
        T::from_usize(level) * self.dt()
    }

    /// Composite-trapezoid coefficient of a level (½ at both ends).
    pub fn trapezoid_coeff(&self, level: usize) -> T {
        if level == 0 || level == self.n_steps {
            T::from_f64(0.5)
        } else {
            T::one()
        }
    }
}

/// Nodal values of a function on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    grid: Grid,
    values: Vec<T>,
}

impl<T: Scalar> ScalarField<T> {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.node_count()],
        }
    }

    pub fn constant(grid: Grid, v: T) -> Self {
        Self {
            grid,
            values: vec![v; grid.node_count()],
        }
    }

    /// Sample `f` at every node (arguments are the node coordinates).
    pub fn from_fn(grid: Grid, f: impl Fn([T; 3]) -> T) -> Self {
        let values = (0..grid.node_count()).map(|i| f(grid.node_coords(i))).collect();
        Self { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values for a grid with {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// self += c * other
    pub fn scaled_add(&mut self, c: T, other: &Self) {
        assert_eq!(self.grid, other.grid, "field grids differ");
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: T) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.grid, other.grid, "field grids differ");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        Self { grid: self.grid, values }
    }

    /// Trapezoid-weighted L²(Ω) inner product (the inner product every part
    /// of the reconstruction algorithm uses).
    pub fn inner(&self, other: &Self) -> T {
        assert_eq!(self.grid, other.grid, "field grids differ");
        let mut acc = T::zero();
        for idx in 0..self.values.len() {
            acc += self.grid.quadrature_weight::<T>(idx) * self.values[idx] * other.values[idx];
        }
        acc
    }
}

/// Which quadrature realizes the discrete L²(Ω) norm for error metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormKind {
    /// Composite trapezoid: boundary nodes weighted ½ per touching axis.
    #[default]
    Trapezoid,
    /// Uniform cell measure h^d on every node.
    Nodal,
}

fn norm_weight<T: Scalar>(grid: &Grid, idx: usize, kind: NormKind) -> T {
    match kind {
        NormKind::Trapezoid => grid.quadrature_weight(idx),
        NormKind::Nodal => {
            let mut w = T::one();
            for ax in 0..grid.dim() {
                w *= grid.spacing(ax);
            }
            w
        }
    }
}

pub fn discrete_l2_norm_with<T: Scalar>(f: &ScalarField<T>, kind: NormKind) -> T {
    let grid = f.grid();
    let mut acc = T::zero();
    for (idx, &v) in f.values().iter().enumerate() {
        acc += norm_weight::<T>(&grid, idx, kind) * v * v;
    }
    acc.sqrt()
}

/// Discrete L²(Ω) norm with trapezoidal weights.
pub fn discrete_l2_norm<T: Scalar>(f: &ScalarField<T>) -> T {
    discrete_l2_norm_with(f, NormKind::Trapezoid)
}

/// Θ = ‖f_exact − f_rec‖ / ‖f_exact‖, the metric of every error table.
pub fn relative_error<T: Scalar>(f_rec: &ScalarField<T>, f_exact: &ScalarField<T>) -> Result<T> {
    relative_error_with(f_rec, f_exact, NormKind::Trapezoid)
}

pub fn relative_error_with<T: Scalar>(
    f_rec: &ScalarField<T>,
    f_exact: &ScalarField<T>,
    kind: NormKind,
) -> Result<T> {
    if f_rec.grid() != f_exact.grid() {
        return Err(Error::ShapeMismatch("relative_error: fields on different grids".into()));
    }
    let denom = discrete_l2_norm_with(f_exact, kind);
    if denom == T::zero() {
        return Err(Error::ZeroNorm("relative_error: exact field has zero norm"));
    }
    Ok(discrete_l2_norm_with(&f_exact.sub(f_rec), kind) / denom)
}

/// e = ‖f_new − f_old‖ / ‖f_new‖ (iterate-change metric).
pub fn change_norm<T: Scalar>(f_new: &ScalarField<T>, f_old: &ScalarField<T>) -> Result<T> {
    change_norm_with(f_new, f_old, NormKind::Trapezoid)
}

pub fn change_norm_with<T: Scalar>(
    f_new: &ScalarField<T>,
    f_old: &ScalarField<T>,
    kind: NormKind,
) -> Result<T> {
    if f_new.grid() != f_old.grid() {
        return Err(Error::ShapeMismatch("change_norm: fields on different grids".into()));
    }
    let denom = discrete_l2_norm_with(f_new, kind);
    if denom == T::zero() {
        return Err(Error::ZeroNorm("change_norm: new field has zero norm"));
    }
    Ok(discrete_l2_norm_with(&f_new.sub(f_old), kind) / denom)
}

/// Discrete H¹ seminorm squared: sum over axis links of (Δf/h)² times the
/// link measure (trapezoid weights transverse to the link axis). Matches the
/// quadratic form of the discrete Neumann Laplacian.
pub fn h1_seminorm_sq<T: Scalar>(f: &ScalarField<T>) -> T {
    let grid = f.grid();
    let v = f.values();
    let mut acc = T::zero();
    let nx = grid.nodes(0);
    let hx: T = grid.spacing(0);
    let hy: T = grid.spacing(1);
    if grid.dim() == 2 {
        let ny = grid.nodes(1);
        let wy = |j: usize| -> T {
            if j == 0 || j == ny - 1 {
                T::from_f64(0.5)
            } else {
                T::one()
            }
        };
        let wx = |i: usize| -> T {
            if i == 0 || i == nx - 1 {
                T::from_f64(0.5)
            } else {
                T::one()
            }
        };
        for j in 0..ny {
            for i in 0..nx - 1 {
                let d = (v[grid.index2(i + 1, j)] - v[grid.index2(i, j)]) / hx;
                acc += d * d * hx * wy(j) * hy;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let d = (v[grid.index2(i, j + 1)] - v[grid.index2(i, j)]) / hy;
                acc += d * d * hy * wx(i) * hx;
            }
        }
    } else {
        let ny = grid.nodes(1);
        let nz = grid.nodes(2);
        let hz: T = grid.spacing(2);
        let w = |i: usize, n: usize| -> T {
            if i == 0 || i == n - 1 {
                T::from_f64(0.5)
            } else {
                T::one()
            }
        };
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx - 1 {
                    let d = (v[grid.index3(i + 1, j, k)] - v[grid.index3(i, j, k)]) / hx;
                    acc += d * d * hx * w(j, ny) * hy * w(k, nz) * hz;
                }
            }
        }
        for k in 0..nz {
            for j in 0..ny - 1 {
                for i in 0..nx {
                    let d = (v[grid.index3(i, j + 1, k)] - v[grid.index3(i, j, k)]) / hy;
                    acc += d * d * hy * w(i, nx) * hx * w(k, nz) * hz;
                }
            }
        }
        for k in 0..nz - 1 {
            for j in 0..ny {
                for i in 0..nx {
                    let d = (v[grid.index3(i, j, k + 1)] - v[grid.index3(i, j, k)]) / hz;
                    acc += d * d * hz * w(i, nx) * hx * w(j, ny) * hy;
                }
            }
        }
    }
    acc
}

/// One nodal field per time level; level 0 of a forward solution is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField<T> {
    grid: Grid,
    time: TimeAxis<T>,
    levels: Vec<ScalarField<T>>,
}

impl<T: Scalar> SpaceTimeField<T> {
    pub fn zeros(grid: Grid, time: TimeAxis<T>) -> Self {
        let levels = (0..time.n_levels()).map(|_| ScalarField::zeros(grid)).collect();
        Self { grid, time, levels }
    }

    /// Sample `f(x, t)` at every node of every level.
    pub fn from_fn(grid: Grid, time: TimeAxis<T>, f: impl Fn([T; 3], T) -> T) -> Self {
        let levels = (0..time.n_levels())
            .map(|n| {
                let t = time.time_at(n);
                ScalarField::from_fn(grid, |x| f(x, t))
            })
            .collect();
        Self { grid, time, levels }
    }

    pub fn from_levels(grid: Grid, time: TimeAxis<T>, levels: Vec<ScalarField<T>>) -> Result<Self> {
        if levels.len() != time.n_levels() {
            return Err(Error::ShapeMismatch(format!(
                "{} levels for a time axis with {}",
                levels.len(),
                time.n_levels()
            )));
        }
        if let Some(l) = levels.iter().find(|l| l.grid() != grid) {
            return Err(Error::ShapeMismatch(format!(
                "level grid {:?} does not match {:?}",
                l.grid(),
                grid
            )));
        }
        Ok(Self { grid, time, levels })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn time(&self) -> TimeAxis<T> {
        self.time
    }

    pub fn level(&self, n: usize) -> &ScalarField<T> {
        &self.levels[n]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut ScalarField<T> {
        &mut self.levels[n]
    }

    pub fn levels(&self) -> &[ScalarField<T>] {
        &self.levels
    }
}
