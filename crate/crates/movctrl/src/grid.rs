//! Discretized domain, scalar fields, the Dirichlet Laplacian and L2 pairings.
//!
//! Domains are intervals (1D) or axis-aligned rectangles (2D) on a uniform
//! grid. Fields store interior node values only; homogeneous Dirichlet values
//! on the boundary are implicit.

use crate::error::{Error, Result};

/// Uniform space-time grid over an interval or rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    /// Domain extents per axis (second entry unused in 1D).
    pub extent: [f64; 2],
    /// Interior node count per axis.
    pub n: [usize; 2],
    /// Mesh width per axis.
    pub h: [f64; 2],
    /// Time horizon.
    pub t_final: f64,
    /// Time step.
    pub dt: f64,
    /// Number of time steps (levels run 0..=steps).
    pub steps: usize,
}

/// Build a uniform grid. `node_counts` are total node counts per axis,
/// boundary included, so `node_counts[k] - 2` interior nodes remain.
pub fn build_grid(
    dim: usize,
    extents: &[f64],
    node_counts: &[usize],
    t_final: f64,
    steps: usize,
) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(Error::Precondition(format!("dimension must be 1 or 2, got {dim}")));
    }
    if extents.len() < dim || node_counts.len() < dim {
        return Err(Error::Precondition("extents/node_counts shorter than dimension".into()));
    }
    if t_final <= 0.0 {
        return Err(Error::Precondition("time horizon must be positive".into()));
    }
    if steps < 2 {
        return Err(Error::Precondition("need at least 2 time steps".into()));
    }
    let mut extent = [0.0; 2];
    let mut n = [1usize; 2];
    let mut h = [1.0; 2];
    for k in 0..dim {
        if extents[k] <= 0.0 {
            return Err(Error::Precondition(format!("extent on axis {k} must be positive")));
        }
        if node_counts[k] < 3 {
            return Err(Error::Precondition(format!(
                "stencil undefined: need at least 3 nodes per axis, axis {k} has {}",
                node_counts[k]
            )));
        }
        extent[k] = extents[k];
        n[k] = node_counts[k] - 2;
        h[k] = extents[k] / (node_counts[k] - 1) as f64;
    }
    Ok(Grid { dim, extent, n, h, t_final, dt: t_final / steps as f64, steps })
}

impl Grid {
    /// Total interior node count.
    pub fn n_nodes(&self) -> usize {
        if self.dim == 1 { self.n[0] } else { self.n[0] * self.n[1] }
    }

    /// Quadrature weight of one interior node (h in 1D, h^2 in 2D).
    pub fn quad_weight(&self) -> f64 {
        if self.dim == 1 { self.h[0] } else { self.h[0] * self.h[1] }
    }

    /// Coordinates of interior node `idx`.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        if self.dim == 1 {
            [(idx as f64 + 1.0) * self.h[0], 0.0]
        } else {
            let i = idx % self.n[0];
            let j = idx / self.n[0];
            [(i as f64 + 1.0) * self.h[0], (j as f64 + 1.0) * self.h[1]]
        }
    }

    /// Flat index of interior node (i, j).
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        j * self.n[0] + i
    }

    /// Time of level `n`.
    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    /// Distance from a point to the domain boundary (negative outside).
    pub fn boundary_distance(&self, p: [f64; 2]) -> f64 {
        let mut d = p[0].min(self.extent[0] - p[0]);
        if self.dim == 2 {
            d = d.min(p[1].min(self.extent[1] - p[1]));
        }
        d
    }

    pub fn check_invariants(&self) -> Result<()> {
        let t = self.steps as f64 * self.dt;
        if (t - self.t_final).abs() > 1e-12 * self.t_final {
            return Err(Error::Precondition("steps * dt does not match horizon".into()));
        }
        // full trapezoid weight vector (interior h, boundary h/2) must sum to |Omega|
        let measure: f64 = if self.dim == 1 { self.extent[0] } else { self.extent[0] * self.extent[1] };
        let mut qsum = 1.0;
        for k in 0..self.dim {
            qsum *= self.h[k] * self.n[k] as f64 + self.h[k];
        }
        if (qsum - measure).abs() > 1e-10 * measure {
            return Err(Error::Precondition("quadrature weights inconsistent".into()));
        }
        Ok(())
    }
}

/// One scalar unknown per interior grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { grid: grid.clone(), values: vec![0.0; grid.n_nodes()] }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let values = (0..grid.n_nodes()).map(|i| f(grid.coords(i))).collect();
        ScalarField { grid: grid.clone(), values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, a: f64) -> Self {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|v| a * v).collect() }
    }

    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        for (u, v) in self.values.iter_mut().zip(&other.values) {
            *u += a * v;
        }
    }
}

/// M+1 time slices of a scalar field.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub slices: Vec<ScalarField>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Grid) -> Self {
        SpaceTimeField {
            grid: grid.clone(),
            slices: (0..=grid.steps).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2], f64) -> f64) -> Self {
        let slices = (0..=grid.steps)
            .map(|n| {
                let t = grid.time(n);
                ScalarField::from_fn(grid, |x| f(x, t))
            })
            .collect();
        SpaceTimeField { grid: grid.clone(), slices }
    }
}

/// Frictional damping coefficient and (unit) viscosity for the system.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub damping: ScalarField,
    pub viscosity: f64,
}

impl ProblemSpec {
    pub fn new(damping: ScalarField) -> Result<Self> {
        if !damping.is_finite() {
            return Err(Error::Precondition("damping coefficient must be bounded".into()));
        }
        Ok(ProblemSpec { damping, viscosity: 1.0 })
    }

    pub fn constant(grid: &Grid, b: f64) -> Self {
        ProblemSpec { damping: ScalarField::from_fn(grid, |_| b), viscosity: 1.0 }
    }
}

fn assert_same_grid(u: &ScalarField, v: &ScalarField) -> Result<()> {
    if u.grid != v.grid {
        return Err(Error::Precondition("fields live on different grids".into()));
    }
    Ok(())
}

/// Quadrature-weighted discrete L2 pairing.
pub fn inner(u: &ScalarField, v: &ScalarField) -> Result<f64> {
    assert_same_grid(u, v)?;
    let w = u.grid.quad_weight();
    Ok(w * u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>())
}

pub fn l2_norm(u: &ScalarField) -> f64 {
    let w = u.grid.quad_weight();
    (w * u.values.iter().map(|a| a * a).sum::<f64>()).sqrt()
}

/// Second-order centered Dirichlet Laplacian (3-point in 1D, 5-point in 2D).
pub fn apply_laplacian(u: &ScalarField) -> ScalarField {
    let g = &u.grid;
    let mut out = vec![0.0; u.values.len()];
    if g.dim == 1 {
        let n = g.n[0];
        let h2 = g.h[0] * g.h[0];
        for i in 0..n {
            let left = if i > 0 { u.values[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u.values[i + 1] } else { 0.0 };
            out[i] = (left - 2.0 * u.values[i] + right) / h2;
        }
    } else {
        let (nx, ny) = (g.n[0], g.n[1]);
        let hx2 = g.h[0] * g.h[0];
        let hy2 = g.h[1] * g.h[1];
        for j in 0..ny {
            for i in 0..nx {
                let c = u.values[g.idx2(i, j)];
                let l = if i > 0 { u.values[g.idx2(i - 1, j)] } else { 0.0 };
                let r = if i + 1 < nx { u.values[g.idx2(i + 1, j)] } else { 0.0 };
                let d = if j > 0 { u.values[g.idx2(i, j - 1)] } else { 0.0 };
                let up = if j + 1 < ny { u.values[g.idx2(i, j + 1)] } else { 0.0 };
                out[g.idx2(i, j)] = (l - 2.0 * c + r) / hx2 + (d - 2.0 * c + up) / hy2;
            }
        }
    }
    ScalarField { grid: g.clone(), values: out }
}
