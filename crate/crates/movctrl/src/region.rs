//! Reference control regions, their transport through the flow, and the
//! per-level grid masks with a smoothed cutoff.

use crate::error::{Error, Result};
use crate::flow::{integrate_flow_checked, substep_count, FlowField};
use crate::grid::Grid;

/// Geometric primitive in 1D or 2D.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Interval { a: f64, b: f64 },
    Rect { min: [f64; 2], max: [f64; 2] },
    Ball { center: [f64; 2], radius: f64 },
}

impl Shape {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Shape::Interval { a, b } => p[0] > *a && p[0] < *b,
            Shape::Rect { min, max } => {
                p[0] > min[0] && p[0] < max[0] && p[1] > min[1] && p[1] < max[1]
            }
            Shape::Ball { center, radius } => {
                let d2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                d2 < radius * radius
            }
        }
    }

    /// Signed distance: positive inside, negative outside.
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Shape::Interval { a, b } => (p[0] - a).min(b - p[0]),
            Shape::Rect { min, max } => (p[0] - min[0])
                .min(max[0] - p[0])
                .min(p[1] - min[1])
                .min(max[1] - p[1]),
            Shape::Ball { center, radius } => {
                radius - ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt()
            }
        }
    }

    /// The same primitive grown by `margin` on every side.
    pub fn dilated(&self, margin: f64) -> Shape {
        match self {
            Shape::Interval { a, b } => Shape::Interval { a: a - margin, b: b + margin },
            Shape::Rect { min, max } => Shape::Rect {
                min: [min[0] - margin, min[1] - margin],
                max: [max[0] + margin, max[1] + margin],
            },
            Shape::Ball { center, radius } => Shape::Ball { center: *center, radius: radius + margin },
        }
    }
}

/// Union of primitives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Region {
    pub shapes: Vec<Shape>,
}

impl Region {
    pub fn new(shapes: Vec<Shape>) -> Self {
        Region { shapes }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.shapes.iter().any(|s| s.contains(p))
    }

    /// Lower bound on the signed distance to the region boundary
    /// (exact for a single primitive, conservative for unions).
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        self.shapes
            .iter()
            .map(|s| s.signed_distance(p))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dilated(&self, margin: f64) -> Region {
        Region { shapes: self.shapes.iter().map(|s| s.dilated(margin)).collect() }
    }
}

/// Nested reference sets omega0 in omega1 in omega with positive margins.
#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub omega0: Region,
    pub omega1: Region,
    pub omega: Region,
    pub margin01: f64,
    pub margin1w: f64,
}

impl RegionSpec {
    /// Validate strict nesting by sampling each inner primitive's boundary
    /// neighborhood: every point of the inner set must lie at depth >= margin
    /// inside the outer set.
    pub fn new(omega0: Region, omega1: Region, omega: Region, margin01: f64, margin1w: f64) -> Result<Self> {
        if margin01 <= 0.0 || margin1w <= 0.0 {
            return Err(Error::Precondition("region margins must be positive".into()));
        }
        check_nested(&omega0, &omega1, margin01, "omega0 in omega1")?;
        check_nested(&omega1, &omega, margin1w, "omega1 in omega")?;
        Ok(RegionSpec { omega0, omega1, omega, margin01, margin1w })
    }

    /// Convenience: derive omega1 and omega by dilating omega0.
    pub fn from_inner(omega0: Region, margin: f64) -> Result<Self> {
        let omega1 = omega0.dilated(margin);
        let omega = omega0.dilated(2.0 * margin);
        RegionSpec::new(omega0, omega1, omega, margin * 0.99, margin * 0.99)
    }
}

fn check_nested(inner: &Region, outer: &Region, margin: f64, what: &str) -> Result<()> {
    const K: usize = 24;
    for shape in &inner.shapes {
        // sample the shape's bounding box
        let (lo, hi) = bounding_box(shape);
        for i in 0..=K {
            for j in 0..=K {
                let p = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / K as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / K as f64,
                ];
                if shape.contains(p) && outer.signed_distance(p) < margin * 0.999 {
                    return Err(Error::Precondition(format!(
                        "nesting violated ({what}) near ({}, {})",
                        p[0], p[1]
                    )));
                }
            }
        }
    }
    Ok(())
}

fn bounding_box(s: &Shape) -> ([f64; 2], [f64; 2]) {
    match s {
        Shape::Interval { a, b } => ([*a, 0.0], [*b, 0.0]),
        Shape::Rect { min, max } => (*min, *max),
        Shape::Ball { center, radius } => (
            [center[0] - radius, center[1] - radius],
            [center[0] + radius, center[1] + radius],
        ),
    }
}

/// Smoothstep cutoff: 1 inside `inner`, 0 outside `outer`, C1 ramp between.
pub fn cutoff(inner: &Region, outer: &Region, p: [f64; 2]) -> f64 {
    if inner.contains(p) {
        return 1.0;
    }
    let d_out = outer.signed_distance(p);
    if d_out <= 0.0 {
        return 0.0;
    }
    let d_in = -inner.signed_distance(p); // distance-ish to the inner set
    let s = d_out / (d_out + d_in.max(1e-300));
    s * s * (3.0 - 2.0 * s)
}

/// Time-indexed masks of the transported regions on the grid, plus the
/// smoothed cutoff `zeta` (1 on the omega1 mask, 0 outside the omega mask).
#[derive(Debug, Clone)]
pub struct MovingRegion {
    pub grid: Grid,
    pub spec: RegionSpec,
    pub flow: FlowField,
    /// Pullback X(x, 0, t_n) of every interior node at every level.
    pub pullback: Vec<Vec<[f64; 2]>>,
    pub mask0: Vec<Vec<bool>>,
    pub mask1: Vec<Vec<bool>>,
    pub maskw: Vec<Vec<bool>>,
    pub zeta: Vec<Vec<f64>>,
    /// Levels at which the omega0 mask came out empty.
    pub empty_levels: Vec<usize>,
    /// Nodes whose pullback trajectory left the bounding box at some level.
    pub escaped_nodes: usize,
}

/// Pull every grid node back through the flow at every time level and test
/// membership: x in X(S, t, 0) iff X(x, 0, t) in S.
pub fn build_moving_region(flow: &FlowField, spec: &RegionSpec, grid: &Grid) -> Result<MovingRegion> {
    let nn = grid.n_nodes();
    let levels = grid.steps + 1;
    let sub = substep_count(flow, grid.dt);
    let bounds = Some(grid.extent);

    let mut pullback = Vec::with_capacity(levels);
    let mut mask0 = Vec::with_capacity(levels);
    let mut mask1 = Vec::with_capacity(levels);
    let mut maskw = Vec::with_capacity(levels);
    let mut zeta = Vec::with_capacity(levels);
    let mut empty_levels = Vec::new();
    let mut escaped_nodes = 0usize;

    for n in 0..levels {
        let t = grid.time(n);
        let mut pb = Vec::with_capacity(nn);
        let mut m0 = vec![false; nn];
        let mut m1 = vec![false; nn];
        let mut mw = vec![false; nn];
        let mut zt = vec![0.0; nn];
        for i in 0..nn {
            let x = grid.coords(i);
            let (p, escaped) = integrate_flow_checked(flow, x, t, 0.0, sub * n.max(1), bounds);
            if escaped {
                escaped_nodes += 1;
            }
            m0[i] = spec.omega0.contains(p);
            m1[i] = spec.omega1.contains(p);
            mw[i] = spec.omega.contains(p);
            // nesting of the reference sets transfers through the bijection,
            // enforce it on the boolean level regardless
            if m0[i] {
                m1[i] = true;
            }
            if m1[i] {
                mw[i] = true;
            }
            zt[i] = if m1[i] { 1.0 } else { cutoff(&spec.omega1, &spec.omega, p) };
            if !mw[i] {
                zt[i] = 0.0;
            }
            pb.push(p);
        }
        if !m0.iter().any(|b| *b) {
            empty_levels.push(n);
        }
        pullback.push(pb);
        mask0.push(m0);
        mask1.push(m1);
        maskw.push(mw);
        zeta.push(zt);
    }

    Ok(MovingRegion {
        grid: grid.clone(),
        spec: spec.clone(),
        flow: flow.clone(),
        pullback,
        mask0,
        mask1,
        maskw,
        zeta,
        empty_levels,
        escaped_nodes,
    })
}

impl MovingRegion {
    /// One-cell dilation of the omega0 mask at a level, approximating the
    /// closure of the transported set for the topological checks.
    pub fn mask0_closed(&self, level: usize) -> Vec<bool> {
        dilate_mask(&self.grid, &self.mask0[level])
    }
}

pub fn dilate_mask(grid: &Grid, mask: &[bool]) -> Vec<bool> {
    let mut out = mask.to_vec();
    if grid.dim == 1 {
        let n = grid.n[0];
        for i in 0..n {
            if mask[i] {
                if i > 0 {
                    out[i - 1] = true;
                }
                if i + 1 < n {
                    out[i + 1] = true;
                }
            }
        }
    } else {
        let (nx, ny) = (grid.n[0], grid.n[1]);
        for j in 0..ny {
            for i in 0..nx {
                if mask[grid.idx2(i, j)] {
                    if i > 0 {
                        out[grid.idx2(i - 1, j)] = true;
                    }
                    if i + 1 < nx {
                        out[grid.idx2(i + 1, j)] = true;
                    }
                    if j > 0 {
                        out[grid.idx2(i, j - 1)] = true;
                    }
                    if j + 1 < ny {
                        out[grid.idx2(i, j + 1)] = true;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn spec_1d(a: f64, b: f64) -> RegionSpec {
        RegionSpec::from_inner(Region::new(vec![Shape::Interval { a, b }]), 0.05).unwrap()
    }

    #[test]
    fn nesting_rejects_inverted_sets() {
        let big = Region::new(vec![Shape::Interval { a: 0.0, b: 0.5 }]);
        let small = Region::new(vec![Shape::Interval { a: 0.1, b: 0.2 }]);
        assert!(RegionSpec::new(big, small.clone(), small, 0.01, 0.01).is_err());
    }

    #[test]
    fn translated_interval_mask() {
        let grid = build_grid(1, &[1.0], &[101], 1.0, 100).unwrap();
        let spec = spec_1d(0.0, 0.3);
        let flow = FlowField::Constant { velocity: [1.0, 0.0] };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        // at t = 0.5 the omega0 mask is (0.5, 0.8) intersected with the grid
        let level = 50;
        for i in 0..grid.n_nodes() {
            let x = grid.coords(i)[0];
            let expect = x > 0.5 + 1e-9 && x < 0.8 - 1e-9;
            let on_edge = (x - 0.5).abs() < 1e-9 || (x - 0.8).abs() < 1e-9;
            if !on_edge {
                assert_eq!(region.mask0[level][i], expect, "x={x}");
            }
        }
    }

    #[test]
    fn static_flow_gives_constant_masks() {
        let grid = build_grid(1, &[1.0], &[61], 1.0, 40).unwrap();
        let spec = spec_1d(0.4, 0.6);
        let flow = FlowField::Constant { velocity: [0.0, 0.0] };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        for n in 1..=grid.steps {
            assert_eq!(region.mask0[n], region.mask0[0]);
        }
    }

    #[test]
    fn masks_are_nested_and_zeta_respects_masks() {
        let grid = build_grid(1, &[1.0], &[81], 1.0, 50).unwrap();
        let spec = spec_1d(0.1, 0.35);
        let flow = FlowField::Oscillating { velocity: [0.5, 0.0], period: 1.3 };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        for n in 0..=grid.steps {
            for i in 0..grid.n_nodes() {
                if region.mask0[n][i] {
                    assert!(region.mask1[n][i]);
                }
                if region.mask1[n][i] {
                    assert!(region.maskw[n][i]);
                    assert_eq!(region.zeta[n][i], 1.0);
                }
                if !region.maskw[n][i] {
                    assert_eq!(region.zeta[n][i], 0.0);
                }
                assert!((0.0..=1.0).contains(&region.zeta[n][i]));
            }
        }
    }

    #[test]
    fn pullback_identity_holds() {
        let grid = build_grid(1, &[1.0], &[41], 1.0, 20).unwrap();
        let spec = spec_1d(0.2, 0.45);
        let flow = FlowField::Constant { velocity: [0.7, 0.0] };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        let sub = substep_count(&flow, grid.dt);
        for n in (0..=grid.steps).step_by(5) {
            let t = grid.time(n);
            for i in (0..grid.n_nodes()).step_by(7) {
                let x = grid.coords(i);
                let (p, _) = integrate_flow_checked(&flow, x, t, 0.0, sub * n.max(1), None);
                assert_eq!(region.mask0[n][i], spec.omega0.contains(p));
            }
        }
    }
}
