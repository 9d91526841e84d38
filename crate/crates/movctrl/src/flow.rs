//! Flow maps generated by vector fields, integrated with classical RK4.

use crate::error::{Error, Result};

/// Velocity field driving the control region. Builtins cover translations and
/// rigid rotations; arbitrary fields can be supplied as tabulated samples.
#[derive(Debug, Clone)]
pub enum FlowField {
    /// f(x, t) = v.
    Constant { velocity: [f64; 2] },
    /// Time-varying translation, f(x, t) = v * cos(2*pi*t / period).
    Oscillating { velocity: [f64; 2], period: f64 },
    /// Rigid rotation about `center` with angular velocity `omega`.
    Rotation { center: [f64; 2], omega: f64 },
    /// Samples on a uniform space-time lattice over `[0,ext0]x[0,ext1]x[0,T]`,
    /// bilinear in space and linear in time.
    Tabulated {
        extent: [f64; 2],
        t_final: f64,
        nx: usize,
        ny: usize,
        nt: usize,
        /// velocity components, indexed [t][y][x][component] flattened
        samples: Vec<f64>,
    },
}

impl FlowField {
    pub fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        match self {
            FlowField::Constant { velocity } => *velocity,
            FlowField::Oscillating { velocity, period } => {
                let c = (2.0 * std::f64::consts::PI * t / period).cos();
                [velocity[0] * c, velocity[1] * c]
            }
            FlowField::Rotation { center, omega } => {
                [-omega * (x[1] - center[1]), omega * (x[0] - center[0])]
            }
            FlowField::Tabulated { extent, t_final, nx, ny, nt, samples } => {
                let clamp = |v: f64, hi: f64| v.max(0.0).min(hi);
                let fx = clamp(x[0] / extent[0], 1.0) * (*nx as f64 - 1.0);
                let fy = clamp(x[1] / extent[1].max(1e-300), 1.0) * (*ny as f64 - 1.0);
                let ft = clamp(t / t_final, 1.0) * (*nt as f64 - 1.0);
                let (i0, wx) = split_frac(fx, *nx);
                let (j0, wy) = split_frac(fy, *ny);
                let (k0, wt) = split_frac(ft, *nt);
                let at = |k: usize, j: usize, i: usize, c: usize| {
                    samples[((k * ny + j) * nx + i) * 2 + c]
                };
                let mut out = [0.0; 2];
                for c in 0..2 {
                    let mut acc = 0.0;
                    for (k, tw) in [(k0, 1.0 - wt), (k0 + 1, wt)] {
                        if tw == 0.0 {
                            continue;
                        }
                        let v00 = at(k, j0, i0, c);
                        let v01 = at(k, j0, i0 + 1, c);
                        let v10 = at(k, j0 + 1, i0, c);
                        let v11 = at(k, j0 + 1, i0 + 1, c);
                        let v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01)
                            + wy * ((1.0 - wx) * v10 + wx * v11);
                        acc += tw * v;
                    }
                    out[c] = acc;
                }
                out
            }
        }
    }

    /// Crude Lipschitz-in-x bound used to size the substep count.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            FlowField::Constant { .. } | FlowField::Oscillating { .. } => 0.0,
            FlowField::Rotation { omega, .. } => omega.abs(),
            FlowField::Tabulated { extent, nx, ny, samples, .. } => {
                // finite-difference estimate over the lattice
                let hx = extent[0] / (*nx as f64 - 1.0).max(1.0);
                let hy = extent[1] / (*ny as f64 - 1.0).max(1.0);
                let mut lip: f64 = 0.0;
                let stride = nx * ny * 2;
                for chunk in samples.chunks(stride) {
                    for j in 0..*ny {
                        for i in 0..*nx {
                            for c in 0..2 {
                                let v = chunk[(j * nx + i) * 2 + c];
                                if i + 1 < *nx {
                                    let r = chunk[(j * nx + i + 1) * 2 + c];
                                    lip = lip.max(((r - v) / hx).abs());
                                }
                                if j + 1 < *ny {
                                    let u = chunk[((j + 1) * nx + i) * 2 + c];
                                    lip = lip.max(((u - v) / hy).abs());
                                }
                            }
                        }
                    }
                }
                lip
            }
        }
    }

    /// Sup-norm bound of the velocity over the configured box.
    pub fn speed_bound(&self, extent: [f64; 2]) -> f64 {
        match self {
            FlowField::Constant { velocity } | FlowField::Oscillating { velocity, .. } => {
                (velocity[0].powi(2) + velocity[1].powi(2)).sqrt()
            }
            FlowField::Rotation { omega, center } => {
                let dx = extent[0].max(center[0].abs() + extent[0]);
                let dy = extent[1].max(center[1].abs() + extent[1]);
                omega.abs() * (dx * dx + dy * dy).sqrt()
            }
            FlowField::Tabulated { samples, .. } => samples
                .chunks(2)
                .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
                .fold(0.0, f64::max),
        }
    }
}

fn split_frac(f: f64, n: usize) -> (usize, f64) {
    let i = (f.floor() as usize).min(n.saturating_sub(2));
    (i, f - i as f64)
}

/// Number of RK4 substeps per time level of width `dt`.
pub fn substep_count(flow: &FlowField, dt: f64) -> usize {
    let lip = flow.lipschitz_bound();
    ((lip * dt * 8.0).ceil() as usize).max(8)
}

/// Integrate the flow ODE from `t0` to `t1` (either direction) starting at `x`.
/// Returns `X(x, t1, t0)` together with a flag telling whether the trajectory
/// left the `bounds` box (origin-anchored) at any substep.
pub fn integrate_flow_checked(
    flow: &FlowField,
    x: [f64; 2],
    t0: f64,
    t1: f64,
    substeps: usize,
    bounds: Option<[f64; 2]>,
) -> ([f64; 2], bool) {
    let n = substeps.max(1);
    let dt = (t1 - t0) / n as f64;
    let mut p = x;
    let mut t = t0;
    let mut escaped = false;
    for _ in 0..n {
        p = rk4_step(flow, p, t, dt);
        t += dt;
        if let Some(b) = bounds {
            // generous margin: one box width beyond the domain
            if p[0] < -b[0] || p[0] > 2.0 * b[0] || (b[1] > 0.0 && (p[1] < -b[1] || p[1] > 2.0 * b[1])) {
                escaped = true;
            }
        }
    }
    (p, escaped)
}

/// `X(x, t1, t0)` with a substep count sized from the field's Lipschitz bound.
pub fn integrate_flow(flow: &FlowField, x: [f64; 2], t0: f64, t1: f64) -> [f64; 2] {
    let sub_per_unit = substep_count(flow, 1.0).max(64);
    let n = ((t1 - t0).abs() * sub_per_unit as f64).ceil() as usize;
    integrate_flow_checked(flow, x, t0, t1, n.max(16), None).0
}

fn rk4_step(flow: &FlowField, p: [f64; 2], t: f64, dt: f64) -> [f64; 2] {
    let k1 = flow.eval(p, t);
    let k2 = flow.eval([p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]], t + 0.5 * dt);
    let k3 = flow.eval([p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]], t + 0.5 * dt);
    let k4 = flow.eval([p[0] + dt * k3[0], p[1] + dt * k3[1]], t + dt);
    [
        p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Residual of the two-parameter group law
/// `X(X(x,t1,t0), t2, t1) = X(x, t2, t0)`.
pub fn group_property_check(flow: &FlowField, x: [f64; 2], t0: f64, t1: f64, t2: f64) -> f64 {
    let mid = integrate_flow(flow, x, t0, t1);
    let a = integrate_flow(flow, mid, t1, t2);
    let b = integrate_flow(flow, x, t0, t2);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Validate that the field evaluates finitely over a sample of the box.
pub fn validate_flow(flow: &FlowField, extent: [f64; 2], t_final: f64) -> Result<()> {
    for k in 0..=8 {
        let t = t_final * k as f64 / 8.0;
        for i in 0..=8 {
            for j in 0..=8 {
                let x = [extent[0] * i as f64 / 8.0, extent[1] * j as f64 / 8.0];
                let v = flow.eval(x, t);
                if !v[0].is_finite() || !v[1].is_finite() {
                    return Err(Error::Precondition(format!(
                        "flow field not finite at x=({}, {}), t={t}",
                        x[0], x[1]
                    )));
                }
            }
        }
    }
    Ok(())
}
