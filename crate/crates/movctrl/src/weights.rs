//! Space-time Carleman weight construction: the base weight transported along
//! the pilot curve, the two-component time ramp, the singular time factor g,
//! and grid verification of the six structural properties of the weight.

use crate::error::{Error, Result};
use crate::geometry::{components, GeometryReport};
use crate::grid::{Grid, SpaceTimeField};
use crate::region::{dilate_mask, MovingRegion};

/// Base spatial weight: positive inside the box, zero on the boundary, sole
/// critical point at a prescribed interior location. Product of per-axis
/// factors m(x)(L − m(x)) with a monotone power remap m moving the critical
/// point.
#[derive(Debug, Clone)]
pub struct BaseWeight {
    pub dim: usize,
    pub extent: [f64; 2],
    pub center: [f64; 2],
    alpha: [f64; 2],
    /// normalization so the maximum value is 1
    scale: f64,
    vmap: Option<ValueMap>,
}

/// Monotone C¹ remap of the weight's values, used to keep a fixed share of
/// the range above a given level: slope `a` below the level, `b` above, with
/// a smoothstep blend of half-width `w`.
#[derive(Debug, Clone, Copy)]
struct ValueMap {
    vb: f64,
    w: f64,
    a: f64,
    b: f64,
}

impl ValueMap {
    /// Allocate half of [0, 1] to the values above `vb`.
    fn half_range_above(vb: f64) -> ValueMap {
        let w = 0.25 * (1.0 - vb).min(vb);
        ValueMap { vb, w, a: 0.5 / vb, b: 0.5 / (1.0 - vb) }
    }

    fn eval(&self, v: f64) -> f64 {
        let (vb, w, a, b) = (self.vb, self.w, self.a, self.b);
        if v <= vb - w {
            a * v
        } else if v >= vb + w {
            1.0 - b * (1.0 - v)
        } else {
            let x = (v - (vb - w)) / (2.0 * w);
            a * v + (b - a) * 2.0 * w * (x * x * x - 0.5 * x * x * x * x)
        }
    }

    fn deriv(&self, v: f64) -> f64 {
        let (vb, w, a, b) = (self.vb, self.w, self.a, self.b);
        if v <= vb - w {
            a
        } else if v >= vb + w {
            b
        } else {
            let x = (v - (vb - w)) / (2.0 * w);
            a + (b - a) * x * x * (3.0 - 2.0 * x)
        }
    }
}

pub fn build_base_weight(grid: &Grid, center: [f64; 2], eps: f64) -> Result<BaseWeight> {
    if grid.boundary_distance(center) <= 3.0 * eps {
        return Err(Error::Precondition(format!(
            "pilot ball of radius {:.4} around ({:.4}, {:.4}) does not fit inside the domain",
            3.0 * eps,
            center[0],
            center[1]
        )));
    }
    let mut alpha = [1.0; 2];
    for d in 0..grid.dim {
        let l = grid.extent[d];
        let c = center[d];
        if c <= 0.0 || c >= l {
            return Err(Error::Precondition("critical point must be interior".into()));
        }
        alpha[d] = (0.5f64).ln() / (c / l).ln();
    }
    let mut w =
        BaseWeight { dim: grid.dim, extent: grid.extent, center, alpha, scale: 1.0, vmap: None };
    let peak = w.eval(center);
    if !(peak > 0.0) {
        return Err(Error::Numerical("base weight degenerate at its critical point".into()));
    }
    w.scale = 1.0 / peak;
    // numeric check: gradient bounded away from zero outside the pilot ball
    let tol = 1e-6;
    for i in 0..grid.n_nodes() {
        let p = grid.coords(i);
        let r2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
        if r2 <= eps * eps {
            continue;
        }
        let g = w.gradient(p);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn <= tol {
            return Err(Error::Numerical(format!(
                "base weight critical point leaked outside the pilot ball: |grad| = {gn:.3e} at ({:.4}, {:.4})",
                p[0], p[1]
            )));
        }
    }
    Ok(w)
}

impl BaseWeight {
    fn remap(&self, d: usize, x: f64) -> f64 {
        let l = self.extent[d];
        let xc = x.clamp(0.0, l);
        l * (xc / l).powf(self.alpha[d])
    }

    fn remap_deriv(&self, d: usize, x: f64) -> f64 {
        let l = self.extent[d];
        let xc = x.clamp(1e-14 * l, l);
        self.alpha[d] * (xc / l).powf(self.alpha[d] - 1.0)
    }

    fn raw_eval(&self, p: [f64; 2]) -> f64 {
        let mut v = self.scale;
        for d in 0..self.dim {
            let m = self.remap(d, p[d]);
            v *= m * (self.extent[d] - m);
        }
        v
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let v = self.raw_eval(p);
        match &self.vmap {
            Some(f) => f.eval(v),
            None => v,
        }
    }

    pub fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for d in 0..self.dim {
            let m = self.remap(d, p[d]);
            let dm = self.remap_deriv(d, p[d]);
            let mut other = self.scale;
            for e in 0..self.dim {
                if e != d {
                    let me = self.remap(e, p[e]);
                    other *= me * (self.extent[e] - me);
                }
            }
            g[d] = other * (self.extent[d] - 2.0 * m) * dm;
        }
        if let Some(f) = &self.vmap {
            let fp = f.deriv(self.raw_eval(p));
            g[0] *= fp;
            g[1] *= fp;
        }
        g
    }

    /// Steepen the weight so that half of its range lies above the value
    /// level of the sphere of radius 2ε around the critical point. The
    /// backward pilot transport accumulates swept nodes into that annulus,
    /// so without the remap the transported weight is nearly flat behind a
    /// long sweep.
    pub fn equalize_pilot_annulus(&mut self, eps: f64) {
        let mut vb = f64::INFINITY;
        if self.dim == 1 {
            vb = vb
                .min(self.raw_eval([self.center[0] - 2.0 * eps, 0.0]))
                .min(self.raw_eval([self.center[0] + 2.0 * eps, 0.0]));
        } else {
            for k in 0..64 {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                vb = vb.min(self.raw_eval([
                    self.center[0] + 2.0 * eps * th.cos(),
                    self.center[1] + 2.0 * eps * th.sin(),
                ]));
            }
        }
        // only worthwhile when the annulus sits high in the range; otherwise
        // the weight already varies enough across it
        if vb > 0.55 && vb < 1.0 {
            self.vmap = Some(ValueMap::half_range_above(vb));
        }
    }
}

/// Boundary lattice points of the grid with their adjacent interior node.
pub fn boundary_points(grid: &Grid) -> Vec<([f64; 2], usize)> {
    let mut out = Vec::new();
    if grid.dim == 1 {
        out.push(([0.0, 0.0], 0));
        out.push(([grid.extent[0], 0.0], grid.n[0] - 1));
    } else {
        let (nx, ny) = (grid.n[0], grid.n[1]);
        let (hx, hy) = (grid.h[0], grid.h[1]);
        for i in 0..nx {
            let x = (i + 1) as f64 * hx;
            out.push(([x, 0.0], grid.idx2(i, 0)));
            out.push(([x, grid.extent[1]], grid.idx2(i, ny - 1)));
        }
        for j in 0..ny {
            let y = (j + 1) as f64 * hy;
            out.push(([0.0, y], grid.idx2(0, j)));
            out.push(([grid.extent[0], y], grid.idx2(nx - 1, j)));
        }
        // corners, attached to the diagonal interior node
        out.push(([0.0, 0.0], grid.idx2(0, 0)));
        out.push(([grid.extent[0], 0.0], grid.idx2(nx - 1, 0)));
        out.push(([0.0, grid.extent[1]], grid.idx2(0, ny - 1)));
        out.push(([grid.extent[0], grid.extent[1]], grid.idx2(nx - 1, ny - 1)));
    }
    out
}

/// Complete Carleman weight data: ψ (interior and boundary samples), the time
/// factor g, the margin δ, the constants of the build, and the pilot-curve
/// data generating the auxiliary transport flow.
#[derive(Debug, Clone)]
pub struct WeightSet {
    pub grid: Grid,
    pub psi: SpaceTimeField,
    /// ψ on the boundary lattice, per level (same order as `bnd_points`).
    pub psi_bnd: Vec<Vec<f64>>,
    pub bnd_points: Vec<([f64; 2], usize)>,
    /// g per level; the singular endpoints hold +inf.
    pub g: Vec<f64>,
    pub norm_inf: f64,
    pub delta: f64,
    pub c2: f64,
    pub c3: f64,
    /// pre-normalization sup norm of ψ (the division factor applied).
    pub raw_scale: f64,
    pub eps_pilot: f64,
    pub gamma: Vec<[f64; 2]>,
    pub lambda: f64,
    pub s: f64,
    pub phi: Option<SpaceTimeField>,
    pub theta: Option<SpaceTimeField>,
    /// e^{−2sφ}, with underflow flushed to zero.
    pub weight: Option<SpaceTimeField>,
}

impl WeightSet {
    /// Assemble a weight set from externally supplied ψ samples (used for
    /// negative tests and synthetic candidates).
    pub fn from_samples(
        grid: &Grid,
        psi: SpaceTimeField,
        psi_bnd: Vec<Vec<f64>>,
        delta: f64,
    ) -> Result<WeightSet> {
        let bnd_points = boundary_points(grid);
        if psi_bnd.len() != grid.steps + 1 || psi_bnd.iter().any(|s| s.len() != bnd_points.len()) {
            return Err(Error::Precondition("boundary sample shape mismatch".into()));
        }
        let mut norm: f64 = 0.0;
        for s in &psi.slices {
            for v in &s.values {
                norm = norm.max(v.abs());
            }
        }
        for s in &psi_bnd {
            for v in s {
                norm = norm.max(v.abs());
            }
        }
        let g = build_g(delta, grid.t_final, grid.steps)?;
        Ok(WeightSet {
            grid: grid.clone(),
            psi,
            psi_bnd,
            bnd_points,
            g,
            norm_inf: norm,
            delta,
            c2: 0.0,
            c3: 0.0,
            raw_scale: 1.0,
            eps_pilot: 0.0,
            gamma: Vec::new(),
            lambda: 0.0,
            s: 0.0,
            phi: None,
            theta: None,
            weight: None,
        })
    }
}

/// The singular-at-the-endpoints time factor: 1/t on (0, δ/2], a C¹ monotone
/// cubic bridge down to 1 on [δ/2, δ], flat 1 on [δ, T/2], mirrored beyond.
pub fn build_g(delta: f64, t_final: f64, steps: usize) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta < t_final / 2.0) {
        return Err(Error::Precondition(format!(
            "time margin must satisfy 0 < {delta} < {}",
            t_final / 2.0
        )));
    }
    let eval = |t: f64| -> f64 {
        let tt = t.min(t_final - t); // mirror symmetry about T/2
        if tt <= 0.0 {
            f64::INFINITY
        } else if tt <= delta / 2.0 {
            1.0 / tt
        } else if tt < delta {
            // Hermite cubic on [δ/2, δ]: value 2/δ and slope −4/δ² at the
            // left end, value 1 and slope 0 at the right end
            let a = delta / 2.0;
            let w = delta - a;
            let u = (tt - a) / w;
            let (p0, m0, p1, m1) = (2.0 / delta, -4.0 / (delta * delta) * w, 1.0, 0.0);
            let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
            let h10 = u * (1.0 - u) * (1.0 - u);
            let h01 = u * u * (3.0 - 2.0 * u);
            let h11 = u * u * (u - 1.0);
            h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
        } else {
            1.0
        }
    };
    let dt = t_final / steps as f64;
    Ok((0..=steps).map(|n| eval(n as f64 * dt)).collect())
}

/// Velocity of the pilot curve at continuous time, from centered differences
/// of its level samples.
struct PilotFlow<'a> {
    gamma: &'a [[f64; 2]],
    dt: f64,
    eps: f64,
}

impl PilotFlow<'_> {
    fn curve_at(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let m = self.gamma.len() - 1;
        let u = (t / self.dt).clamp(0.0, m as f64);
        let n = (u.floor() as usize).min(m.saturating_sub(1));
        let w = u - n as f64;
        let pos = [
            (1.0 - w) * self.gamma[n][0] + w * self.gamma[n + 1][0],
            (1.0 - w) * self.gamma[n][1] + w * self.gamma[n + 1][1],
        ];
        let vel_at = |k: usize| -> [f64; 2] {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k >= m {
                (m - 1, m)
            } else {
                (k - 1, k + 1)
            };
            let span = (b - a) as f64 * self.dt;
            [
                (self.gamma[b][0] - self.gamma[a][0]) / span,
                (self.gamma[b][1] - self.gamma[a][1]) / span,
            ]
        };
        let va = vel_at(n);
        let vb = vel_at(n + 1);
        let vel = [(1.0 - w) * va[0] + w * vb[0], (1.0 - w) * va[1] + w * vb[1]];
        (pos, vel)
    }

    /// Pilot transport field: the curve's velocity inside the ε-ball around
    /// the curve, zero beyond 2ε, smoothstep ramp between.
    fn eval(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let (pos, vel) = self.curve_at(t);
        let r = ((x[0] - pos[0]).powi(2) + (x[1] - pos[1]).powi(2)).sqrt();
        let chi = if r <= self.eps {
            1.0
        } else if r >= 2.0 * self.eps {
            0.0
        } else {
            // fourth-order tangency where the ramp meets the rigid ball, so
            // backward trajectories are captured at the trailing edge as
            // slowly as possible (less compression of the transported weight)
            let u = (2.0 * self.eps - r) / self.eps;
            let s = u * u * (3.0 - 2.0 * u);
            1.0 - (1.0 - s) * (1.0 - s)
        };
        [vel[0] * chi, vel[1] * chi]
    }

    /// Pull (x, t) back to time 0 through the pilot flow, RK4.
    fn pullback(&self, x: [f64; 2], t: f64, substeps: usize) -> [f64; 2] {
        let n = substeps.max(1);
        let dt = -t / n as f64;
        let mut p = x;
        let mut tau = t;
        for _ in 0..n {
            let k1 = self.eval(p, tau);
            let k2 = self.eval([p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]], tau + 0.5 * dt);
            let k3 = self.eval([p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]], tau + 0.5 * dt);
            let k4 = self.eval([p[0] + dt * k3[0], p[1] + dt * k3[1]], tau + dt);
            p = [
                p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ];
            tau += dt;
        }
        p
    }
}

/// Per-level two-sided ramp: +1 on the component of the complement labeled
/// "ahead", −1 on the one labeled "behind", smooth blend inside the region
/// mask. Labels are matched between consecutive levels by node overlap.
fn build_eta(region: &MovingRegion) -> Result<Vec<Vec<f64>>> {
    let grid = &region.grid;
    let nn = grid.n_nodes();
    let levels = region.mask1.len();
    let mut prev: Vec<i8> = vec![0; nn];
    let mut out = Vec::with_capacity(levels);
    for n in 0..levels {
        let keep: Vec<bool> = region.mask1[n].iter().map(|b| !b).collect();
        let (label, ncomp) = components(grid, &keep);
        if ncomp == 0 || ncomp > 2 {
            return Err(Error::Geometry(format!(
                "complement has {ncomp} components at level {n}; ramp undefined"
            )));
        }
        // vote each component's sign from the previous level
        let mut sign = vec![0i8; ncomp];
        for i in 0..nn {
            if label[i] == usize::MAX || prev[i] == 0 {
                continue;
            }
            let c = label[i];
            if sign[c] == 0 {
                sign[c] = prev[i];
            } else if sign[c] != prev[i] {
                return Err(Error::Geometry(format!(
                    "component label continuity lost at level {n} (merge of both sides)"
                )));
            }
        }
        let assigned_plus = sign.contains(&1);
        let assigned_minus = sign.contains(&-1);
        for c in 0..ncomp {
            if sign[c] == 0 {
                sign[c] = if n == 0 || !assigned_plus {
                    1
                } else if !assigned_minus {
                    -1
                } else {
                    return Err(Error::Geometry(format!(
                        "untrackable new component at level {n}"
                    )));
                };
            }
        }
        if ncomp == 2 && sign[0] == sign[1] {
            return Err(Error::Geometry(format!(
                "both components carry the same label at level {n}"
            )));
        }
        // distance-based blend inside the mask
        let mut plus_pts = Vec::new();
        let mut minus_pts = Vec::new();
        let mut cur = vec![0i8; nn];
        for i in 0..nn {
            if label[i] != usize::MAX {
                cur[i] = sign[label[i]];
                if cur[i] == 1 {
                    plus_pts.push(grid.coords(i));
                } else {
                    minus_pts.push(grid.coords(i));
                }
            }
        }
        let dist = |p: [f64; 2], set: &Vec<[f64; 2]>| -> f64 {
            set.iter()
                .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        };
        let mut eta = vec![0.0; nn];
        for i in 0..nn {
            eta[i] = match cur[i] {
                1 => 1.0,
                -1 => -1.0,
                _ => {
                    if minus_pts.is_empty() {
                        1.0
                    } else if plus_pts.is_empty() {
                        -1.0
                    } else {
                        let p = grid.coords(i);
                        let dp = dist(p, &plus_pts);
                        let dm = dist(p, &minus_pts);
                        let w = (dm - dp) / (dp + dm);
                        // odd cubic with flat ends keeps the blend C¹ where
                        // it meets the pure regions
                        0.5 * w * (3.0 - w * w)
                    }
                }
            };
        }
        prev = cur;
        out.push(eta);
    }
    Ok(out)
}

/// Build ψ = ψ₁ + C₂ψ₂ + C₃ on an admissible geometry, with the constants
/// found by deterministic doubling, then normalize ψ to sup norm 1.
pub fn build_psi(region: &MovingRegion, geometry: &GeometryReport) -> Result<WeightSet> {
    let grid = &region.grid;
    if !geometry.all_pass() {
        return Err(Error::Precondition(
            "weight construction requires every admissibility verdict to pass".into(),
        ));
    }
    let (t1, t2, t_final) = (geometry.t1, geometry.t2, grid.t_final);
    if !(t1 > 0.0 && t1 < t2 && t2 < t_final) {
        return Err(Error::Precondition(format!(
            "transition times t1 = {t1}, t2 = {t2} must satisfy 0 < t1 < t2 < {t_final}"
        )));
    }
    let delta = t1.min(t_final - t2).min(t_final / 2.0) / 2.0;
    if geometry.gamma.len() != grid.steps + 1 {
        return Err(Error::Precondition("pilot curve sampling does not match the grid".into()));
    }
    let eps = geometry.gamma_clearance / 3.0 * 0.9;
    let mut base = build_base_weight(grid, geometry.gamma[0], eps)?;
    base.equalize_pilot_annulus(eps);
    let pilot = PilotFlow { gamma: &geometry.gamma, dt: grid.dt, eps };

    // ψ₁: base weight pulled back through the pilot transport
    let nn = grid.n_nodes();
    let levels = grid.steps + 1;
    let mut psi1 = vec![vec![0.0; nn]; levels];
    for n in 0..levels {
        let t = grid.time(n);
        let sub = (2 * n).max(4);
        for i in 0..nn {
            let p = pilot.pullback(grid.coords(i), t, sub);
            psi1[n][i] = base.eval(p);
        }
    }
    let eta = build_eta(region)?;

    // C₂ by doubling until the time-derivative properties hold with margin
    let mut c2 = 1.0f64;
    let psi1_ref = &psi1;
    let eta_ref = &eta;
    let check_time_props = |c2: f64| -> bool {
        let dt2 = 2.0 * grid.dt;
        let tol = 1e-3 * c2;
        for n in 1..levels - 1 {
            let t = grid.time(n);
            for i in 0..nn {
                if region.mask1[n][i] || region.mask1[n - 1][i] || region.mask1[n + 1][i] {
                    continue;
                }
                let val = |k: usize| psi1_ref[k][i] + c2 * grid.time(k) * eta_ref[k][i];
                let pt = (val(n + 1) - val(n - 1)) / dt2;
                if pt.abs() <= tol {
                    return false;
                }
                if t <= delta && pt <= tol {
                    return false;
                }
                if t >= t_final - delta && pt >= -tol {
                    return false;
                }
            }
        }
        true
    };
    let cap = (1u64 << 20) as f64;
    while !check_time_props(c2) {
        c2 *= 2.0;
        if c2 > cap {
            return Err(Error::Numerical(
                "constants not found: time-ramp coefficient search hit its cap".into(),
            ));
        }
    }
    // C₃ by doubling until ψ > (3/4)‖ψ‖ everywhere
    let mut psi_min = f64::INFINITY;
    let mut psi_max = f64::NEG_INFINITY;
    for n in 0..levels {
        let t = grid.time(n);
        for i in 0..nn {
            let v = psi1[n][i] + c2 * t * eta[n][i];
            psi_min = psi_min.min(v);
            psi_max = psi_max.max(v);
        }
        // boundary: ψ₁ = 0, ramp copied from the adjacent interior node
        psi_min = psi_min.min(-c2 * t);
        psi_max = psi_max.max(c2 * t);
    }
    let mut c3 = 1.0f64;
    while !(psi_min + c3 > 0.75 * (psi_max + c3)) {
        c3 *= 2.0;
        if c3 > cap {
            return Err(Error::Numerical(
                "constants not found: offset search hit its cap".into(),
            ));
        }
    }

    let raw_scale = psi_max + c3;
    let bnd_points = boundary_points(grid);
    let mut psi = SpaceTimeField::zeros(grid);
    let mut psi_bnd = vec![vec![0.0; bnd_points.len()]; levels];
    let mut norm: f64 = 0.0;
    for n in 0..levels {
        let t = grid.time(n);
        for i in 0..nn {
            let v = (psi1[n][i] + c2 * t * eta[n][i] + c3) / raw_scale;
            psi.slices[n].values[i] = v;
            norm = norm.max(v.abs());
        }
        for (k, (_, adj)) in bnd_points.iter().enumerate() {
            let v = (c2 * t * eta[n][*adj] + c3) / raw_scale;
            psi_bnd[n][k] = v;
            norm = norm.max(v.abs());
        }
    }
    let g = build_g(delta, t_final, grid.steps)?;
    Ok(WeightSet {
        grid: grid.clone(),
        psi,
        psi_bnd,
        bnd_points,
        g,
        norm_inf: norm,
        delta,
        c2,
        c3,
        raw_scale,
        eps_pilot: eps,
        gamma: geometry.gamma.clone(),
        lambda: 0.0,
        s: 0.0,
        phi: None,
        theta: None,
        weight: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropVerdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone)]
pub struct PropertyCheck {
    pub verdict: PropVerdict,
    /// Signed margin: positive means the property holds with that slack.
    pub margin: f64,
    pub worst_node: usize,
    pub worst_level: usize,
}

#[derive(Debug, Clone)]
pub struct PsiPropertyReport {
    pub grad_nonzero: PropertyCheck,       // P1
    pub time_deriv_nonzero: PropertyCheck, // P2
    pub increasing_early: PropertyCheck,   // P3
    pub decreasing_late: PropertyCheck,    // P4
    pub normal_deriv: PropertyCheck,       // P5
    pub above_three_quarters: PropertyCheck, // P6
}

impl PsiPropertyReport {
    pub fn all_pass(&self) -> bool {
        [
            &self.grad_nonzero,
            &self.time_deriv_nonzero,
            &self.increasing_early,
            &self.decreasing_late,
            &self.normal_deriv,
            &self.above_three_quarters,
        ]
        .iter()
        .all(|c| c.verdict == PropVerdict::Pass)
    }
}

fn finish(mut c: PropertyCheck) -> PropertyCheck {
    c.verdict = if c.margin > 0.0 { PropVerdict::Pass } else { PropVerdict::Fail };
    c
}

/// Verify the six structural properties of ψ on the grid: nonvanishing
/// spatial gradient and time derivative away from the transported inner
/// region, the right monotonicity near both time ends, nonpositive outward
/// normal difference, and the lower bound by 3/4 of the sup norm.
pub fn verify_psi_properties(ws: &WeightSet, region: &MovingRegion) -> PsiPropertyReport {
    let grid = &ws.grid;
    let nn = grid.n_nodes();
    let levels = grid.steps + 1;
    // tolerances scale with the oscillation of ψ, not its sup: the additive
    // offset C₃ inflates the sup but carries no derivative information
    let mut psi_min = f64::INFINITY;
    let mut psi_max = f64::NEG_INFINITY;
    for s in &ws.psi.slices {
        for v in &s.values {
            psi_min = psi_min.min(*v);
            psi_max = psi_max.max(*v);
        }
    }
    for s in &ws.psi_bnd {
        for v in s {
            psi_min = psi_min.min(*v);
            psi_max = psi_max.max(*v);
        }
    }
    let scale = (psi_max - psi_min).max(1e-300);
    let tol_grad = 1e-3 * scale / grid.extent[0].max(grid.extent[1]);
    let tol_t = 1e-3 * scale / grid.t_final;

    // boundary lookup for one-sided stencils at the domain edge
    let mut bnd_of: std::collections::HashMap<(i64, i64), usize> = std::collections::HashMap::new();
    for (k, (p, _)) in ws.bnd_points.iter().enumerate() {
        let key = (
            (p[0] / grid.h[0]).round() as i64,
            if grid.dim == 2 { (p[1] / grid.h[1]).round() as i64 } else { 0 },
        );
        bnd_of.insert(key, k);
    }
    let value_at = |n: usize, ix: i64, iy: i64| -> f64 {
        // lattice indices counted in cells from the origin; interior nodes
        // occupy 1..=n[d]
        let inside_x = ix >= 1 && ix <= grid.n[0] as i64;
        let inside_y = grid.dim == 1 || (iy >= 1 && iy <= grid.n[1] as i64);
        if inside_x && inside_y {
            let i = if grid.dim == 1 {
                (ix - 1) as usize
            } else {
                grid.idx2((ix - 1) as usize, (iy - 1) as usize)
            };
            ws.psi.slices[n].values[i]
        } else {
            let key = (ix, if grid.dim == 2 { iy } else { 0 });
            ws.psi_bnd[n][*bnd_of.get(&key).expect("boundary sample missing")]
        }
    };

    // A difference stencil only represents the property where its whole
    // support lies outside the transported inner region, so exclusions are
    // widened by one cell in space and one level in time.
    let dil: Vec<Vec<bool>> = region.mask1.iter().map(|m| dilate_mask(grid, m)).collect();

    let mut p1 = PropertyCheck { verdict: PropVerdict::Fail, margin: f64::INFINITY, worst_node: 0, worst_level: 0 };
    let mut p2 = p1.clone();
    let mut p3 = p1.clone();
    let mut p4 = p1.clone();
    let mut p5 = p1.clone();
    let mut p6 = p1.clone();

    for n in 0..levels {
        let t = grid.time(n);
        for i in 0..nn {
            // P6 over every interior sample
            let v = ws.psi.slices[n].values[i];
            let m6 = v - 0.75 * ws.norm_inf;
            if m6 < p6.margin {
                p6 = PropertyCheck { verdict: PropVerdict::Fail, margin: m6, worst_node: i, worst_level: n };
            }
            if !dil[n][i] {
                // P1: centered spatial differences (boundary samples close the stencil)
                let (ix, iy) = if grid.dim == 1 {
                    ((i + 1) as i64, 0i64)
                } else {
                    (((i % grid.n[0]) + 1) as i64, ((i / grid.n[0]) + 1) as i64)
                };
                let gx = (value_at(n, ix + 1, iy) - value_at(n, ix - 1, iy)) / (2.0 * grid.h[0]);
                let gy = if grid.dim == 2 {
                    (value_at(n, ix, iy + 1) - value_at(n, ix, iy - 1)) / (2.0 * grid.h[1])
                } else {
                    0.0
                };
                let gn = (gx * gx + gy * gy).sqrt();
                let m1 = gn - tol_grad;
                if m1 < p1.margin {
                    p1 = PropertyCheck { verdict: PropVerdict::Fail, margin: m1, worst_node: i, worst_level: n };
                }
            }
            // P2-P4: centered time differences at inner levels
            if n >= 1
                && n + 1 < levels
                && !region.mask1[n][i]
                && !region.mask1[n - 1][i]
                && !region.mask1[n + 1][i]
            {
                let pt = (ws.psi.slices[n + 1].values[i] - ws.psi.slices[n - 1].values[i])
                    / (2.0 * grid.dt);
                let m2 = pt.abs() - tol_t;
                if m2 < p2.margin {
                    p2 = PropertyCheck { verdict: PropVerdict::Fail, margin: m2, worst_node: i, worst_level: n };
                }
                if t <= ws.delta {
                    let m3 = pt - tol_t;
                    if m3 < p3.margin {
                        p3 = PropertyCheck { verdict: PropVerdict::Fail, margin: m3, worst_node: i, worst_level: n };
                    }
                }
                if t >= grid.t_final - ws.delta {
                    let m4 = -pt - tol_t;
                    if m4 < p4.margin {
                        p4 = PropertyCheck { verdict: PropVerdict::Fail, margin: m4, worst_node: i, worst_level: n };
                    }
                }
            }
        }
        // P5: outward one-sided difference at every boundary point
        for (k, (_, adj)) in ws.bnd_points.iter().enumerate() {
            let h = grid.h[0].min(if grid.dim == 2 { grid.h[1] } else { grid.h[0] });
            let dn = (ws.psi_bnd[n][k] - ws.psi.slices[n].values[*adj]) / h;
            let m5 = -dn; // require dn <= 0
            if m5 < p5.margin {
                p5 = PropertyCheck { verdict: PropVerdict::Fail, margin: m5, worst_node: *adj, worst_level: n };
            }
            // P6 also over boundary samples
            let m6 = ws.psi_bnd[n][k] - 0.75 * ws.norm_inf;
            if m6 < p6.margin {
                p6 = PropertyCheck { verdict: PropVerdict::Fail, margin: m6, worst_node: *adj, worst_level: n };
            }
        }
    }
    PsiPropertyReport {
        grad_nonzero: finish(p1),
        time_deriv_nonzero: finish(p2),
        increasing_early: finish(p3),
        decreasing_late: finish(p4),
        normal_deriv: finish(p5),
        above_three_quarters: finish(p6),
    }
}

/// Populate φ = g(e^{1.5λ‖ψ‖} − e^{λψ}), θ = g·e^{λψ} and the quadrature
/// weight e^{−2sφ} for given parameters.
pub fn eval_weights(ws: &mut WeightSet, lambda: f64, s: f64) -> Result<()> {
    if !(lambda > 0.0 && s > 0.0) {
        return Err(Error::Precondition("weight parameters must be positive".into()));
    }
    if lambda * ws.norm_inf > 700.0 {
        return Err(Error::Numerical(format!(
            "e^(λψ) overflows at λ‖ψ‖ = {:.1}; rescale ψ",
            lambda * ws.norm_inf
        )));
    }
    let grid = &ws.grid;
    let top = (1.5 * lambda * ws.norm_inf).exp();
    let mut phi = SpaceTimeField::zeros(grid);
    let mut theta = SpaceTimeField::zeros(grid);
    let mut weight = SpaceTimeField::zeros(grid);
    for n in 0..=grid.steps {
        let g = ws.g[n];
        for i in 0..grid.n_nodes() {
            if g.is_infinite() {
                phi.slices[n].values[i] = f64::INFINITY;
                theta.slices[n].values[i] = f64::INFINITY;
                weight.slices[n].values[i] = 0.0;
                continue;
            }
            let e = (lambda * ws.psi.slices[n].values[i]).exp();
            let ph = g * (top - e);
            phi.slices[n].values[i] = ph;
            theta.slices[n].values[i] = g * e;
            let w = (-2.0 * s * ph).exp();
            weight.slices[n].values[i] = if w < 1e-300 { 0.0 } else { w };
        }
    }
    ws.lambda = lambda;
    ws.s = s;
    ws.phi = Some(phi);
    ws.theta = Some(theta);
    ws.weight = Some(weight);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowField;
    use crate::geometry::analyze_geometry;
    use crate::grid::build_grid;
    use crate::region::{build_moving_region, Region, RegionSpec, Shape};

    fn fig1_setup() -> (Grid, MovingRegion, GeometryReport) {
        let grid = build_grid(1, &[1.0], &[61], 0.95, 60).unwrap();
        let spec =
            RegionSpec::from_inner(Region::new(vec![Shape::Interval { a: -0.15, b: 0.2 }]), 0.05)
                .unwrap();
        let flow = FlowField::Constant { velocity: [1.0, 0.0] };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        let report = analyze_geometry(&flow, &spec, &grid, 2).unwrap();
        assert!(report.all_pass());
        (grid, region, report)
    }

    #[test]
    fn base_weight_1d_centered_is_parabola() {
        let grid = build_grid(1, &[1.0], &[41], 1.0, 10).unwrap();
        let w = build_base_weight(&grid, [0.5, 0.0], 0.05).unwrap();
        // proportional to x(1−x), normalized to peak 1
        for i in 0..grid.n_nodes() {
            let x = grid.coords(i)[0];
            assert!((w.eval([x, 0.0]) - 4.0 * x * (1.0 - x)).abs() < 1e-12);
        }
        assert!(w.eval([0.0, 0.0]).abs() < 1e-12);
        assert!(w.eval([1.0, 0.0]).abs() < 1e-12);
        let g = w.gradient([0.5, 0.0]);
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn base_weight_2d_square() {
        let grid = build_grid(2, &[1.0, 1.0], &[21, 21], 1.0, 10).unwrap();
        let w = build_base_weight(&grid, [0.5, 0.5], 0.05).unwrap();
        let g = w.gradient([0.5, 0.5]);
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
        assert!((w.eval([0.5, 0.5]) - 1.0).abs() < 1e-12);
        assert!(w.eval([0.3, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn base_weight_off_center_gradient_scan() {
        let grid = build_grid(1, &[1.0], &[101], 1.0, 10).unwrap();
        let w = build_base_weight(&grid, [0.3, 0.0], 0.09).unwrap();
        for i in 0..grid.n_nodes() {
            let x = grid.coords(i)[0];
            if (x - 0.3).abs() > 0.1 {
                assert!(w.gradient([x, 0.0])[0].abs() > 1e-6, "flat at {x}");
            }
        }
    }

    #[test]
    fn base_weight_rejects_ball_near_boundary() {
        let grid = build_grid(1, &[1.0], &[41], 1.0, 10).unwrap();
        assert!(build_base_weight(&grid, [0.1, 0.0], 0.05).is_err());
    }

    #[test]
    fn g_formula_branches() {
        let (delta, t_final, steps) = (0.1, 1.0, 1000);
        let g = build_g(delta, t_final, steps).unwrap();
        let dt = t_final / steps as f64;
        let at = |t: f64| g[(t / dt).round() as usize];
        assert!((at(delta / 4.0) - 4.0 / delta).abs() < 1e-12);
        assert!((at(t_final / 2.0) - 1.0).abs() < 1e-12);
        assert!((at(0.3) - 1.0).abs() < 1e-12);
        assert!(g[0].is_infinite() && g[steps].is_infinite());
        // symmetry
        for n in 1..steps {
            assert!((g[n] - g[steps - n]).abs() < 1e-9, "asymmetry at level {n}");
        }
        // monotone nonincreasing up to δ
        let k = (delta / dt).round() as usize;
        for n in 1..k {
            assert!(g[n + 1] <= g[n] + 1e-12, "g increased at level {n}");
        }
    }

    #[test]
    fn g_rejects_large_delta() {
        assert!(build_g(0.6, 1.0, 100).is_err());
    }

    #[test]
    fn psi_build_passes_all_properties() {
        let (_, region, report) = fig1_setup();
        let ws = build_psi(&region, &report).unwrap();
        assert!((ws.norm_inf - 1.0).abs() < 1e-12, "normalized sup {}", ws.norm_inf);
        let props = verify_psi_properties(&ws, &region);
        assert!(props.all_pass(), "{props:?}");
    }

    #[test]
    fn psi_rejects_failed_geometry() {
        let grid = build_grid(1, &[1.0], &[41], 1.0, 30).unwrap();
        let spec =
            RegionSpec::from_inner(Region::new(vec![Shape::Interval { a: 0.4, b: 0.6 }]), 0.03)
                .unwrap();
        let flow = FlowField::Constant { velocity: [0.0, 0.0] };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        let report = analyze_geometry(&flow, &spec, &grid, 0).unwrap();
        assert!(!report.all_pass());
        assert!(build_psi(&region, &report).is_err());
    }

    #[test]
    fn psi_rejects_degenerate_transition_times() {
        let (_, region, mut report) = fig1_setup();
        report.t1 = 0.0;
        assert!(build_psi(&region, &report).is_err());
    }

    #[test]
    fn missing_offset_breaks_three_quarter_bound() {
        // ψ without the additive constant vanishes on the boundary, so it
        // cannot stay above 3/4 of its own sup norm
        let grid = build_grid(1, &[1.0], &[41], 1.0, 40).unwrap();
        let psi = SpaceTimeField::from_fn(&grid, |x, _| x[0] * (1.0 - x[0]));
        let bnd = vec![vec![0.0; 2]; grid.steps + 1];
        let ws = WeightSet::from_samples(&grid, psi, bnd, 0.1).unwrap();
        let spec =
            RegionSpec::from_inner(Region::new(vec![Shape::Interval { a: 0.4, b: 0.6 }]), 0.03)
                .unwrap();
        let flow = FlowField::Constant { velocity: [0.0, 0.0] };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        let props = verify_psi_properties(&ws, &region);
        assert_eq!(props.above_three_quarters.verdict, PropVerdict::Fail);
    }

    #[test]
    fn periodic_candidate_fails_time_monotonicity() {
        // a traveling periodic profile has ψ_t changing sign outside any
        // mask, so the nonvanishing-time-derivative property cannot hold
        let grid = build_grid(1, &[1.0], &[61], 1.0, 60).unwrap();
        let psi = SpaceTimeField::from_fn(&grid, |x, t| {
            2.0 + 0.5 * (2.0 * std::f64::consts::PI * (x[0] - t)).cos()
        });
        let bnd: Vec<Vec<f64>> = (0..=grid.steps)
            .map(|n| {
                let t = grid.time(n);
                vec![
                    2.0 + 0.5 * (2.0 * std::f64::consts::PI * (0.0 - t)).cos(),
                    2.0 + 0.5 * (2.0 * std::f64::consts::PI * (1.0 - t)).cos(),
                ]
            })
            .collect();
        let ws = WeightSet::from_samples(&grid, psi, bnd, 0.1).unwrap();
        let spec =
            RegionSpec::from_inner(Region::new(vec![Shape::Interval { a: 0.45, b: 0.55 }]), 0.02)
                .unwrap();
        let flow = FlowField::Constant { velocity: [0.0, 0.0] };
        let region = build_moving_region(&flow, &spec, &grid).unwrap();
        let props = verify_psi_properties(&ws, &region);
        assert_eq!(props.time_deriv_nonzero.verdict, PropVerdict::Fail);
    }

    #[test]
    fn weights_pointwise_formula_and_identity() {
        let grid = build_grid(1, &[1.0], &[21], 1.0, 40).unwrap();
        // constant ψ = 1 (boundary too) with sup norm 1
        let psi = SpaceTimeField::from_fn(&grid, |_, _| 1.0);
        let bnd = vec![vec![1.0; 2]; grid.steps + 1];
        let mut ws = WeightSet::from_samples(&grid, psi, bnd, 0.2).unwrap();
        eval_weights(&mut ws, 1.0, 1.0).unwrap();
        let phi = ws.phi.as_ref().unwrap();
        let theta = ws.theta.as_ref().unwrap();
        // at a level where g = 1
        let n_mid = grid.steps / 2;
        let e = std::f64::consts::E;
        assert!((phi.slices[n_mid].values[3] - (1.5f64.exp() - e)).abs() < 1e-12);
        assert!((theta.slices[n_mid].values[3] - e).abs() < 1e-12);
        // φ + θ = g e^{1.5λ‖ψ‖} at every regular sample
        let top = (1.5f64).exp();
        for n in 1..grid.steps {
            for i in 0..grid.n_nodes() {
                let lhs = phi.slices[n].values[i] + theta.slices[n].values[i];
                let rhs = ws.g[n] * top;
                assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs(), "level {n}");
            }
        }
    }

    #[test]
    fn weight_vanishes_at_time_endpoints() {
        let (_, region, report) = fig1_setup();
        let mut ws = build_psi(&region, &report).unwrap();
        eval_weights(&mut ws, 2.0, 2.0).unwrap();
        let w = ws.weight.as_ref().unwrap();
        let total: f64 = w.slices.iter().flat_map(|s| &s.values).sum();
        let ends: f64 = w.slices[0].values.iter().sum::<f64>()
            + w.slices[ws.grid.steps].values.iter().sum::<f64>();
        assert_eq!(ends, 0.0);
        assert!(total > 0.0);
        // near-endpoint levels contribute a negligible share
        let near: f64 = w.slices[1].values.iter().sum::<f64>()
            + w.slices[ws.grid.steps - 1].values.iter().sum::<f64>();
        assert!(near < 1e-12 * total, "near-endpoint share {}", near / total);
        let _ = region;
    }

    #[test]
    fn phi_positive_everywhere() {
        let (_, region, report) = fig1_setup();
        let mut ws = build_psi(&region, &report).unwrap();
        eval_weights(&mut ws, 3.0, 1.0).unwrap();
        let phi = ws.phi.as_ref().unwrap();
        for n in 0..=ws.grid.steps {
            for v in &phi.slices[n].values {
                assert!(*v > 0.0);
            }
        }
    }

    #[test]
    fn overflow_guard_triggers() {
        let (_, region, report) = fig1_setup();
        let mut ws = build_psi(&region, &report).unwrap();
        let err = eval_weights(&mut ws, 1e4, 1.0).unwrap_err();
        assert!(format!("{err}").contains("rescale"));
    }

    #[test]
    fn theta_time_derivative_bounded_by_theta_squared() {
        let (grid, region, report) = fig1_setup();
        let mut ws = build_psi(&region, &report).unwrap();
        let lambda = 2.0;
        eval_weights(&mut ws, lambda, 1.0).unwrap();
        let theta = ws.theta.as_ref().unwrap();
        let mut c: f64 = 0.0;
        for n in 1..grid.steps {
            let t = grid.time(n);
            if t < ws.delta || t > grid.t_final - ws.delta {
                continue;
            }
            for i in 0..grid.n_nodes() {
                let dt_theta = (theta.slices[n + 1].values[i] - theta.slices[n - 1].values[i])
                    / (2.0 * grid.dt);
                let bound = lambda * theta.slices[n].values[i].powi(2);
                c = c.max(dt_theta.abs() / bound);
            }
        }
        assert!(c.is_finite() && c < 50.0, "ratio constant {c}");
    }
}
