//! Preconditioned conjugate gradient for the symmetric positive-definite
//! Helmholtz-type operators d(x)·I − c·Δ arising from the implicit steps.

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub history: Vec<f64>,
}

/// Apply d(x)·I − c·Δ (Dirichlet) to `u`, writing into `out`.
pub fn apply_helmholtz(grid: &Grid, d: &[f64], c: f64, u: &[f64], out: &mut [f64]) {
    if grid.dim == 1 {
        let n = grid.n[0];
        let h2 = grid.h[0] * grid.h[0];
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            out[i] = d[i] * u[i] - c * (left - 2.0 * u[i] + right) / h2;
        }
    } else {
        let (nx, ny) = (grid.n[0], grid.n[1]);
        let hx2 = grid.h[0] * grid.h[0];
        let hy2 = grid.h[1] * grid.h[1];
        for j in 0..ny {
            for i in 0..nx {
                let k = grid.idx2(i, j);
                let cc = u[k];
                let l = if i > 0 { u[k - 1] } else { 0.0 };
                let r = if i + 1 < nx { u[k + 1] } else { 0.0 };
                let dn = if j > 0 { u[k - nx] } else { 0.0 };
                let up = if j + 1 < ny { u[k + nx] } else { 0.0 };
                out[k] = d[k] * cc - c * ((l - 2.0 * cc + r) / hx2 + (dn - 2.0 * cc + up) / hy2);
            }
        }
    }
}

/// Diagonal of d(x)·I − c·Δ, used as the Jacobi preconditioner.
pub fn helmholtz_diagonal(grid: &Grid, d: &[f64], c: f64) -> Vec<f64> {
    let lap_diag = if grid.dim == 1 {
        2.0 / (grid.h[0] * grid.h[0])
    } else {
        2.0 / (grid.h[0] * grid.h[0]) + 2.0 / (grid.h[1] * grid.h[1])
    };
    d.iter().map(|di| di + c * lap_diag).collect()
}

/// Solve (d·I − c·Δ)x = b by Jacobi-preconditioned CG to relative residual
/// `tol`. Errors out with the residual history when the iteration stagnates.
pub fn solve_helmholtz(
    grid: &Grid,
    d: &[f64],
    c: f64,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let diag = helmholtz_diagonal(grid, d, c);
    cg_spd(|u, out| apply_helmholtz(grid, d, c, u, out), &diag, b, tol, max_iter)
}

/// Generic preconditioned CG for an SPD operator given as a closure.
pub fn cg_spd(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgStats { iterations: 0, relative_residual: 0.0, history: vec![0.0] }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut history = vec![1.0];
    for k in 0..max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Numerical(format!(
                "operator lost positive definiteness at CG iteration {k} (pAp = {pap:.3e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        history.push(rnorm / bnorm);
        if rnorm <= tol * bnorm {
            return Ok((
                x,
                CgStats { iterations: k + 1, relative_residual: rnorm / bnorm, history },
            ));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let tail: Vec<f64> = history.iter().rev().take(6).cloned().collect();
    Err(Error::Numerical(format!(
        "CG stagnated after {max_iter} iterations; recent relative residuals {tail:?}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use std::f64::consts::PI;

    #[test]
    fn solves_identity_plus_laplacian_1d() {
        let grid = build_grid(1, &[1.0], &[101], 1.0, 10).unwrap();
        let n = grid.n_nodes();
        let d = vec![1.0; n];
        let c = 0.01;
        // manufactured solution: discrete sine mode is an exact eigenvector
        let h = grid.h[0];
        let x_true: Vec<f64> =
            (0..n).map(|i| (PI * grid.coords(i)[0]).sin()).collect();
        let mu = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let b: Vec<f64> = x_true.iter().map(|v| (1.0 + c * mu) * v).collect();
        let (x, stats) = solve_helmholtz(&grid, &d, c, &b, 1e-13, 1000).unwrap();
        let err = x
            .iter()
            .zip(&x_true)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-11, "err {err}, iters {}", stats.iterations);
    }

    #[test]
    fn solves_2d_variable_coefficient() {
        let grid = build_grid(2, &[1.0, 1.0], &[21, 21], 1.0, 10).unwrap();
        let n = grid.n_nodes();
        let d: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * grid.coords(i)[0]).collect();
        let c = 0.02;
        let x_true: Vec<f64> = (0..n)
            .map(|i| {
                let p = grid.coords(i);
                p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])
            })
            .collect();
        let mut b = vec![0.0; n];
        apply_helmholtz(&grid, &d, c, &x_true, &mut b);
        let (x, _) = solve_helmholtz(&grid, &d, c, &b, 1e-13, 2000).unwrap();
        let err = x
            .iter()
            .zip(&x_true)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-10, "err {err}");
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let grid = build_grid(1, &[1.0], &[41], 1.0, 10).unwrap();
        let d = vec![1.0; grid.n_nodes()];
        let (x, stats) = solve_helmholtz(&grid, &d, 0.01, &vec![0.0; grid.n_nodes()], 1e-13, 100).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn stagnation_reports_history() {
        let grid = build_grid(1, &[1.0], &[101], 1.0, 10).unwrap();
        let d = vec![1.0; grid.n_nodes()];
        let b = vec![1.0; grid.n_nodes()];
        let err = solve_helmholtz(&grid, &d, 1.0, &b, 1e-15, 3).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("residuals"), "{msg}");
    }
}
