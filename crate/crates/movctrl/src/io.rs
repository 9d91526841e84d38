//! Output plumbing for the batch front end: gnuplot-consumable CSV tables,
//! structured-text reports, and a per-run manifest with the config hash.
//!
//! Every writer formats floats with Rust's shortest round-trip formatting, so
//! identical in-memory results produce byte-identical files.

use crate::carleman::CarlemanReport;
use crate::control::{CascadeResult, ControlSignal, HUMReport, ObsReport};
use crate::error::Result;
use crate::geometry::GeometryReport;
use crate::grid::{l2_norm, Grid, SpaceTimeField};
use crate::weights::{PropVerdict, PropertyCheck, PsiPropertyReport, WeightSet};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::write(dir.join(name), content)?;
    Ok(())
}

/// Manifest written alongside every subcommand's outputs: hash of the exact
/// config text, package version, and wall time.
pub fn write_manifest(dir: &Path, config_text: &str, wall_seconds: f64) -> Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::new();
    for b in digest {
        write!(hex, "{b:02x}").unwrap();
    }
    let content = format!(
        "config_sha256 = {hex}\nversion = {}\nwall_seconds = {wall_seconds:.3}\n",
        env!("CARGO_PKG_VERSION")
    );
    write_file(dir, "manifest.txt", &content)
}

/// Geometry verdicts as text plus the per-level profile CSV
/// (level, t, component_count, coverage_fraction).
pub fn write_geometry(dir: &Path, grid: &Grid, report: &GeometryReport) -> Result<()> {
    let mut txt = String::new();
    writeln!(txt, "pilot_curve (A3a) = {}", report.pilot).unwrap();
    writeln!(txt, "covering (A3b) = {}", report.covering).unwrap();
    writeln!(txt, "complement_connected (A3c) = {}", report.connected_outside).unwrap();
    writeln!(txt, "two_component_phase (A3d) = {}", report.two_components).unwrap();
    writeln!(txt, "no_escape_curve (A3e) = {}", report.escape).unwrap();
    writeln!(txt, "all_pass = {}", report.all_pass()).unwrap();
    writeln!(txt, "t0_cover = {}", report.t0_cover).unwrap();
    writeln!(txt, "delta0 = {}", report.delta0).unwrap();
    writeln!(txt, "t1 = {}", report.t1).unwrap();
    writeln!(txt, "t2 = {}", report.t2).unwrap();
    writeln!(txt, "gamma_clearance = {}", report.gamma_clearance).unwrap();
    write_file(dir, "geometry_report.txt", &txt)?;

    let mut csv = String::from("level,t,component_count,coverage_fraction\n");
    for n in 0..report.component_counts.len() {
        writeln!(
            csv,
            "{n},{},{},{}",
            grid.time(n),
            report.component_counts[n],
            report.coverage_fraction[n]
        )
        .unwrap();
    }
    write_file(dir, "geometry_profile.csv", &csv)
}

fn prop_line(txt: &mut String, name: &str, what: &str, c: &PropertyCheck) {
    let verdict = match c.verdict {
        PropVerdict::Pass => "PASS",
        PropVerdict::Fail => "FAIL",
    };
    writeln!(
        txt,
        "{name} ({what}) = {verdict}  margin = {}  worst_node = {}  worst_level = {}",
        c.margin, c.worst_node, c.worst_level
    )
    .unwrap();
}

/// Weight-function outputs: the property report and CSV slices
/// (level, t, node, x, y, psi, g) plus phi/theta when evaluated.
pub fn write_weights(dir: &Path, ws: &WeightSet, props: &PsiPropertyReport) -> Result<()> {
    let mut txt = String::new();
    prop_line(&mut txt, "P1", "spatial gradient bounded below", &props.grad_nonzero);
    prop_line(&mut txt, "P2", "time derivative bounded below", &props.time_deriv_nonzero);
    prop_line(&mut txt, "P3", "increasing near t = 0", &props.increasing_early);
    prop_line(&mut txt, "P4", "decreasing near t = T", &props.decreasing_late);
    prop_line(&mut txt, "P5", "outward normal difference nonpositive", &props.normal_deriv);
    prop_line(&mut txt, "P6", "above 3/4 of the sup norm", &props.above_three_quarters);
    writeln!(txt, "all_pass = {}", props.all_pass()).unwrap();
    writeln!(txt, "delta = {}", ws.delta).unwrap();
    writeln!(txt, "norm_inf = {}", ws.norm_inf).unwrap();
    write_file(dir, "psi_report.txt", &txt)?;

    let grid = &ws.grid;
    let with_eval = ws.phi.is_some() && ws.theta.is_some();
    let mut csv = String::from(if with_eval {
        "level,t,node,x,y,psi,g,phi,theta\n"
    } else {
        "level,t,node,x,y,psi,g\n"
    });
    for n in 0..=grid.steps {
        let t = grid.time(n);
        for i in 0..grid.n_nodes() {
            let p = grid.coords(i);
            write!(
                csv,
                "{n},{t},{i},{},{},{},{}",
                p[0], p[1], ws.psi.slices[n].values[i], ws.g[n]
            )
            .unwrap();
            if with_eval {
                write!(
                    csv,
                    ",{},{}",
                    ws.phi.as_ref().unwrap().slices[n].values[i],
                    ws.theta.as_ref().unwrap().slices[n].values[i]
                )
                .unwrap();
            }
            csv.push('\n');
        }
    }
    write_file(dir, "weights.csv", &csv)
}

/// Per-level trajectory norms (t, norm_a, norm_b, energy). The caller names
/// the second/third columns via `labels`.
pub fn write_trajectory(
    dir: &Path,
    name: &str,
    labels: (&str, &str),
    a: &SpaceTimeField,
    b: &SpaceTimeField,
    energy: Option<&[f64]>,
) -> Result<()> {
    let grid = &a.grid;
    let mut csv = format!("t,{},{},energy\n", labels.0, labels.1);
    for n in 0..=grid.steps {
        let e = energy.map(|e| e[n]).unwrap_or(f64::NAN);
        writeln!(
            csv,
            "{},{},{},{}",
            grid.time(n),
            l2_norm(&a.slices[n]),
            l2_norm(&b.slices[n]),
            e
        )
        .unwrap();
    }
    write_file(dir, name, &csv)
}

/// A space-time field as a flat CSV table (level, t, node, x, y, value).
pub fn write_field(dir: &Path, name: &str, f: &SpaceTimeField) -> Result<()> {
    let grid = &f.grid;
    let mut csv = String::from("level,t,node,x,y,value\n");
    for n in 0..=grid.steps {
        let t = grid.time(n);
        for i in 0..grid.n_nodes() {
            let p = grid.coords(i);
            writeln!(csv, "{n},{t},{i},{},{},{}", p[0], p[1], f.slices[n].values[i]).unwrap();
        }
    }
    write_file(dir, name, &csv)
}

/// HUM outcome as text plus the CG residual history CSV.
pub fn write_hum_report(dir: &Path, prefix: &str, report: &HUMReport) -> Result<()> {
    let mut txt = String::new();
    let status = if report.converged { "CONVERGED" } else { "NON_CONVERGED" };
    writeln!(txt, "status = {status}").unwrap();
    writeln!(txt, "beta = {}", report.beta).unwrap();
    writeln!(txt, "iterations = {}", report.iterations).unwrap();
    writeln!(txt, "terminal_y = {}", report.terminal_y).unwrap();
    writeln!(txt, "terminal_z = {}", report.terminal_z).unwrap();
    writeln!(txt, "control_cost = {}", report.control_cost).unwrap();
    writeln!(txt, "eig_min_estimate = {}", report.eig_min_estimate).unwrap();
    writeln!(txt, "eig_max_estimate = {}", report.eig_max_estimate).unwrap();
    writeln!(txt, "c_obs_estimate = {}", report.c_obs_estimate).unwrap();
    write_file(dir, &format!("{prefix}_report.txt"), &txt)?;

    let mut csv = String::from("iteration,residual\n");
    for (k, r) in report.residual_history.iter().enumerate() {
        writeln!(csv, "{k},{r}").unwrap();
    }
    write_file(dir, &format!("{prefix}_residuals.csv"), &csv)
}

/// Control signal tables (`control_h.csv`, and `control_k.csv` if present).
pub fn write_control(dir: &Path, signal: &ControlSignal) -> Result<()> {
    write_field(dir, "control_h.csv", &signal.h)?;
    if let Some(k) = &signal.k {
        write_field(dir, "control_k.csv", k)?;
    }
    Ok(())
}

/// Cascade-specific summary: phase split, terminal norms, certificate.
pub fn write_cascade_summary(dir: &Path, res: &CascadeResult) -> Result<()> {
    let mut txt = String::new();
    writeln!(txt, "eps = {}", res.eps).unwrap();
    writeln!(txt, "eps_heat = {}", res.eps_heat).unwrap();
    writeln!(txt, "terminal_v = {}", res.terminal_v).unwrap();
    writeln!(txt, "terminal_y = {}", res.terminal_y).unwrap();
    writeln!(txt, "delta0_window = {}", res.delta0_window).unwrap();
    writeln!(txt, "delta0_full = {}", res.delta0_full).unwrap();
    writeln!(txt, "gramian_bound = {}", res.gramian_bound).unwrap();
    writeln!(
        txt,
        "certificate = {}",
        if res.certificate_ok { "PASS" } else { "FAIL" }
    )
    .unwrap();
    write_file(dir, "cascade_summary.txt", &txt)
}

/// Carleman sweep rows as CSV plus a structured-text summary.
pub fn write_carleman(dir: &Path, report: &CarlemanReport) -> Result<()> {
    let mut csv = String::from("lemma,s,lambda,sample,lhs,rhs_source,rhs_local,ratio\n");
    for r in &report.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.lemma, r.s, r.lambda, r.sample, r.lhs, r.rhs_source, r.rhs_local, r.ratio
        )
        .unwrap();
    }
    write_file(dir, "carleman_rows.csv", &csv)?;

    let mut txt = String::new();
    writeln!(txt, "seed = {}", report.seed).unwrap();
    writeln!(txt, "rows = {}", report.rows.len()).unwrap();
    writeln!(txt, "skipped = {}", report.skipped.len()).unwrap();
    writeln!(txt, "endpoint_fraction = {}", report.endpoint_fraction).unwrap();
    for lemma in 0..3 {
        writeln!(
            txt,
            "lemma{} s_threshold = {}  lambda_threshold = {}",
            lemma + 1,
            report.s_threshold[lemma],
            report.lambda_threshold[lemma]
        )
        .unwrap();
    }
    for f in &report.fitted {
        writeln!(txt, "fitted lemma={} s={} lambda={} c_hat={}", f.lemma, f.s, f.lambda, f.c_hat)
            .unwrap();
    }
    for s in &report.skipped {
        writeln!(txt, "skipped: {s}").unwrap();
    }
    write_file(dir, "carleman_summary.txt", &txt)
}

/// Observability estimates: the coupled-system constant and, when a window
/// was configured, the transport-phase cross-check.
pub fn write_observability(
    dir: &Path,
    coupled: &ObsReport,
    transport: Option<(f64, f64, f64)>,
) -> Result<()> {
    let mut txt = String::new();
    writeln!(txt, "c_obs = {}", coupled.c_obs).unwrap();
    writeln!(txt, "lambda_min = {}", coupled.lambda_min).unwrap();
    writeln!(txt, "rayleigh_residual = {}", coupled.rayleigh_residual).unwrap();
    writeln!(txt, "iterations = {}", coupled.iterations).unwrap();
    writeln!(txt, "verdict = {}", coupled.verdict).unwrap();
    if let Some((measured, analytic, bound)) = transport {
        writeln!(txt, "transport_measured = {measured}").unwrap();
        writeln!(txt, "transport_analytic = {analytic}").unwrap();
        writeln!(txt, "transport_upper_bound = {bound}").unwrap();
    }
    write_file(dir, "observability.txt", &txt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn manifest_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), "dim = 1\n", 0.5).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        // sha256 of the exact config text, independent of wall time
        let line = text.lines().next().unwrap();
        assert!(line.starts_with("config_sha256 = "));
        assert_eq!(line.len(), "config_sha256 = ".len() + 64);
        write_manifest(dir.path(), "dim = 1\n", 9.9).unwrap();
        let again = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(text.lines().next(), again.lines().next());
    }

    #[test]
    fn field_csv_round_trips_values() {
        let grid = build_grid(1, &[1.0], &[5], 1.0, 2).unwrap();
        let f = SpaceTimeField::from_fn(&grid, |x, t| x[0] + 10.0 * t);
        let dir = tempfile::tempdir().unwrap();
        write_field(dir.path(), "f.csv", &f).unwrap();
        let text = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "level,t,node,x,y,value");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        let v: f64 = first[5].parse().unwrap();
        assert_eq!(v, f.slices[0].values[0]);
        // one row per (level, node) plus the header
        assert_eq!(text.lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn trajectory_csv_has_norms() {
        let grid = build_grid(1, &[1.0], &[11], 1.0, 4).unwrap();
        let a = SpaceTimeField::from_fn(&grid, |x, _| x[0]);
        let b = SpaceTimeField::zeros(&grid);
        let dir = tempfile::tempdir().unwrap();
        write_trajectory(dir.path(), "traj.csv", ("norm_y", "norm_z"), &a, &b, None).unwrap();
        let text = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 5);
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        let n: f64 = row[1].parse().unwrap();
        assert!((n - l2_norm(&a.slices[0])).abs() < 1e-15);
        assert_eq!(row[2], "0");
    }
}
