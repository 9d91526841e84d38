//! Batch front end: parse a config, run one subcommand, write CSV tables and
//! structured-text reports plus a manifest into the output directory.
//!
//! Exit codes: 0 success, 2 config error, 3 precondition failure,
//! 4 numerical non-convergence.

use clap::{Parser, Subcommand, ValueEnum};
use movctrl::config::{load_config, RunConfig};
use movctrl::control::{
    cascade_control, estimate_observability_constant, estimate_transport_observability,
    hum_control_coupled,
};
use movctrl::error::{Error, Result};
use movctrl::geometry::analyze_geometry;
use movctrl::grid::{l2_norm, ScalarField, SpaceTimeField};
use movctrl::region::{build_moving_region, MovingRegion};
use movctrl::solvers::{energy_balance, solve_coupled_forward, solve_viscoelastic};
use movctrl::weights::{build_psi, eval_weights, verify_psi_properties};
use movctrl::{carleman, io};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "movctrl", about = "Null-control toolkit with a moving control region")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (strict `key = value` text)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir` from the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed` from the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the five admissibility checks on the moving region
    CheckGeometry,
    /// Build the Carleman base weight and verify its structural properties
    BuildWeights,
    /// Integrate the uncontrolled viscoelastic system and its energy balance
    Simulate,
    /// Compute a null control
    Control {
        #[arg(long, value_enum)]
        mode: ControlMode,
    },
    /// Evaluate the three Carleman lemmas over a random adjoint ensemble
    VerifyCarleman,
    /// Estimate the observability constant of the coupled adjoint system
    EstimateObservability,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControlMode {
    /// explicit two-phase cascade (requires unit damping)
    Cascade,
    /// penalized Hilbert Uniqueness Method by conjugate gradient
    Hum,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config { line: 0, msg: "--config PATH is required".into() })?;
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;

    let start = Instant::now();
    match cli.command {
        Command::CheckGeometry => cmd_check_geometry(&cfg, &out)?,
        Command::BuildWeights => cmd_build_weights(&cfg, &out)?,
        Command::Simulate => cmd_simulate(&cfg, &out)?,
        Command::Control { mode } => cmd_control(&cfg, &out, mode)?,
        Command::VerifyCarleman => cmd_verify_carleman(&cfg, &out)?,
        Command::EstimateObservability => cmd_estimate_observability(&cfg, &out)?,
    }
    io::write_manifest(&out, &cfg.source, start.elapsed().as_secs_f64())
}

fn build_region(cfg: &RunConfig) -> Result<MovingRegion> {
    let grid = cfg.grid()?;
    let spec = cfg.region_spec()?;
    build_moving_region(&cfg.flow, &spec, &grid)
}

fn cmd_check_geometry(cfg: &RunConfig, out: &std::path::Path) -> Result<()> {
    let grid = cfg.grid()?;
    let spec = cfg.region_spec()?;
    let report = analyze_geometry(&cfg.flow, &spec, &grid, 2)?;
    io::write_geometry(out, &grid, &report)?;
    println!("pilot_curve (A3a) = {}", report.pilot);
    println!("covering (A3b) = {}", report.covering);
    println!("complement_connected (A3c) = {}", report.connected_outside);
    println!("two_component_phase (A3d) = {}", report.two_components);
    println!("no_escape_curve (A3e) = {}", report.escape);
    println!("all_pass = {}", report.all_pass());
    Ok(())
}

fn cmd_build_weights(cfg: &RunConfig, out: &std::path::Path) -> Result<()> {
    let grid = cfg.grid()?;
    let spec = cfg.region_spec()?;
    let report = analyze_geometry(&cfg.flow, &spec, &grid, 2)?;
    if !report.all_pass() {
        return Err(Error::Precondition(
            "all five geometry checks must pass before building weights".into(),
        ));
    }
    let region = build_moving_region(&cfg.flow, &spec, &grid)?;
    let mut ws = build_psi(&region, &report)?;
    let props = verify_psi_properties(&ws, &region);
    // evaluate phi/theta at the first configured point so the CSV carries them
    if let (Some(&lambda), Some(&s)) = (cfg.lambda_grid.first(), cfg.s_grid.first()) {
        eval_weights(&mut ws, lambda, s)?;
    }
    io::write_weights(out, &ws, &props)?;
    println!("properties_all_pass = {}", props.all_pass());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, out: &std::path::Path) -> Result<()> {
    let region = build_region(cfg)?;
    let grid = &region.grid;
    let spec = cfg.problem_spec(grid)?;
    let y0 = cfg.initial_y.build(grid);
    let y1 = cfg.initial_z.build(grid);
    let h = SpaceTimeField::zeros(grid);
    let traj = solve_viscoelastic(&y0, &y1, &spec, &region, &h)?;
    let (energy, defect) = energy_balance(&traj, &spec, &region, &h)?;
    io::write_trajectory(out, "trajectory.csv", ("norm_y", "norm_yt"), &traj.y, &traj.yt, Some(&energy))?;
    let m = grid.steps;
    let txt = format!(
        "energy_defect = {defect}\nterminal_y = {}\nterminal_yt = {}\n",
        l2_norm(&traj.y.slices[m]),
        l2_norm(&traj.yt.slices[m])
    );
    std::fs::write(out.join("simulate_report.txt"), txt)?;
    println!("energy_defect = {defect}");
    Ok(())
}

fn cmd_control(cfg: &RunConfig, out: &std::path::Path, mode: ControlMode) -> Result<()> {
    let region = build_region(cfg)?;
    let grid = &region.grid;
    let y0 = cfg.initial_y.build(grid);
    let z0 = cfg.initial_z.build(grid);
    match mode {
        ControlMode::Cascade => {
            if !cfg.unit_damping() {
                return Err(Error::Precondition(
                    "cascade control requires unit damping (damping = constant 1.0)".into(),
                ));
            }
            // the parabolic component of the split is v = y + y_t, with the
            // configured initial_z playing the velocity y_t(0)
            let mut v0 = ScalarField { grid: grid.clone(), values: y0.values.clone() };
            v0.axpy(1.0, &z0);
            let res = cascade_control(&v0, &y0, &region, cfg.eps, cfg.beta, cfg.cg_tol, cfg.cg_cap)?;
            io::write_control(out, &res.signal)?;
            io::write_hum_report(out, "hum", &res.heat_report)?;
            io::write_cascade_summary(out, &res)?;
            io::write_trajectory(out, "trajectory.csv", ("norm_v", "norm_y"), &res.v, &res.y, None)?;
            println!("terminal_v = {}", res.terminal_v);
            println!("terminal_y = {}", res.terminal_y);
            println!("certificate = {}", if res.certificate_ok { "PASS" } else { "FAIL" });
        }
        ControlMode::Hum => {
            let spec = cfg.problem_spec(grid)?;
            let (signal, report) =
                hum_control_coupled(&y0, &z0, &spec, &region, cfg.beta, cfg.cg_tol, cfg.cg_cap)?;
            io::write_control(out, &signal)?;
            io::write_hum_report(out, "hum", &report)?;
            let traj = solve_coupled_forward(&y0, &z0, &spec, &region, &signal.h)?;
            io::write_trajectory(out, "trajectory.csv", ("norm_y", "norm_z"), &traj.y, &traj.z, None)?;
            println!("status = {}", if report.converged { "CONVERGED" } else { "NON_CONVERGED" });
            println!("terminal_y = {}", report.terminal_y);
            println!("terminal_z = {}", report.terminal_z);
            println!("control_cost = {}", report.control_cost);
        }
    }
    Ok(())
}

fn cmd_verify_carleman(cfg: &RunConfig, out: &std::path::Path) -> Result<()> {
    let grid = cfg.grid()?;
    let spec = cfg.region_spec()?;
    let report = analyze_geometry(&cfg.flow, &spec, &grid, 2)?;
    if !report.all_pass() {
        return Err(Error::Precondition(
            "all five geometry checks must pass before the Carleman sweep".into(),
        ));
    }
    let region = build_moving_region(&cfg.flow, &spec, &grid)?;
    let ws = build_psi(&region, &report)?;
    let problem = cfg.problem_spec(&grid)?;
    let sweep = carleman::sweep(
        &problem,
        &region,
        &ws,
        cfg.ensemble,
        &cfg.s_grid,
        &cfg.lambda_grid,
        cfg.seed,
    )?;
    io::write_carleman(out, &sweep)?;
    println!("rows = {}", sweep.rows.len());
    println!("endpoint_fraction = {}", sweep.endpoint_fraction);
    Ok(())
}

fn cmd_estimate_observability(cfg: &RunConfig, out: &std::path::Path) -> Result<()> {
    let region = build_region(cfg)?;
    let spec = cfg.problem_spec(&region.grid)?;
    let coupled = estimate_observability_constant(&spec, &region)?;
    let transport = match cfg.eps {
        Some(eps) => Some(estimate_transport_observability(&region, eps)?),
        None => None,
    };
    io::write_observability(out, &coupled, transport)?;
    println!("c_obs = {}", coupled.c_obs);
    println!("verdict = {}", coupled.verdict);
    Ok(())
}
