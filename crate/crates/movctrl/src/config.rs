//! Run configuration: a strict, flat `key = value` text format.
//!
//! Every key is validated against a fixed schema; unknown or duplicate keys
//! are rejected with the offending line number, as are malformed values, so a
//! config either parses to a fully validated [`RunConfig`] or fails loudly.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::grid::{build_grid, Grid, ProblemSpec, ScalarField};
use crate::region::{Region, RegionSpec, Shape};
use std::collections::HashMap;

/// Damping coefficient b(x) of the system, as configured.
#[derive(Debug, Clone, PartialEq)]
pub enum DampingSpec {
    Constant(f64),
    /// b(x) = offset + amplitude * sin(2 pi freq x)
    Sinusoid { offset: f64, amplitude: f64, freq: f64 },
    /// one value per interior grid node
    Table(Vec<f64>),
}

/// Initial datum shapes available from a config file.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    Zero,
    /// Dirichlet eigenmode sin(k pi x / L) (times sin(l pi y / L_y) in 2D)
    Mode { k: usize, l: usize },
    /// smooth compactly supported bump of the given radius
    Bump { center: [f64; 2], radius: f64 },
}

impl InitialData {
    pub fn build(&self, grid: &Grid) -> ScalarField {
        match self {
            InitialData::Zero => ScalarField::zeros(grid),
            InitialData::Mode { k, l } => ScalarField::from_fn(grid, |x| {
                let mut v =
                    (*k as f64 * std::f64::consts::PI * x[0] / grid.extent[0]).sin();
                if grid.dim == 2 {
                    v *= (*l as f64 * std::f64::consts::PI * x[1] / grid.extent[1]).sin();
                }
                v
            }),
            InitialData::Bump { center, radius } => ScalarField::from_fn(grid, |x| {
                let mut r2 = (x[0] - center[0]).powi(2);
                if grid.dim == 2 {
                    r2 += (x[1] - center[1]).powi(2);
                }
                let u = r2 / (radius * radius);
                if u < 1.0 {
                    (-1.0 / (1.0 - u)).exp() * std::f64::consts::E
                } else {
                    0.0
                }
            }),
        }
    }
}

/// Fully validated run configuration shared by every subcommand.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dim: usize,
    pub extent: Vec<f64>,
    pub nodes: Vec<usize>,
    pub t_final: f64,
    pub steps: usize,
    pub flow: FlowField,
    pub region_shapes: Vec<Shape>,
    pub region_margin: f64,
    pub damping: DampingSpec,
    pub initial_y: InitialData,
    pub initial_z: InitialData,
    pub beta: f64,
    pub cg_tol: f64,
    pub cg_cap: usize,
    /// optional transport-phase start for the cascade / transport bound
    pub eps: Option<f64>,
    pub ensemble: usize,
    pub s_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub out_dir: Option<String>,
    /// the raw config text, kept for hashing into the manifest
    pub source: String,
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.dim, &self.extent, &self.nodes, self.t_final, self.steps)
    }

    pub fn region_spec(&self) -> Result<RegionSpec> {
        RegionSpec::from_inner(Region::new(self.region_shapes.clone()), self.region_margin)
    }

    pub fn problem_spec(&self, grid: &Grid) -> Result<ProblemSpec> {
        let damping = match &self.damping {
            DampingSpec::Constant(b) => ScalarField::from_fn(grid, |_| *b),
            DampingSpec::Sinusoid { offset, amplitude, freq } => ScalarField::from_fn(grid, |x| {
                offset + amplitude * (2.0 * std::f64::consts::PI * freq * x[0]).sin()
            }),
            DampingSpec::Table(values) => {
                if values.len() != grid.n_nodes() {
                    return Err(Error::Precondition(format!(
                        "damping table has {} entries but the grid has {} interior nodes",
                        values.len(),
                        grid.n_nodes()
                    )));
                }
                ScalarField { grid: grid.clone(), values: values.clone() }
            }
        };
        ProblemSpec::new(damping)
    }

    /// True when the damping is identically one (the cascade prerequisite).
    pub fn unit_damping(&self) -> bool {
        match &self.damping {
            DampingSpec::Constant(b) => *b == 1.0,
            DampingSpec::Sinusoid { offset, amplitude, .. } => {
                *offset == 1.0 && *amplitude == 0.0
            }
            DampingSpec::Table(v) => v.iter().all(|b| *b == 1.0),
        }
    }
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

struct RawEntry {
    line: usize,
    value: String,
    used: bool,
}

/// One `key = value` per line; `#` starts a comment; blank lines ignored.
fn split_entries(text: &str) -> Result<HashMap<String, RawEntry>> {
    let mut map = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| cfg_err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(cfg_err(line, "empty key"));
        }
        if value.is_empty() {
            return Err(cfg_err(line, format!("key `{key}` has an empty value")));
        }
        if map.contains_key(&key) {
            return Err(cfg_err(line, format!("duplicate key `{key}`")));
        }
        map.insert(key, RawEntry { line, value, used: false });
    }
    Ok(map)
}

struct Entries(HashMap<String, RawEntry>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.0.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn require(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key)
            .ok_or_else(|| cfg_err(0, format!("missing required key `{key}`")))
    }

    fn finish(self) -> Result<()> {
        let mut unused: Vec<(usize, String)> = self
            .0
            .into_iter()
            .filter(|(_, e)| !e.used)
            .map(|(k, e)| (e.line, k))
            .collect();
        unused.sort();
        if let Some((line, key)) = unused.first() {
            return Err(cfg_err(*line, format!("unknown key `{key}`")));
        }
        Ok(())
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| cfg_err(line, format!("key `{key}`: `{v}` is not a number")))
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| cfg_err(line, format!("key `{key}`: `{v}` is not a nonnegative integer")))
}

fn parse_f64_list(line: usize, key: &str, v: &str, want: Option<usize>) -> Result<Vec<f64>> {
    let out: Vec<f64> = v
        .split_whitespace()
        .map(|t| parse_f64(line, key, t))
        .collect::<Result<_>>()?;
    if let Some(n) = want {
        if out.len() != n {
            return Err(cfg_err(line, format!("key `{key}`: expected {n} numbers, got {}", out.len())));
        }
    }
    Ok(out)
}

fn parse_shape(line: usize, dim: usize, text: &str) -> Result<Shape> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let nums = |want: usize| -> Result<Vec<f64>> {
        if tokens.len() != want + 1 {
            return Err(cfg_err(
                line,
                format!("shape `{}` takes {want} numbers, got {}", tokens[0], tokens.len() - 1),
            ));
        }
        tokens[1..].iter().map(|t| parse_f64(line, "region", t)).collect()
    };
    match tokens.first() {
        Some(&"interval") => {
            if dim != 1 {
                return Err(cfg_err(line, "shape `interval` needs dim = 1"));
            }
            let v = nums(2)?;
            if v[0] >= v[1] {
                return Err(cfg_err(line, "interval endpoints must be increasing"));
            }
            Ok(Shape::Interval { a: v[0], b: v[1] })
        }
        Some(&"box") => {
            if dim != 2 {
                return Err(cfg_err(line, "shape `box` needs dim = 2"));
            }
            let v = nums(4)?;
            if v[0] >= v[2] || v[1] >= v[3] {
                return Err(cfg_err(line, "box corners must be increasing per axis"));
            }
            Ok(Shape::Rect { min: [v[0], v[1]], max: [v[2], v[3]] })
        }
        Some(&"ball") => {
            if dim != 2 {
                return Err(cfg_err(line, "shape `ball` needs dim = 2"));
            }
            let v = nums(3)?;
            if v[2] <= 0.0 {
                return Err(cfg_err(line, "ball radius must be positive"));
            }
            Ok(Shape::Ball { center: [v[0], v[1]], radius: v[2] })
        }
        Some(other) => Err(cfg_err(line, format!("unknown shape `{other}`"))),
        None => Err(cfg_err(line, "empty shape in `region`")),
    }
}

fn parse_initial(line: usize, key: &str, dim: usize, v: &str) -> Result<InitialData> {
    let tokens: Vec<&str> = v.split_whitespace().collect();
    match tokens.as_slice() {
        ["zero"] => Ok(InitialData::Zero),
        ["mode", rest @ ..] => {
            if rest.len() != dim {
                return Err(cfg_err(line, format!("key `{key}`: `mode` takes {dim} indices")));
            }
            let k = parse_usize(line, key, rest[0])?;
            let l = if dim == 2 { parse_usize(line, key, rest[1])? } else { 1 };
            if k == 0 || l == 0 {
                return Err(cfg_err(line, format!("key `{key}`: mode indices start at 1")));
            }
            Ok(InitialData::Mode { k, l })
        }
        ["bump", rest @ ..] => {
            if rest.len() != dim + 1 {
                return Err(cfg_err(
                    line,
                    format!("key `{key}`: `bump` takes {} numbers (center, radius)", dim + 1),
                ));
            }
            let c0 = parse_f64(line, key, rest[0])?;
            let c1 = if dim == 2 { parse_f64(line, key, rest[1])? } else { 0.0 };
            let r = parse_f64(line, key, rest[dim])?;
            if r <= 0.0 {
                return Err(cfg_err(line, format!("key `{key}`: bump radius must be positive")));
            }
            Ok(InitialData::Bump { center: [c0, c1], radius: r })
        }
        _ => Err(cfg_err(line, format!("key `{key}`: expected zero | mode | bump, got `{v}`"))),
    }
}

/// Parse and validate a config from its text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut e = Entries(split_entries(text)?);

    let (line, v) = e.require("dim")?;
    let dim = parse_usize(line, "dim", &v)?;
    if dim != 1 && dim != 2 {
        return Err(cfg_err(line, format!("key `dim`: must be 1 or 2, got {dim}")));
    }

    let (line, v) = e.require("extent")?;
    let extent = parse_f64_list(line, "extent", &v, Some(dim))?;
    let (line, v) = e.require("nodes")?;
    let nodes: Vec<usize> = v
        .split_whitespace()
        .map(|t| parse_usize(line, "nodes", t))
        .collect::<Result<_>>()?;
    if nodes.len() != dim {
        return Err(cfg_err(line, format!("key `nodes`: expected {dim} counts, got {}", nodes.len())));
    }
    let (line, v) = e.require("t_final")?;
    let t_final = parse_f64(line, "t_final", &v)?;
    let (line, v) = e.require("steps")?;
    let steps = parse_usize(line, "steps", &v)?;

    let (fl_line, fl) = e.require("flow")?;
    let flow = match fl.as_str() {
        "constant" => {
            let (line, v) = e.require("flow_velocity")?;
            let vel = parse_f64_list(line, "flow_velocity", &v, Some(2))?;
            FlowField::Constant { velocity: [vel[0], vel[1]] }
        }
        "oscillating" => {
            let (line, v) = e.require("flow_velocity")?;
            let vel = parse_f64_list(line, "flow_velocity", &v, Some(2))?;
            let (line, v) = e.require("flow_period")?;
            let period = parse_f64(line, "flow_period", &v)?;
            if period <= 0.0 {
                return Err(cfg_err(line, "key `flow_period`: must be positive"));
            }
            FlowField::Oscillating { velocity: [vel[0], vel[1]], period }
        }
        "rotation" => {
            let (line, v) = e.require("flow_center")?;
            let c = parse_f64_list(line, "flow_center", &v, Some(2))?;
            let (line, v) = e.require("flow_omega")?;
            let omega = parse_f64(line, "flow_omega", &v)?;
            FlowField::Rotation { center: [c[0], c[1]], omega }
        }
        other => {
            return Err(cfg_err(
                fl_line,
                format!("key `flow`: expected constant | oscillating | rotation, got `{other}`"),
            ))
        }
    };

    let (line, v) = e.require("region")?;
    let region_shapes: Vec<Shape> = v
        .split(';')
        .map(|s| parse_shape(line, dim, s.trim()))
        .collect::<Result<_>>()?;
    let (line, v) = e.require("region_margin")?;
    let region_margin = parse_f64(line, "region_margin", &v)?;
    if region_margin <= 0.0 {
        return Err(cfg_err(line, "key `region_margin`: must be positive"));
    }

    let damping = match e.take("damping") {
        None => DampingSpec::Constant(1.0),
        Some((line, v)) => {
            let tokens: Vec<&str> = v.split_whitespace().collect();
            match tokens.as_slice() {
                ["constant", b] => DampingSpec::Constant(parse_f64(line, "damping", b)?),
                ["sinusoid", o, a, f] => DampingSpec::Sinusoid {
                    offset: parse_f64(line, "damping", o)?,
                    amplitude: parse_f64(line, "damping", a)?,
                    freq: parse_f64(line, "damping", f)?,
                },
                ["table", rest @ ..] if !rest.is_empty() => DampingSpec::Table(
                    rest.iter().map(|t| parse_f64(line, "damping", t)).collect::<Result<_>>()?,
                ),
                _ => {
                    return Err(cfg_err(
                        line,
                        format!("key `damping`: expected constant | sinusoid | table, got `{v}`"),
                    ))
                }
            }
        }
    };

    let initial_y = match e.take("initial_y") {
        None => InitialData::Mode { k: 1, l: 1 },
        Some((line, v)) => parse_initial(line, "initial_y", dim, &v)?,
    };
    let initial_z = match e.take("initial_z") {
        None => InitialData::Zero,
        Some((line, v)) => parse_initial(line, "initial_z", dim, &v)?,
    };

    let beta = match e.take("beta") {
        None => 1e-8,
        Some((line, v)) => {
            let b = parse_f64(line, "beta", &v)?;
            if b <= 0.0 {
                return Err(cfg_err(line, "key `beta`: must be positive"));
            }
            b
        }
    };
    let cg_tol = match e.take("cg_tol") {
        None => 1e-9,
        Some((line, v)) => parse_f64(line, "cg_tol", &v)?,
    };
    let cg_cap = match e.take("cg_cap") {
        None => 200,
        Some((line, v)) => parse_usize(line, "cg_cap", &v)?,
    };
    let eps = match e.take("eps") {
        None => None,
        Some((line, v)) => {
            let x = parse_f64(line, "eps", &v)?;
            if !(x > 0.0 && x < t_final) {
                return Err(cfg_err(line, "key `eps`: must lie strictly inside (0, t_final)"));
            }
            Some(x)
        }
    };
    let ensemble = match e.take("ensemble") {
        None => 8,
        Some((line, v)) => parse_usize(line, "ensemble", &v)?,
    };
    let s_grid = match e.take("s_grid") {
        None => vec![2.0, 4.0, 8.0],
        Some((line, v)) => parse_f64_list(line, "s_grid", &v, None)?,
    };
    let lambda_grid = match e.take("lambda_grid") {
        None => vec![1.0, 2.0, 3.0],
        Some((line, v)) => parse_f64_list(line, "lambda_grid", &v, None)?,
    };
    let seed = match e.take("seed") {
        None => 0,
        Some((line, v)) => v
            .parse::<u64>()
            .map_err(|_| cfg_err(line, format!("key `seed`: `{v}` is not a u64")))?,
    };
    let out_dir = e.take("out_dir").map(|(_, v)| v);

    e.finish()?;

    let cfg = RunConfig {
        dim,
        extent,
        nodes,
        t_final,
        steps,
        flow,
        region_shapes,
        region_margin,
        damping,
        initial_y,
        initial_z,
        beta,
        cg_tol,
        cg_cap,
        eps,
        ensemble,
        s_grid,
        lambda_grid,
        seed,
        out_dir,
        source: text.to_string(),
    };
    // surface grid-level inconsistencies (bad extents, too few nodes, zero
    // horizon) at parse time so every subcommand starts from a valid setup
    cfg.grid()?;
    cfg.region_spec()?;
    Ok(cfg)
}

/// Read and parse a config file.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
