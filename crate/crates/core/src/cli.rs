//! Batch front end: a JSON run configuration, dotted overrides and one
//! subcommand per pipeline stage. Every command writes its results under the
//! configured output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{integrate, nmse, order_decomposition, spectral_trajectory, uniform_times, IntegratorConfig};
use crate::error::{Error, Result};
use crate::koopman::{compute_identity_modes, KoopmanModeTable, ModeSupport};
use crate::manifold::{
    default_horizon, detect_fold, max_ray_nmse, project_point, sample_mesh, validity_radius, ValidityOptions,
};
use crate::models::{build_2dof_cubic, build_chain, ChainParams, TwoDofParams};
use crate::polyfield::PolynomialVectorField;
use crate::spectral::SpectralDecomposition;

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides `output_dir` of the configuration; command-line flags still win.
pub const OUTPUT_DIR_ENV: &str = "KNNM_OUTPUT_DIR";

pub const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub model: ModelConfig,
    /// `in-phase`, `out-of-phase`, `rank:N` or `index:I,J`.
    pub mode: String,
    pub order: u32,
    /// Mesh radius; `null` uses the measured validity radius.
    pub radius: Option<f64>,
    /// `[n_r, n_theta]`.
    pub grid: [usize; 2],
    pub validation: ValidationConfig,
    pub integrator: IntegratorConfig,
    pub trajectory: TrajectoryConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            model: ModelConfig::TwoDofCubic(TwoDofParams::default()),
            mode: "in-phase".into(),
            order: 50,
            radius: None,
            grid: [41, 120],
            validation: ValidationConfig::default(),
            integrator: IntegratorConfig::default(),
            trajectory: TrajectoryConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    TwoDofCubic(TwoDofParams),
    Chain(ChainParams),
    Polynomial(PolynomialConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialConfig {
    pub dimension: usize,
    pub terms: Vec<TermConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    /// Zero-based output component.
    pub component: usize,
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<PolynomialVectorField> {
        let wrap = |e: Error| Error::config("model", e.to_string());
        match self {
            ModelConfig::TwoDofCubic(p) => build_2dof_cubic(p).map_err(wrap),
            ModelConfig::Chain(p) => build_chain(p).map_err(wrap),
            ModelConfig::Polynomial(p) => PolynomialVectorField::from_terms(
                p.dimension,
                p.terms.iter().map(|t| (t.component, t.coefficient, t.exponents.clone())),
            )
            .map_err(wrap),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    /// Percent.
    pub nmse_threshold: f64,
    /// Seconds; `null` means ten periods of the selected pair.
    pub horizon: Option<f64>,
    pub samples: usize,
    pub rays: usize,
    /// Upper end of the validity-radius search.
    pub max_radius: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            nmse_threshold: 1.0,
            horizon: None,
            samples: 1000,
            rays: 8,
            max_radius: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// `[re, im]` of the initial eigenfunction value.
    pub xi0: Option<[f64; 2]>,
    /// Initial state, projected onto the manifold.
    pub x0: Option<Vec<f64>>,
    /// Orders written as separate trajectories.
    pub orders: Vec<u32>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            xi0: None,
            x0: None,
            orders: vec![1, 3, 5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSelection {
    /// Conjugate pair by ascending frequency, zero-based.
    Rank(usize),
    Index(usize, usize),
}

impl FromStr for ModeSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("mode", format!("`{s}`: expected in-phase, out-of-phase, rank:N or index:I,J"));
        match s {
            "in-phase" => return Ok(ModeSelection::Rank(0)),
            "out-of-phase" => return Ok(ModeSelection::Rank(1)),
            _ => {}
        }
        if let Some(r) = s.strip_prefix("rank:") {
            return r.trim().parse().map(ModeSelection::Rank).map_err(|_| bad());
        }
        if let Some(r) = s.strip_prefix("index:") {
            let parts: Vec<&str> = r.split(',').map(str::trim).collect();
            if let [i, j] = parts[..] {
                return Ok(ModeSelection::Index(
                    i.parse().map_err(|_| bad())?,
                    j.parse().map_err(|_| bad())?,
                ));
            }
        }
        Err(bad())
    }
}

impl ModeSelection {
    pub fn resolve(&self, dec: &SpectralDecomposition) -> Result<(usize, usize)> {
        match *self {
            ModeSelection::Rank(r) => {
                let pairs = dec.pairs_by_frequency();
                pairs.get(r).copied().ok_or_else(|| {
                    Error::config("mode", format!("rank {r} requested but the system has {} conjugate pairs", pairs.len()))
                })
            }
            ModeSelection::Index(i, j) => {
                if dec.is_conjugate_pair((i, j)) {
                    Ok((i, j))
                } else {
                    Err(Error::config(
                        "mode",
                        format!("eigenvalues ({i}, {j}) are not a conjugate pair"),
                    ))
                }
            }
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::config("schema", format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if !(1..=100).contains(&self.order) {
            return Err(Error::config("order", format!("{} outside 1..=100", self.order)));
        }
        ModeSelection::from_str(&self.mode)?;
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config("radius", "must be positive"));
            }
        }
        let [n_r, n_t] = self.grid;
        if n_r < 2 || n_t < 4 || n_r.saturating_mul(n_t) > MAX_GRID_POINTS {
            return Err(Error::config(
                "grid",
                format!("need n_r >= 2, n_theta >= 4 and at most {MAX_GRID_POINTS} points"),
            ));
        }
        let v = &self.validation;
        if !(v.nmse_threshold > 0.0) {
            return Err(Error::config("validation.nmse_threshold", "must be positive"));
        }
        if let Some(h) = v.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("validation.horizon", "must be positive"));
            }
        }
        if v.samples < 2 {
            return Err(Error::config("validation.samples", "need at least two samples"));
        }
        if v.rays < 1 {
            return Err(Error::config("validation.rays", "need at least one ray"));
        }
        if !(v.max_radius > 1e-3) {
            return Err(Error::config("validation.max_radius", "must exceed 1e-3"));
        }
        self.integrator
            .validate()
            .map_err(|_| Error::config("integrator", "rel_tol, abs_tol and max_step must be positive"))?;
        let t = &self.trajectory;
        if t.xi0.is_some() && t.x0.is_some() {
            return Err(Error::config("trajectory", "give either xi0 or x0, not both"));
        }
        Ok(())
    }

    fn check_orders(&self) -> Result<()> {
        if let Some(o) = self.trajectory.orders.iter().find(|o| **o == 0 || **o > self.order) {
            return Err(Error::config("trajectory.orders", format!("order {o} outside 1..={}", self.order)));
        }
        Ok(())
    }
}

/// Applies `key=value` to a JSON document. `value` is parsed as JSON and
/// taken as a string when that fails; intermediate objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::config(key, "empty path segment"));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(key, format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| json!({}));
    }
    unreachable!("split yields at least one segment")
}

/// Config file (or defaults), then the environment, then `overrides` in
/// order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(RunConfig::default())?,
    };
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        let dir = dir.to_string_lossy().into_owned();
        apply_override(&mut doc, &format!("output_dir={}", Value::String(dir)))?;
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::config("config", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(name = "knnm", version, about = "Nonlinear normal modes from Koopman eigenfunction expansions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues, natural frequencies and damping ratios of the Jacobian.
    Eigen(CommonArgs),
    /// Koopman modes of the selected pair.
    Modes(CommonArgs),
    /// Manifold mesh with PDE residuals and a fold scan.
    Manifold(ManifoldArgs),
    /// Expansion, reference and per-order trajectories with the NMSE.
    Trajectory(TrajectoryArgs),
    /// Resonance, symmetry and NMSE checks with a JSON verdict.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set model.k_b=4.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub order: Option<u32>,
    /// in-phase, out-of-phase, rank:N or index:I,J.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ManifoldArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, conflicts_with = "auto_radius")]
    pub radius: Option<f64>,
    /// Use the measured validity radius.
    #[arg(long)]
    pub auto_radius: bool,
    /// Polar resolution `NRxNT`.
    #[arg(long, value_name = "NRxNT")]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, requires = "xi0_im", conflicts_with = "x0", allow_hyphen_values = true)]
    pub xi0_re: Option<f64>,
    #[arg(long, requires = "xi0_re", allow_hyphen_values = true)]
    pub xi0_im: Option<f64>,
    /// Initial state `a,b,c,...`, projected onto the manifold.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<u32>>,
}

fn json_override(key: &str, value: impl Serialize) -> String {
    format!("{key}={}", serde_json::to_string(&value).expect("serializable"))
}

impl CommonArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = self.set.clone();
        if let Some(o) = self.order {
            out.push(json_override("order", o));
        }
        if let Some(m) = &self.mode {
            out.push(json_override("mode", m));
        }
        if let Some(d) = &self.output_dir {
            out.push(json_override("output_dir", d));
        }
        out
    }
}

fn parse_grid(s: &str) -> Result<[usize; 2]> {
    let bad = || Error::config("grid", format!("`{s}`: expected NRxNT"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok([a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?])
}

impl Cli {
    pub fn config(&self) -> Result<RunConfig> {
        let (common, extra) = match &self.command {
            Command::Eigen(c) | Command::Modes(c) | Command::Validate(c) => (c, Vec::new()),
            Command::Manifold(m) => {
                let mut extra = Vec::new();
                if let Some(r) = m.radius {
                    extra.push(json_override("radius", r));
                }
                if m.auto_radius {
                    extra.push("radius=null".to_string());
                }
                if let Some(g) = &m.grid {
                    extra.push(json_override("grid", parse_grid(g)?));
                }
                (&m.common, extra)
            }
            Command::Trajectory(t) => {
                let mut extra = Vec::new();
                if let (Some(re), Some(im)) = (t.xi0_re, t.xi0_im) {
                    extra.push(json_override("trajectory.xi0", [re, im]));
                    extra.push("trajectory.x0=null".into());
                }
                if let Some(x0) = &t.x0 {
                    extra.push(json_override("trajectory.x0", x0));
                    extra.push("trajectory.xi0=null".into());
                }
                if let Some(h) = t.horizon {
                    extra.push(json_override("validation.horizon", h));
                }
                if let Some(n) = t.samples {
                    extra.push(json_override("validation.samples", n));
                }
                if let Some(o) = &t.orders {
                    extra.push(json_override("trajectory.orders", o));
                }
                (&t.common, extra)
            }
        };
        let mut overrides = common.overrides();
        overrides.extend(extra);
        load_config(common.config.as_deref(), &overrides)
    }

    pub fn run(&self) -> Result<()> {
        let cfg = self.config()?;
        let mut out = std::io::stdout().lock();
        match &self.command {
            Command::Eigen(_) => run_eigen(&cfg, &mut out),
            Command::Modes(_) => run_modes(&cfg, &mut out),
            Command::Manifold(_) => run_manifold(&cfg, &mut out),
            Command::Trajectory(_) => run_trajectory(&cfg, &mut out),
            Command::Validate(_) => run_validate(&cfg, &mut out),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status, reporting errors on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.run() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Pipeline {
    field: PolynomialVectorField,
    dec: SpectralDecomposition,
    pair: (usize, usize),
}

impl Pipeline {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let field = cfg.model.build()?;
        let dec = SpectralDecomposition::decompose(&field.jacobian_at_origin())?;
        let pair = ModeSelection::from_str(&cfg.mode)?.resolve(&dec)?;
        Ok(Pipeline { field, dec, pair })
    }

    fn modes(&self, order: u32) -> Result<KoopmanModeTable> {
        compute_identity_modes(&self.field, &self.dec, ModeSupport::Pair(self.pair.0, self.pair.1), order)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn complex_json(z: Complex64) -> Value {
    json!([z.re, z.im])
}

fn horizon(cfg: &RunConfig, table: &KoopmanModeTable) -> f64 {
    cfg.validation.horizon.unwrap_or_else(|| default_horizon(table))
}

fn run_eigen(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    let p = Pipeline::new(cfg)?;
    let mut w = create(&cfg.output_dir, "eigen.csv")?;
    p.dec.write_csv(&mut w)?;
    w.flush()?;
    writeln!(out, "{:>5} {:>24} {:>12} {:>14}", "index", "eigenvalue", "freq_rad_s", "damping_ratio")?;
    for (i, l) in p.dec.eigenvalues().iter().enumerate() {
        let sign = if l.im < 0.0 { '-' } else { '+' };
        writeln!(
            out,
            "{i:>5} {:>24} {:>12.6} {:>14.6}",
            format!("{:.6} {sign} i{:.6}", l.re, l.im.abs()),
            l.norm(),
            -l.re / l.norm()
        )?;
    }
    let pairs: Vec<String> = p.dec.pairs_by_frequency().iter().map(|(a, b)| format!("({a},{b})")).collect();
    writeln!(out, "conjugate pairs by frequency: {}", pairs.join(" "))?;
    writeln!(out, "selected pair: ({},{})", p.pair.0, p.pair.1)?;
    Ok(())
}

fn run_modes(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    let p = Pipeline::new(cfg)?;
    let table = p.modes(cfg.order)?;
    let mut w = create(&cfg.output_dir, "modes.csv")?;
    table.write_csv(&mut w)?;
    w.flush()?;
    writeln!(
        out,
        "pair ({},{}) lambda = {} order {}: {} modes",
        p.pair.0,
        p.pair.1,
        table.lambda(),
        table.max_order(),
        table.indices().len()
    )?;
    for nr in table.warnings() {
        writeln!(
            out,
            "warning: near resonance k = ({}, {}) with eigenvalue {} (gap {:.3e})",
            nr.k.0, nr.k.1, nr.eigen_index, nr.gap
        )?;
    }
    Ok(())
}

fn validity_options(cfg: &RunConfig) -> ValidityOptions {
    ValidityOptions {
        rays: cfg.validation.rays,
        samples: cfg.validation.samples,
        r_max: cfg.validation.max_radius,
        ..ValidityOptions::default()
    }
}

fn run_manifold(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    let p = Pipeline::new(cfg)?;
    let table = p.modes(cfg.order)?;
    let (radius, source) = match cfg.radius {
        Some(r) => (r, "config"),
        None => (
            validity_radius(
                &table,
                &p.field,
                &cfg.integrator,
                cfg.validation.nmse_threshold,
                horizon(cfg, &table),
                &validity_options(cfg),
            )?,
            "validity",
        ),
    };
    let mesh = sample_mesh(&table, &p.field, radius, cfg.grid[0], cfg.grid[1])?;
    let mut w = create(&cfg.output_dir, "mesh.csv")?;
    mesh.write_csv(&mut w)?;
    w.flush()?;

    // First displacement against first velocity for mechanical layouts.
    let n = p.field.dimension();
    let fold = if n % 2 == 0 && n >= 2 {
        detect_fold(&table, &mesh, (0, n / 2), 0.1, 1e-3)?
    } else {
        None
    };
    let summary = json!({
        "pair": [p.pair.0, p.pair.1],
        "lambda": complex_json(table.lambda()),
        "order": table.max_order(),
        "radius": radius,
        "radius_source": source,
        "grid": cfg.grid,
        "max_pde_residual": mesh.max_pde_residual(),
        "fold": fold.as_ref().map(|f| json!({
            "coordinates": [0, n / 2],
            "a": [f.a.0, f.a.1],
            "b": [f.b.0, f.b.1],
            "parameter_distance": f.parameter_distance,
            "projection_distance": f.projection_distance,
        })),
    });
    write_json(&cfg.output_dir, "manifold.json", &summary)?;
    writeln!(
        out,
        "radius {radius:.6} ({source}), {} points, max PDE residual {:.3e}, fold {}",
        mesh.points.len(),
        mesh.max_pde_residual(),
        if fold.is_some() { "detected" } else { "not detected" }
    )?;
    Ok(())
}

struct Start {
    xi0: Complex64,
    projection_residual: Option<f64>,
}

fn start_point(cfg: &RunConfig, table: &KoopmanModeTable) -> Result<Option<Start>> {
    if let Some([re, im]) = cfg.trajectory.xi0 {
        return Ok(Some(Start {
            xi0: Complex64::new(re, im),
            projection_residual: None,
        }));
    }
    if let Some(x0) = &cfg.trajectory.x0 {
        if x0.len() != table.dimension() {
            return Err(Error::config(
                "trajectory.x0",
                format!("expected {} components, found {}", table.dimension(), x0.len()),
            ));
        }
        let inv = project_point(table, x0, None)?;
        return Ok(Some(Start {
            xi0: inv.xi(),
            projection_residual: Some(inv.residual),
        }));
    }
    Ok(None)
}

fn run_trajectory(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    cfg.check_orders()?;
    let p = Pipeline::new(cfg)?;
    let table = p.modes(cfg.order)?;
    let start = start_point(cfg, &table)?
        .ok_or_else(|| Error::config("trajectory", "need xi0 or x0"))?;
    let times = uniform_times(horizon(cfg, &table), cfg.validation.samples)?;
    let estimate = spectral_trajectory(&table, start.xi0, &times)?;
    let reference = integrate(&p.field, &estimate.states[0], &times, &cfg.integrator)?;
    let error = nmse(&reference, &estimate)?;
    let parts = order_decomposition(&table, start.xi0, &times, &cfg.trajectory.orders)?;

    for (name, tr) in [("estimate.csv", &estimate), ("reference.csv", &reference)] {
        let mut w = create(&cfg.output_dir, name)?;
        tr.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut partial: Option<crate::dynamics::Trajectory> = None;
    for (h, tr) in &parts {
        let mut w = create(&cfg.output_dir, &format!("order_{h}.csv"))?;
        tr.write_csv(&mut w)?;
        w.flush()?;
        partial = Some(match partial {
            Some(s) => s.add(tr)?,
            None => tr.clone(),
        });
    }
    let partial_nmse = partial.map(|s| nmse(&reference, &s)).transpose()?;
    let threshold = cfg.validation.nmse_threshold;
    let summary = json!({
        "pair": [p.pair.0, p.pair.1],
        "order": table.max_order(),
        "xi0": complex_json(start.xi0),
        "projection_residual": start.projection_residual,
        "reference_start": estimate.states[0],
        "horizon": times.last(),
        "samples": times.len(),
        "nmse": error,
        "nmse_threshold": threshold,
        "passed": error < threshold,
        "orders": cfg.trajectory.orders,
        "partial_sum_nmse": partial_nmse,
    });
    write_json(&cfg.output_dir, "trajectory.json", &summary)?;
    if let Some(r) = start.projection_residual {
        writeln!(out, "x0 projected onto the manifold: xi0 = {}, distance {r:.3e}", start.xi0)?;
    }
    writeln!(out, "NMSE {error:.6e}% (threshold {threshold}%)")?;
    if !(error < threshold) {
        return Err(Error::ValidationFailed {
            check: "trajectory NMSE".into(),
            value: error,
            threshold,
        });
    }
    Ok(())
}

fn run_validate(cfg: &RunConfig, out: &mut impl Write) -> Result<()> {
    let p = Pipeline::new(cfg)?;
    let table = p.modes(cfg.order)?;
    let threshold = cfg.validation.nmse_threshold;
    let mut checks: Vec<(String, f64, f64)> = Vec::new();

    checks.push(("conjugate_asymmetry".into(), table.conjugate_asymmetry(), 1e-10));
    let h = horizon(cfg, &table);
    let r_star = validity_radius(&table, &p.field, &cfg.integrator, threshold, h, &validity_options(cfg))?;
    let times = uniform_times(h, cfg.validation.samples)?;
    let half = max_ray_nmse(&table, &p.field, &cfg.integrator, 0.5 * r_star, &times, cfg.validation.rays)?;
    checks.push(("nmse_at_half_validity_radius".into(), half, threshold));
    if let Some(start) = start_point(cfg, &table)? {
        let estimate = spectral_trajectory(&table, start.xi0, &times)?;
        let reference = integrate(&p.field, &estimate.states[0], &times, &cfg.integrator)?;
        checks.push(("trajectory_nmse".into(), nmse(&reference, &estimate)?, threshold));
    }

    let passed = checks.iter().all(|(_, v, t)| v < t);
    let verdict = json!({
        "passed": passed,
        "pair": [p.pair.0, p.pair.1],
        "order": table.max_order(),
        "validity_radius": r_star,
        "near_resonances": table.warnings().iter().map(|w| json!({
            "k": [w.k.0, w.k.1], "eigen_index": w.eigen_index, "gap": w.gap,
        })).collect::<Vec<_>>(),
        "checks": checks.iter().map(|(name, v, t)| json!({
            "name": name, "value": v, "threshold": t, "passed": v < t,
        })).collect::<Vec<_>>(),
    });
    write_json(&cfg.output_dir, "validation.json", &verdict)?;
    for (name, v, t) in &checks {
        writeln!(out, "{} {name}: {v:.6e} (threshold {t:e})", if v < t { "PASS" } else { "FAIL" })?;
    }
    if let Some((name, v, t)) = checks.into_iter().find(|(_, v, t)| !(v < t)) {
        return Err(Error::ValidationFailed {
            check: name,
            value: v,
            threshold: t,
        });
    }
    Ok(())
}
