use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::decay::{
    decay_curve_from, decay_curve_grid, fit_exponent, scan_coupling, DecayCurve, ExponentFit,
    ScanPoint, TimeSpec,
};
use crate::error::{Error, Result};
use crate::evolve::{
    decompose, propagate_grid_series, propagate_spectral, Engine, KGridSpec, WaveFunction,
};
use crate::model::{
    build_initial_state, InitialState, Potential, PotentialFamily, RadialGrid, StateFamily,
};
use crate::scattering::{
    default_kappa_max, find_bound_states, find_resonance_poles, project_out_bound_states,
    BoundState, SearchBox,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "qdecay",
    version,
    about = "Long-time decay of s-wave wave packets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Reserved; no stage of the pipeline is stochastic.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write Ψ(r, t) snapshots.
    Evolve,
    /// Write the nonescape curve and its power-law fit.
    Decay,
    /// Fit the decay exponent across a list of couplings.
    Scan,
    /// Write resonance poles and bound states.
    Poles,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Decay => "decay",
            Command::Scan => "scan",
            Command::Poles => "poles",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub coupling: f64,
    pub family: PotentialFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub r_max: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_max: 2.0,
            points: 401,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub kind: Engine,
    /// Time step of the grid engine.
    pub dt: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kind: Engine::Spectral,
            dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub times: Vec<f64>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            times: vec![0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub couplings: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// `[t_lo, t_hi]`; the last 1.5 decades of the curve when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolesConfig {
    pub search_box: SearchBox,
    pub max_poles: usize,
}

impl Default for PolesConfig {
    fn default() -> Self {
        Self {
            search_box: SearchBox {
                re_min: -20.0,
                re_max: 20.0,
                im_min: -3.0,
                im_max: -1e-3,
            },
            max_poles: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("qdecay-out"),
        }
    }
}

/// Everything a run needs; every table except `potential` and `state` has
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Radius `R` of the region whose occupation is tracked.
    #[serde(default = "default_region_radius")]
    pub region_radius: f64,
    /// Remove bound-state components before propagating.
    #[serde(default = "default_true")]
    pub project_bound_states: bool,
    /// Reserved for stochastic stages; recorded for provenance only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub potential: PotentialConfig,
    pub state: StateFamily,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub poles: PolesConfig,
    #[serde(default)]
    pub tolerances: KGridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

fn default_region_radius() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string().trim()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Field-level checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::config(field, message));
        if !(self.grid.r_max > 0.0) || !self.grid.r_max.is_finite() {
            return bad("grid.r_max", "must be positive and finite".into());
        }
        if self.grid.points < 3 {
            return bad("grid.points", "needs at least 3 points".into());
        }
        if !(self.region_radius > 0.0) {
            return bad("region_radius", "must be positive".into());
        }
        if self.region_radius > self.grid.r_max {
            return bad(
                "region_radius",
                format!(
                    "R = {} exceeds grid.r_max = {}",
                    self.region_radius, self.grid.r_max
                ),
            );
        }
        if !self.potential.coupling.is_finite() {
            return bad("potential.coupling", "must be finite".into());
        }
        if let Err(e) = self.potential.family.at(self.potential.coupling) {
            return bad("potential", strip_domain(e));
        }
        if let Err(e) = self.state.validate() {
            return bad("state", strip_domain(e));
        }
        if self.state.support() > self.grid.r_max {
            return bad(
                "state.radius",
                format!(
                    "support {} exceeds grid.r_max = {}",
                    self.state.support(),
                    self.grid.r_max
                ),
            );
        }
        self.time.validate().map_err(|e| prefix_field(e, "time"))?;
        if !(self.engine.dt > 0.0) || !self.engine.dt.is_finite() {
            return bad("engine.dt", "must be positive and finite".into());
        }
        if let Some(t) = self
            .evolve
            .times
            .iter()
            .find(|t| !(**t >= 0.0) || !t.is_finite())
        {
            return bad(
                "evolve.times",
                format!("{t} is not a finite non-negative time"),
            );
        }
        if let Some(c) = self.scan.couplings.iter().find(|c| !c.is_finite()) {
            return bad("scan.couplings", format!("{c} is not finite"));
        }
        if let Some((lo, hi)) = self.fit.window {
            if !(lo > 0.0 && hi > lo) {
                return bad(
                    "fit.window",
                    format!("[{lo}, {hi}] must satisfy 0 < lo < hi"),
                );
            }
        }
        let b = self.poles.search_box;
        if !(b.re_min < b.re_max && b.im_min < b.im_max && b.im_max < 0.0) {
            return bad(
                "poles.search_box",
                "needs re_min < re_max and im_min < im_max < 0".into(),
            );
        }
        if self.poles.max_poles == 0 {
            return bad("poles.max_poles", "must be positive".into());
        }
        self.tolerances.validate()
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        RadialGrid::new(self.grid.r_max, self.grid.points)
    }

    pub fn potential(&self) -> Result<Potential> {
        self.potential.family.at(self.potential.coupling)
    }

    pub fn initial_state(&self) -> Result<InitialState> {
        build_initial_state(self.state, self.grid()?)
    }

    /// Configuration as embedded in output files: no output location.
    fn provenance(&self) -> Self {
        Self {
            output: None,
            ..self.clone()
        }
    }
}

fn strip_domain(e: Error) -> String {
    match e {
        Error::Domain(m) => m,
        other => other.to_string(),
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    ConfigError,
    Degraded,
    NumericalFailure,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::ConfigError => 2,
            Status::Degraded => 3,
            Status::NumericalFailure => 4,
        }
    }

    fn of(error: &Error) -> Self {
        match error {
            Error::Config { .. } => Status::ConfigError,
            _ => Status::NumericalFailure,
        }
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let status = match run(&cli) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            Status::of(&e)
        }
    };
    ExitCode::from(status.code())
}

/// Runs one command and writes its outputs.
pub fn run(cli: &Cli) -> Result<Status> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::config("--config", "a configuration file is required"))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    let out_dir = match (&cli.out, &config.output) {
        (Some(dir), _) => dir.clone(),
        (None, Some(o)) => o.directory.clone(),
        (None, None) => OutputConfig::default().directory,
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be positive"));
        }
        // A pool that already exists keeps its size; results are unaffected.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    fs::create_dir_all(&out_dir)?;
    let header = provenance_header(cli.command, &config)?;
    match cli.command {
        Command::Evolve => cmd_evolve(&config, &out_dir, &header),
        Command::Decay => cmd_decay(&config, &out_dir, &header),
        Command::Scan => cmd_scan(&config, &out_dir, &header),
        Command::Poles => cmd_poles(&config, &out_dir, &header),
    }
}

/// Comment block that opens every CSV output.
fn provenance_header(command: Command, config: &RunConfig) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "# qdecay {VERSION}");
    let _ = writeln!(s, "# command: {}", command.name());
    let _ = writeln!(s, "# config:");
    for line in config.provenance().to_toml()?.lines() {
        let _ = writeln!(s, "#   {line}");
    }
    Ok(s)
}

#[derive(Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: RunConfig,
}

fn provenance(command: Command, config: &RunConfig) -> Provenance {
    Provenance {
        tool: "qdecay",
        version: VERSION,
        command: command.name(),
        config: config.provenance(),
    }
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// State with its bound components removed when requested.
fn prepared_state(
    config: &RunConfig,
    potential: &Potential,
) -> Result<(InitialState, Vec<BoundState>)> {
    let state = config.initial_state()?;
    if !config.project_bound_states {
        return Ok((state, Vec::new()));
    }
    let bound = find_bound_states(potential, default_kappa_max(potential))?;
    if bound.is_empty() {
        return Ok((state, bound));
    }
    Ok((project_out_bound_states(&state, &bound)?, bound))
}

fn cmd_evolve(config: &RunConfig, dir: &Path, header: &str) -> Result<Status> {
    let potential = config.potential()?;
    let (state, _) = prepared_state(config, &potential)?;
    let mut times = config.evolve.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let snapshots: Vec<WaveFunction> = match config.engine.kind {
        Engine::Spectral => {
            let decomp = decompose(&state, &potential, config.tolerances)?;
            times
                .iter()
                .map(|&t| propagate_spectral(&decomp, t))
                .collect::<Result<_>>()?
        }
        Engine::Grid => propagate_grid_series(&state, &potential, &times, config.engine.dt)?,
    };
    #[derive(Serialize)]
    struct Snapshot {
        file: String,
        t: f64,
        norm: f64,
        nonescape: f64,
    }
    let mut index = Vec::with_capacity(snapshots.len());
    for (i, wf) in snapshots.iter().enumerate() {
        let name = format!("psi_{i:04}.csv");
        let mut text = String::from(header);
        let _ = writeln!(text, "# t: {}", num(wf.t));
        text.push_str("r,re_psi,im_psi\n");
        for (r, z) in wf.grid.nodes().zip(&wf.samples) {
            let _ = writeln!(text, "{},{},{}", num(r), num(z.re), num(z.im));
        }
        fs::write(dir.join(&name), text)?;
        index.push(Snapshot {
            file: name,
            t: wf.t,
            norm: wf.norm(),
            nonescape: crate::decay::nonescape(wf, config.region_radius)?,
        });
    }
    #[derive(Serialize)]
    struct Summary {
        provenance: Provenance,
        engine: Engine,
        snapshots: Vec<Snapshot>,
    }
    write_json(
        &dir.join("evolve.json"),
        &Summary {
            provenance: provenance(Command::Evolve, config),
            engine: config.engine.kind,
            snapshots: index,
        },
    )?;
    Ok(Status::Success)
}

fn cmd_decay(config: &RunConfig, dir: &Path, header: &str) -> Result<Status> {
    let potential = config.potential()?;
    let (state, bound) = prepared_state(config, &potential)?;
    let times = config.time.times()?;
    let curve = match config.engine.kind {
        Engine::Spectral => {
            let decomp = decompose(&state, &potential, config.tolerances)?;
            decay_curve_from(&decomp, config.region_radius, &times)?
        }
        Engine::Grid => decay_curve_grid(
            &state,
            &potential,
            config.region_radius,
            &times,
            config.engine.dt,
        )?,
    };
    write_curve_csv(&dir.join("decay.csv"), header, &curve)?;
    let fit = fit_exponent(&curve, config.fit.window);
    #[derive(Serialize)]
    struct CurveInfo<'a> {
        engine: Engine,
        samples: usize,
        max_reliable_t: f64,
        truncated: bool,
        truncation_reason: &'a Option<String>,
        max_halving_change: f64,
        k_max: Option<f64>,
        parseval: Option<f64>,
        tail_estimate: Option<f64>,
        bound_states_removed: usize,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        provenance: Provenance,
        curve: CurveInfo<'a>,
        fit: Option<&'a ExponentFit>,
        fit_error: Option<String>,
    }
    let summary = Summary {
        provenance: provenance(Command::Decay, config),
        curve: CurveInfo {
            engine: curve.engine,
            samples: curve.times.len(),
            max_reliable_t: curve.max_reliable_t,
            truncated: curve.truncated,
            truncation_reason: &curve.truncation_reason,
            max_halving_change: curve.halving_change.iter().copied().fold(0.0, f64::max),
            k_max: curve.k_max,
            parseval: curve.parseval,
            tail_estimate: curve.tail_estimate,
            bound_states_removed: bound.len(),
        },
        fit: fit.as_ref().ok(),
        fit_error: fit.as_ref().err().map(|e| e.to_string()),
    };
    write_json(&dir.join("fit.json"), &summary)?;
    Ok(match (&fit, curve.truncated) {
        (Err(_), _) => Status::NumericalFailure,
        (Ok(_), true) => Status::Degraded,
        (Ok(_), false) => Status::Success,
    })
}

fn write_curve_csv(path: &Path, header: &str, curve: &DecayCurve) -> Result<()> {
    let local = curve.local_exponents();
    let mut text = String::from(header);
    text.push_str("t,P,local_exponent\n");
    for (i, (&t, &p)) in curve.times.iter().zip(&curve.values).enumerate() {
        let slope = if i == 0 {
            String::new()
        } else {
            num(local[i - 1])
        };
        let _ = writeln!(text, "{},{},{}", num(t), num(p), slope);
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_scan(config: &RunConfig, dir: &Path, header: &str) -> Result<Status> {
    if config.scan.couplings.is_empty() {
        return Err(Error::config(
            "scan.couplings",
            "at least one coupling is required",
        ));
    }
    let state = config.initial_state()?;
    let points = scan_coupling(
        &config.potential.family,
        &config.scan.couplings,
        &state,
        config.region_radius,
        &config.time,
        config.fit.window,
        config.tolerances,
    )?;
    let mut text = String::from(header);
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    writer.write_record([
        "lambda",
        "exponent",
        "residual",
        "window_lo",
        "window_hi",
        "unstable",
        "max_reliable_t",
        "bound_states_removed",
        "status",
    ])?;
    for p in &points {
        writer.write_record(scan_row(p))?;
    }
    let body = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    text.push_str(&String::from_utf8_lossy(&body));
    fs::write(dir.join("scan.csv"), text)?;
    let degraded = points.iter().any(|p| p.fit.is_none() || p.truncated);
    Ok(if degraded {
        Status::Degraded
    } else {
        Status::Success
    })
}

fn scan_row(p: &ScanPoint) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let fit = p.fit.as_ref();
    let status = match (&p.error, p.truncated) {
        (Some(e), _) => format!("error: {e}"),
        (None, true) => "truncated".into(),
        (None, false) => "ok".into(),
    };
    vec![
        num(p.coupling),
        opt(fit.map(|f| f.exponent)),
        opt(fit.map(|f| f.residual)),
        opt(fit.map(|f| f.window.0)),
        opt(fit.map(|f| f.window.1)),
        fit.map(|f| f.unstable.to_string()).unwrap_or_default(),
        opt(p.max_reliable_t),
        p.bound_states_removed.to_string(),
        status,
    ]
}

fn cmd_poles(config: &RunConfig, dir: &Path, _header: &str) -> Result<Status> {
    let potential = config.potential()?;
    let search = find_resonance_poles(&potential, config.poles.search_box, config.poles.max_poles)?;
    let bound = find_bound_states(&potential, default_kappa_max(&potential))?;
    #[derive(Serialize)]
    struct Pole {
        re: f64,
        im: f64,
        order: usize,
        residual: f64,
    }
    #[derive(Serialize)]
    struct Bound {
        kappa: f64,
        energy: f64,
    }
    #[derive(Serialize)]
    struct Summary {
        provenance: Provenance,
        zero_count: i64,
        newton_failed: bool,
        poles: Vec<Pole>,
        bound_states: Vec<Bound>,
    }
    let summary = Summary {
        provenance: provenance(Command::Poles, config),
        zero_count: search.zero_count,
        newton_failed: search.newton_failed,
        poles: search
            .poles
            .iter()
            .map(|p| Pole {
                re: p.k_pole.re,
                im: p.k_pole.im,
                order: p.order,
                residual: p.residual,
            })
            .collect(),
        bound_states: bound
            .iter()
            .map(|b| Bound {
                kappa: b.kappa(),
                energy: b.energy(),
            })
            .collect(),
    };
    write_json(&dir.join("poles.json"), &summary)?;
    Ok(if search.newton_failed {
        Status::Degraded
    } else {
        Status::Success
    })
}
