//! Command-line front end: TOML configuration, command dispatch, CSV/SVG
//! output and the run manifest.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` file,
//! command-line flags.

use std::ffi::OsString;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    self, AnalysisError, SweepOptions, SweepResult, SteadyOptions, ThresholdCriterion,
    ThresholdOptions,
};
use crate::dynamics::{integrate, DynamicsError, Method, Sampling, SolverOptions};
use crate::model::{
    defaults, matched_signal, mode_from_physical, parse_power, CouplingFractions,
    DoubletLinewidths, FieldState, Frame, ModelError, PumpDrive, Role, SeedConfig, SeedMode,
    SignalLoss, SystemConfig, C64,
};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for anything the user typed wrong, 1 for failures of the run itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Configuration file

/// A power given either in watts or as text with a unit (`"5 dBm"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PowerValue {
    Watts(f64),
    Text(String),
}

impl PowerValue {
    pub fn watts(&self) -> std::result::Result<f64, ModelError> {
        match self {
            PowerValue::Watts(w) => parse_power(&w.to_string()),
            PowerValue::Text(s) => parse_power(s),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    /// Half-bandwidth used for drive offsets ≥ 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_bandwidth_upper_hz: Option<f64>,
    /// Half-bandwidth used for drive offsets < 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_bandwidth_lower_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_out: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdlerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    /// Alternative to `frequency_hz`: distance below the pump.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_bandwidth_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_out: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    /// At most one of the three loss forms.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linewidth_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_bandwidth_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coupling_out: Option<f64>,
    /// Optional; checked against frequency matching.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonlinearitySection {
    /// rad/s
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_abs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_phase: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<PowerValue>,
    /// Drive frequency minus the pump resonance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SeedMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_phase: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idler_offset_hz: Option<f64>,
    /// rad/s; absent means the idler half-bandwidth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_tol: Option<f64>,
    /// Largest step, and the step of `fixed_rk4`. Absent means unbounded.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

/// Contents of a configuration file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub pump: PumpSection,
    pub idler: IdlerSection,
    pub signal: SignalSection,
    pub nonlinearity: NonlinearitySection,
    pub drive: DriveSection,
    pub seed: SeedSection,
    pub frame: FrameSection,
    pub solver: SolverSection,
    pub simulate: SimulateSection,
}

/// Everything a command needs besides the physical system.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub solver: SolverOptions,
    pub t_end: f64,
    pub samples: usize,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        // a run manifest carries its config under [config]
        let is_manifest = table.contains_key("command") && table.contains_key("config");
        let parsed = if is_manifest {
            FileConfig::deserialize(table["config"].clone()).map_err(|e| e.to_string())
        } else {
            toml::from_str::<FileConfig>(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| CliError::Config {
            path: origin.to_string(),
            message,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Every key filled in; the idler is given by frequency, the power in W.
    pub fn normalized(&self) -> Result<Self> {
        use defaults::*;
        let mut n = self.clone();
        let pump_hz = *n.pump.frequency_hz.get_or_insert(PUMP_FREQUENCY_HZ);
        n.pump.half_bandwidth_upper_hz.get_or_insert(PUMP_HALF_BANDWIDTH_UPPER_HZ);
        n.pump.half_bandwidth_lower_hz.get_or_insert(PUMP_HALF_BANDWIDTH_LOWER_HZ);
        n.pump.coupling_in.get_or_insert(PUMP_COUPLING_IN);
        n.pump.coupling_out.get_or_insert(PUMP_COUPLING_OUT);

        n.idler.frequency_hz = match (n.idler.frequency_hz, n.idler.spacing_hz.take()) {
            (Some(_), Some(_)) => {
                return Err(usage("idler: give frequency_hz or spacing_hz, not both"))
            }
            (Some(f), None) => Some(f),
            (None, Some(s)) => Some(pump_hz - s),
            (None, None) => Some(pump_hz - SPACING_HZ),
        };
        n.idler.half_bandwidth_hz.get_or_insert(IDLER_HALF_BANDWIDTH_HZ);
        n.idler.coupling_in.get_or_insert(IDLER_COUPLING_IN);
        n.idler.coupling_out.get_or_insert(IDLER_COUPLING_OUT);

        let forms = [
            n.signal.linewidth_ratio.is_some(),
            n.signal.amplitude_ratio.is_some(),
            n.signal.half_bandwidth_hz.is_some(),
        ];
        match forms.iter().filter(|f| **f).count() {
            0 => n.signal.linewidth_ratio = Some(SIGNAL_LINEWIDTH_RATIO),
            1 => {}
            _ => {
                return Err(usage(
                    "signal: give one of linewidth_ratio, amplitude_ratio, half_bandwidth_hz",
                ))
            }
        }
        n.signal.coupling_out.get_or_insert(SIGNAL_COUPLING_OUT);

        n.nonlinearity.g_abs.get_or_insert(G_ABS);
        n.nonlinearity.g_phase.get_or_insert(0.0);

        let power = match &n.drive.power {
            None => dbm_default(),
            Some(p) => p.watts()?,
        };
        n.drive.power = Some(PowerValue::Watts(power));
        n.drive.offset_hz.get_or_insert(0.0);
        n.drive.phase.get_or_insert(0.0);

        n.seed.mode.get_or_insert(SeedMode::Constant);
        n.seed.epsilon.get_or_insert(SEED_EPSILON);
        n.seed.epsilon_phase.get_or_insert(0.0);
        n.seed.tau_s.get_or_insert(0.0);

        n.frame.idler_offset_hz.get_or_insert(0.0);

        let d = SolverOptions::default();
        n.solver.method.get_or_insert(d.method);
        n.solver.rel_tol.get_or_insert(d.rel_tol);
        n.solver.abs_tol.get_or_insert(d.abs_tol);
        n.solver.max_steps.get_or_insert(d.max_steps);

        n.simulate.t_end_s.get_or_insert(10.0);
        n.simulate.samples.get_or_insert(1000);
        Ok(n)
    }

    /// Builds the validated system and run settings.
    pub fn resolve(&self) -> Result<(SystemConfig, RunSettings)> {
        let n = self.normalized()?;
        let (p, i, s) = (&n.pump, &n.idler, &n.signal);
        let doublet = DoubletLinewidths {
            upper_hz: p.half_bandwidth_upper_hz.unwrap(),
            lower_hz: p.half_bandwidth_lower_hz.unwrap(),
        };
        let pump = mode_from_physical(
            Role::Pump,
            p.frequency_hz.unwrap(),
            doublet.upper_hz,
            CouplingFractions {
                input: p.coupling_in.unwrap(),
                output: p.coupling_out.unwrap(),
            },
        )?;
        let idler = mode_from_physical(
            Role::Idler,
            i.frequency_hz.unwrap(),
            i.half_bandwidth_hz.unwrap(),
            CouplingFractions {
                input: i.coupling_in.unwrap(),
                output: i.coupling_out.unwrap(),
            },
        )?;
        let loss = match (s.linewidth_ratio, s.amplitude_ratio, s.half_bandwidth_hz) {
            (Some(r), _, _) => SignalLoss::LinewidthRatio(r),
            (_, Some(r), _) => SignalLoss::AmplitudeRatio(r),
            (_, _, Some(h)) => SignalLoss::Rate(TAU * h),
            _ => unreachable!("normalized"),
        };
        let mut signal = matched_signal(&pump, &idler, loss, s.coupling_out.unwrap())?;
        if let Some(f) = s.frequency_hz {
            signal.omega = TAU * f;
        }
        let drive = PumpDrive::new(
            n.drive.power.as_ref().unwrap().watts()?,
            pump.omega + TAU * n.drive.offset_hz.unwrap(),
            n.drive.phase.unwrap(),
        )?;
        let g = C64::from_polar(n.nonlinearity.g_abs.unwrap(), n.nonlinearity.g_phase.unwrap());
        let seed = SeedConfig::new(
            n.seed.mode.unwrap(),
            C64::from_polar(n.seed.epsilon.unwrap(), n.seed.epsilon_phase.unwrap()),
            n.seed.tau_s.unwrap(),
        )?;
        let frame = Frame {
            idler_offset: TAU * n.frame.idler_offset_hz.unwrap(),
            normalization: n.frame.normalization,
        };
        let cfg =
            SystemConfig::new(pump, idler, signal, g, drive, seed, frame)?.with_doublet(doublet)?;

        let solver = SolverOptions {
            rel_tol: n.solver.rel_tol.unwrap(),
            abs_tol: n.solver.abs_tol.unwrap(),
            max_step: n.solver.max_step_s.unwrap_or(f64::INFINITY),
            method: n.solver.method.unwrap(),
            sampling: Sampling::Steps,
            max_steps: n.solver.max_steps.unwrap(),
        };
        let t_end = n.simulate.t_end_s.unwrap();
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(ModelError::Invalid {
                field: "simulate.t_end_s",
                constraint: "> 0",
                value: t_end,
            }
            .into());
        }
        let samples = n.simulate.samples.unwrap();
        if samples == 0 {
            return Err(usage("simulate.samples must be at least 1"));
        }
        Ok((
            cfg,
            RunSettings {
                solver,
                t_end,
                samples,
            },
        ))
    }

    /// Normalized form as TOML.
    pub fn dump(&self) -> Result<String> {
        toml::to_string(&self.normalized()?).map_err(|e| usage(e.to_string()))
    }
}

fn dbm_default() -> f64 {
    crate::model::dbm_to_watts(defaults::DRIVE_POWER_DBM)
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<SystemConfig> {
    Ok(FileConfig::load(path)?.resolve()?.0)
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "fwm", version, about = "Three-mode four-wave mixing in a whispering-gallery resonator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file (or a previous run's manifest.toml).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "fwm-out")]
    out: PathBuf,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plot: bool,
    /// Drive offset from the pump resonance, Hz.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "HZ")]
    pump_offset_hz: Option<f64>,
    /// Incident pump power: watts, or with a W / mW / dBm suffix.
    #[arg(long, global = true, allow_hyphen_values = true, value_name = "POWER")]
    pump_power: Option<String>,
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    #[arg(long, global = true)]
    abs_tol: Option<f64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Adaptive,
    Rk4,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum CriterionArg {
    #[default]
    Eigenvalue,
    Onset,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate from empty modes at drive switch-on.
    Simulate {
        /// Simulated time, s.
        #[arg(long)]
        t_end: Option<f64>,
        /// Number of equal output intervals.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Stationary state and extracted frequencies.
    Steady,
    /// Oscillation threshold power.
    Threshold {
        #[arg(long, value_enum, default_value_t)]
        criterion: CriterionArg,
    },
    /// Steady state and threshold across pump offsets.
    SweepDetuning(OffsetRange),
    /// Steady state across incident powers.
    SweepPower(PowerRange),
    /// Effective nonlinearity across pump offsets.
    Nonlinearity(OffsetRange),
}

#[derive(Debug, Args)]
struct OffsetRange {
    /// First offset, Hz.
    #[arg(long, allow_hyphen_values = true, default_value_t = -4000.0)]
    from: f64,
    /// Last offset, Hz.
    #[arg(long, allow_hyphen_values = true, default_value_t = 4000.0)]
    to: f64,
    #[arg(long, default_value_t = 81)]
    points: usize,
    /// Explicit offsets in Hz; overrides the range.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Vec<f64>,
}

#[derive(Debug, Args)]
struct PowerRange {
    /// Lowest power (log spacing).
    #[arg(long, allow_hyphen_values = true, default_value = "-70 dBm")]
    from: String,
    #[arg(long, allow_hyphen_values = true, default_value = "5 dBm")]
    to: String,
    #[arg(long, default_value_t = 16)]
    points: usize,
    /// Explicit powers; overrides the range.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Vec<String>,
}

fn linspace(from: f64, to: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(usage("--points must be at least 1"));
    }
    if n == 1 {
        return Ok(vec![from]);
    }
    let last = (n - 1) as f64;
    Ok((0..n).map(|k| from + (to - from) * (k as f64 / last)).collect())
}

impl OffsetRange {
    fn values(&self) -> Result<Vec<f64>> {
        if self.values.is_empty() {
            linspace(self.from, self.to, self.points)
        } else {
            Ok(self.values.clone())
        }
    }
}

impl PowerRange {
    fn values(&self) -> Result<Vec<f64>> {
        let parse = |s: &str| parse_power(s).map_err(|e| usage(e.to_string()));
        if !self.values.is_empty() {
            return self.values.iter().map(|s| parse(s)).collect();
        }
        let (a, b) = (parse(&self.from)?, parse(&self.to)?);
        if !(a > 0.0 && b > 0.0) {
            return Err(usage("power range needs positive endpoints"));
        }
        Ok(linspace(a.log10(), b.log10(), self.points)?
            .into_iter()
            .map(|e| 10f64.powf(e))
            .collect())
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Steady => "steady",
            Command::Threshold { .. } => "threshold",
            Command::SweepDetuning(_) => "sweep-detuning",
            Command::SweepPower(_) => "sweep-power",
            Command::Nonlinearity(_) => "nonlinearity",
        }
    }
}

fn apply_flags(file: &mut FileConfig, common: &Common, command: &Command) {
    if let Some(v) = common.pump_offset_hz {
        file.drive.offset_hz = Some(v);
    }
    if let Some(p) = &common.pump_power {
        file.drive.power = Some(PowerValue::Text(p.clone()));
    }
    if let Some(m) = common.method {
        file.solver.method = Some(match m {
            MethodArg::Adaptive => Method::AdaptiveRk,
            MethodArg::Rk4 => Method::FixedRk4,
        });
    }
    if let Some(v) = common.rel_tol {
        file.solver.rel_tol = Some(v);
    }
    if let Some(v) = common.abs_tol {
        file.solver.abs_tol = Some(v);
    }
    if let Command::Simulate { t_end, samples } = command {
        if let Some(v) = t_end {
            file.simulate.t_end_s = Some(*v);
        }
        if let Some(v) = samples {
            file.simulate.samples = Some(*v);
        }
    }
}

// ---------------------------------------------------------------------------
// Output

/// Shortest decimal that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }

    fn column(&self, name: &str) -> Vec<f64> {
        let k = self.header.iter().position(|h| *h == name).expect("column");
        self.rows
            .iter()
            .map(|r| r[k].parse().unwrap_or(f64::NAN))
            .collect()
    }
}

struct Series<'a> {
    label: &'a str,
    x: Vec<f64>,
    y: Vec<f64>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|k| lo + (hi - lo) * k as f64 / 4.0).collect()
}

/// Static SVG 1.1 line plot. With `log_y`, non-positive values are dropped.
fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 440.0, 90.0, 150.0, 40.0, 60.0);
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let points: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.x.iter()
                .zip(&s.y)
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || **y > 0.0))
                .map(|(x, y)| (*x, ty(*y)))
                .collect()
        })
        .collect();
    let all = points.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for t in ticks(x0, x1) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(t),
            h - mb + 16.0,
            tick_label(t, false)
        );
    }
    for t in ticks(y0, y1) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 6.0,
            py(t) + 4.0,
            tick_label(t, log_y)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 15.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (mt + h - mb) / 2.0,
        esc(ylabel)
    );
    for (k, (ser, pts)) in series.iter().zip(&points).enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !pts.is_empty() {
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = mt + 16.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
            w - mr + 10.0,
            w - mr + 30.0,
            w - mr + 35.0,
            ly + 4.0,
            esc(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{v:.1}")
    } else if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Written once per invocation into the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub version: String,
    pub duration_s: f64,
    pub outputs: Vec<String>,
    /// Normalized configuration; `--config manifest.toml` repeats the run.
    pub config: FileConfig,
}

struct Outputs<'a> {
    dir: &'a Path,
    plot: bool,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        table.write(&self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn svg(&mut self, name: &str, make: impl FnOnce() -> String) -> Result<()> {
        if self.plot {
            let path = self.dir.join(name);
            fs::write(&path, make()).map_err(io_err(&path))?;
            self.files.push(name.to_string());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Commands

const TRAJECTORY_COLUMNS: [&str; 10] = [
    "t_s",
    "alpha0_re",
    "alpha0_im",
    "alpha_minus_re",
    "alpha_minus_im",
    "alpha_plus_re",
    "alpha_plus_im",
    "pump_out_W",
    "idler_out_W",
    "signal_out_W",
];

fn state_cells(s: &FieldState, cfg: &SystemConfig) -> Vec<String> {
    vec![
        num(s.alpha0.re),
        num(s.alpha0.im),
        num(s.alpha_minus.re),
        num(s.alpha_minus.im),
        num(s.alpha_plus.re),
        num(s.alpha_plus.im),
        num(analysis::output_power(s.alpha0, cfg.pump())),
        num(analysis::output_power(s.alpha_minus, cfg.idler())),
        num(analysis::output_power(s.alpha_plus, cfg.signal())),
    ]
}

fn cmd_simulate(cfg: &SystemConfig, run: &RunSettings, out: &mut Outputs) -> Result<()> {
    let opts = run.solver.clone().with_sampling(Sampling::Uniform(run.samples));
    let traj = integrate(&FieldState::zero(0.0), cfg, run.t_end, &opts)?;
    info!(
        "{} steps accepted, {} rejected",
        traj.step_stats.accepted, traj.step_stats.rejected
    );
    let mut t = Table::new(&TRAJECTORY_COLUMNS);
    for s in &traj.samples {
        let mut row = vec![num(s.t)];
        row.extend(state_cells(s, cfg));
        t.push(row);
    }
    out.table("trajectory.csv", &t)?;
    out.svg("trajectory.svg", || {
        let x = t.column("t_s");
        line_plot(
            "Output power",
            "time (s)",
            "power (W)",
            &[
                Series { label: "pump", x: x.clone(), y: t.column("pump_out_W") },
                Series { label: "idler", x: x.clone(), y: t.column("idler_out_W") },
                Series { label: "signal", x, y: t.column("signal_out_W") },
            ],
            true,
        )
    })
}

fn cmd_steady(cfg: &SystemConfig, run: &RunSettings, out: &mut Outputs) -> Result<()> {
    let opts = SteadyOptions {
        solver: run.solver.clone(),
        ..Default::default()
    };
    let guess = FieldState::new(
        0.0,
        analysis::pump_only_steady_state(cfg),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
    );
    let ss = analysis::steady_state(cfg, &guess, &opts)?;
    let mut header = TRAJECTORY_COLUMNS[1..].to_vec();
    header.extend([
        "idler_offset_Hz",
        "signal_offset_Hz",
        "pulling_Hz",
        "residual",
        "converged",
        "settled",
        "oscillating",
    ]);
    let mut t = Table::new(&header);
    let mut row = state_cells(&ss.state, cfg);
    let osc = ss.oscillating;
    row.extend([
        opt(osc.then(|| ss.idler_offset_hz(cfg))),
        opt(osc.then(|| ss.signal_offset_hz(cfg))),
        opt(osc.then_some(ss.pulling)),
        num(ss.residual),
        ss.converged.to_string(),
        ss.settled.to_string(),
        osc.to_string(),
    ]);
    t.push(row);
    out.table("steady.csv", &t)
}

fn cmd_threshold(
    cfg: &SystemConfig,
    run: &RunSettings,
    criterion: CriterionArg,
    out: &mut Outputs,
) -> Result<()> {
    let criterion = match criterion {
        CriterionArg::Eigenvalue => ThresholdCriterion::EigenvalueCrossing,
        CriterionArg::Onset => ThresholdCriterion::SimulatedOnset,
    };
    let opts = ThresholdOptions {
        solver: run.solver.clone(),
        check_depletion: true,
        ..Default::default()
    };
    let th = analysis::oscillation_threshold(cfg, criterion, &opts)?;
    let mut t = Table::new(&[
        "power_threshold_W",
        "power_threshold_dBm",
        "flux_threshold",
        "criterion",
        "bracket_low_W",
        "bracket_high_W",
        "pump_deviation",
    ]);
    t.push(vec![
        num(th.power_threshold),
        num(crate::model::watts_to_dbm(th.power_threshold)),
        num(th.flux_threshold),
        match criterion {
            ThresholdCriterion::EigenvalueCrossing => "eigenvalue_crossing",
            ThresholdCriterion::SimulatedOnset => "simulated_onset",
        }
        .to_string(),
        num(th.bracket.0),
        num(th.bracket.1),
        opt(th.pump_deviation),
    ]);
    out.table("threshold.csv", &t)
}

fn sweep_table(result: &SweepResult, first: &'static str) -> Table {
    let mut t = Table::new(&[
        first,
        "normalized_detuning",
        "pump_out_W",
        "idler_out_W",
        "signal_out_W",
        "idler_offset_Hz",
        "signal_offset_Hz",
        "pulling_Hz",
        "threshold_W",
        "g_eff",
        "oscillating",
        "converged",
        "error",
    ]);
    for r in &result.rows {
        t.push(vec![
            num(r.value),
            num(r.normalized_detuning),
            num(r.pump_power),
            num(r.idler_power),
            num(r.signal_power),
            opt(r.idler_offset_hz),
            opt(r.signal_offset_hz),
            opt(r.pulling_hz),
            opt(r.threshold),
            opt(r.g_eff),
            r.oscillating.to_string(),
            r.converged.to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

fn sweep_options(run: &RunSettings) -> SweepOptions {
    SweepOptions {
        steady: SteadyOptions {
            solver: run.solver.clone(),
            ..Default::default()
        },
        threshold: ThresholdOptions {
            solver: run.solver.clone(),
            ..Default::default()
        },
    }
}

fn cmd_sweep_detuning(
    cfg: &SystemConfig,
    run: &RunSettings,
    range: &OffsetRange,
    out: &mut Outputs,
) -> Result<()> {
    let result = analysis::sweep_detuning(cfg, &range.values()?, &sweep_options(run))?;
    let t = sweep_table(&result, "pump_offset_Hz");
    out.table("sweep_detuning.csv", &t)?;
    out.svg("sweep_detuning.svg", || {
        let x = t.column("pump_offset_Hz");
        line_plot(
            "Sideband output",
            "pump offset (Hz)",
            "power (W)",
            &[
                Series { label: "idler", x: x.clone(), y: t.column("idler_out_W") },
                Series { label: "signal", x, y: t.column("signal_out_W") },
            ],
            true,
        )
    })?;
    out.svg("sweep_detuning_frequency.svg", || {
        let x = t.column("pump_offset_Hz");
        line_plot(
            "Output frequency offsets",
            "pump offset (Hz)",
            "offset (Hz)",
            &[
                Series { label: "idler", x: x.clone(), y: t.column("idler_offset_Hz") },
                Series { label: "signal", x, y: t.column("signal_offset_Hz") },
            ],
            false,
        )
    })
}

fn cmd_sweep_power(
    cfg: &SystemConfig,
    run: &RunSettings,
    range: &PowerRange,
    out: &mut Outputs,
) -> Result<()> {
    let result = analysis::sweep_power(cfg, &range.values()?, &sweep_options(run))?;
    let t = sweep_table(&result, "power_W");
    out.table("sweep_power.csv", &t)?;
    out.svg("sweep_power.svg", || {
        let x: Vec<f64> = t.column("power_W").iter().map(|p| crate::model::watts_to_dbm(*p)).collect();
        line_plot(
            "Output power",
            "incident power (dBm)",
            "power (W)",
            &[
                Series { label: "pump", x: x.clone(), y: t.column("pump_out_W") },
                Series { label: "idler", x: x.clone(), y: t.column("idler_out_W") },
                Series { label: "signal", x, y: t.column("signal_out_W") },
            ],
            true,
        )
    })
}

fn cmd_nonlinearity(
    cfg: &SystemConfig,
    run: &RunSettings,
    range: &OffsetRange,
    out: &mut Outputs,
) -> Result<()> {
    let opts = ThresholdOptions {
        solver: run.solver.clone(),
        ..Default::default()
    };
    let rows = analysis::nonlinearity_sweep(cfg, &range.values()?, &opts)?;
    let mut t = Table::new(&[
        "pump_offset_Hz",
        "normalized_detuning",
        "power_threshold_W",
        "g_eff_threshold",
        "g_eff_from_g",
        "g_eff_adiabatic",
        "in_reported_range",
        "error",
    ]);
    for r in &rows {
        t.push(vec![
            num(r.offset_hz),
            num(r.normalized_detuning),
            opt(r.power_threshold),
            opt(r.g_eff_threshold),
            num(r.g_eff_from_g),
            num(r.g_eff_adiabatic),
            r.in_reported_range.to_string(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    let inside = rows.iter().filter(|r| r.in_reported_range).count();
    info!(
        "{inside} of {} threshold-derived g' values inside [{:e}, {:e}]",
        rows.len(),
        analysis::REPORTED_G_EFF_RANGE.0,
        analysis::REPORTED_G_EFF_RANGE.1
    );
    out.table("nonlinearity.csv", &t)?;
    out.svg("nonlinearity.svg", || {
        let x = t.column("normalized_detuning");
        line_plot(
            "Threshold and effective nonlinearity",
            "pump detuning / intrinsic half-bandwidth",
            "value",
            &[
                Series { label: "threshold (W)", x: x.clone(), y: t.column("power_threshold_W") },
                Series { label: "g' from threshold", x, y: t.column("g_eff_threshold") },
            ],
            true,
        )
    })
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FWM_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| usage(format!("FWM_THREADS must be a positive integer (got {v:?})")))?;
        if n == 0 {
            return Err(usage("FWM_THREADS must be a positive integer (got 0)"));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("thread pool already initialised; FWM_THREADS ignored");
        }
    }
    Ok(())
}

fn execute(cli: Cli, arguments: Vec<String>) -> Result<()> {
    let started = Instant::now();
    init_threads()?;
    let mut file = match &cli.common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    apply_flags(&mut file, &cli.common, &cli.command);
    let normalized = file.normalized()?;
    let (cfg, run) = normalized.resolve()?;

    let dir = &cli.common.out;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut out = Outputs {
        dir,
        plot: cli.common.plot,
        files: Vec::new(),
    };
    match &cli.command {
        Command::Simulate { .. } => cmd_simulate(&cfg, &run, &mut out)?,
        Command::Steady => cmd_steady(&cfg, &run, &mut out)?,
        Command::Threshold { criterion } => cmd_threshold(&cfg, &run, *criterion, &mut out)?,
        Command::SweepDetuning(r) => cmd_sweep_detuning(&cfg, &run, r, &mut out)?,
        Command::SweepPower(r) => cmd_sweep_power(&cfg, &run, r, &mut out)?,
        Command::Nonlinearity(r) => cmd_nonlinearity(&cfg, &run, r, &mut out)?,
    }

    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        arguments,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_s: started.elapsed().as_secs_f64(),
        outputs: out.files,
        config: normalized,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| usage(e.to_string()))?;
    fs::write(&path, text).map_err(io_err(&path))?;
    for f in &manifest.outputs {
        println!("{}", dir.join(f).display());
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    let arguments = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli, arguments) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
