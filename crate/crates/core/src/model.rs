//! Physical parameters of the pump/idler/signal resonator system.
//!
//! Everything inside the crate works with angular quantities (rad/s) and
//! amplitude half-linewidths. Laboratory units (Hz, W, dBm) only appear at the
//! edges: [`mode_from_physical`], [`PumpDrive`] constructors and the config
//! loader.
//!
//! Sign convention for detunings: `Δ = ω_frame − Ω_mode`. The amplitude
//! equations are written with `−(γ + iΔ)α`, so a lab-frame field is
//! `a(t) = α(t)·e^{+iω_frame t}` and a positive phase slope of `α` means the
//! field oscillates above its frame frequency.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant, J·s (CODATA 2018).
pub const HBAR: f64 = 1.054571817e-34;

pub type C64 = Complex64;

/// Measured values used as defaults throughout the crate.
pub mod defaults {
    pub const PUMP_FREQUENCY_HZ: f64 = 12.0375e9;
    /// Pump-to-sideband spacing.
    pub const SPACING_HZ: f64 = 7.669e6;
    pub const IDLER_FREQUENCY_HZ: f64 = PUMP_FREQUENCY_HZ - SPACING_HZ;
    pub const IDLER_HALF_BANDWIDTH_HZ: f64 = 6.0;
    /// Upper doublet of the pump mode, used for positive detuning.
    pub const PUMP_HALF_BANDWIDTH_UPPER_HZ: f64 = 6.7;
    /// Lower doublet of the pump mode, used for negative detuning.
    pub const PUMP_HALF_BANDWIDTH_LOWER_HZ: f64 = 5.0;
    pub const PUMP_COUPLING_IN: f64 = 0.3;
    pub const PUMP_COUPLING_OUT: f64 = 0.3;
    pub const IDLER_COUPLING_IN: f64 = 0.0;
    pub const IDLER_COUPLING_OUT: f64 = 0.5;
    /// γ₊/γ₋ for the lossy signal resonance.
    pub const SIGNAL_LINEWIDTH_RATIO: f64 = 1.0e3;
    pub const SIGNAL_COUPLING_OUT: f64 = 0.5;
    /// |g| in rad/s. Not measured; chosen so that 5 dBm oscillates over a
    /// band of a few kHz around the pump resonance.
    pub const G_ABS: f64 = 1.0e-10;
    pub const DRIVE_POWER_DBM: f64 = 5.0;
    pub const SEED_EPSILON: f64 = 1.0e-6;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field} must be {constraint} (got {value})")]
    Invalid {
        field: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("coupling fractions sum to {0}, must not exceed 1")]
    CouplingFractions(f64),
    #[error(
        "signal frequency {signal_hz} Hz violates Ω₊ = 2Ω₀ − Ω₋ (expected {expected_hz} Hz)"
    )]
    FrequencyMatching { signal_hz: f64, expected_hz: f64 },
    #[error("cannot parse power {0:?}: expected a number with optional W, mW or dBm suffix")]
    PowerSyntax(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn check(field: &'static str, constraint: &'static str, value: f64, ok: bool) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Invalid {
            field,
            constraint,
            value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Pump,
    Idler,
    Signal,
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::Pump => 0,
            Role::Idler => 1,
            Role::Signal => 2,
        }
    }
}

/// One resonance. Rates are amplitude decay rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    pub omega: f64,
    pub gamma_intrinsic: f64,
    pub gamma_in: f64,
    pub gamma_out: f64,
    pub role: Role,
}

impl ModeParams {
    pub fn new(
        role: Role,
        omega: f64,
        gamma_intrinsic: f64,
        gamma_in: f64,
        gamma_out: f64,
    ) -> Result<Self> {
        check("omega", "> 0", omega, omega > 0.0)?;
        check("gamma_intrinsic", ">= 0", gamma_intrinsic, gamma_intrinsic >= 0.0)?;
        check("gamma_in", ">= 0", gamma_in, gamma_in >= 0.0)?;
        check("gamma_out", ">= 0", gamma_out, gamma_out >= 0.0)?;
        let total = gamma_intrinsic + gamma_in + gamma_out;
        check("gamma_total", "> 0", total, total > 0.0)?;
        Ok(Self {
            omega,
            gamma_intrinsic,
            gamma_in,
            gamma_out,
            role,
        })
    }

    pub fn gamma_total(&self) -> f64 {
        self.gamma_intrinsic + self.gamma_in + self.gamma_out
    }

    pub fn frequency_hz(&self) -> f64 {
        self.omega / TAU
    }

    pub fn half_bandwidth_hz(&self) -> f64 {
        self.gamma_total() / TAU
    }

    pub fn coupling_fractions(&self) -> CouplingFractions {
        let total = self.gamma_total();
        CouplingFractions {
            input: self.gamma_in / total,
            output: self.gamma_out / total,
        }
    }

    /// Same mode with a new total linewidth, keeping the coupling split.
    pub fn with_half_bandwidth_hz(&self, half_bandwidth_hz: f64) -> Result<Self> {
        mode_from_physical(
            self.role,
            self.frequency_hz(),
            half_bandwidth_hz,
            self.coupling_fractions(),
        )
        .map(|m| Self {
            omega: self.omega,
            ..m
        })
    }
}

/// Fractions of the total linewidth taken by the input and output ports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingFractions {
    pub input: f64,
    pub output: f64,
}

/// Builds a mode from a frequency and half-bandwidth in Hz. Whatever the two
/// port fractions leave over is intrinsic loss.
pub fn mode_from_physical(
    role: Role,
    frequency_hz: f64,
    half_bandwidth_hz: f64,
    fractions: CouplingFractions,
) -> Result<ModeParams> {
    check("frequency_hz", "> 0", frequency_hz, frequency_hz > 0.0)?;
    check(
        "half_bandwidth_hz",
        "> 0",
        half_bandwidth_hz,
        half_bandwidth_hz > 0.0,
    )?;
    check(
        "coupling.in",
        "in [0, 1]",
        fractions.input,
        (0.0..=1.0).contains(&fractions.input),
    )?;
    check(
        "coupling.out",
        "in [0, 1]",
        fractions.output,
        (0.0..=1.0).contains(&fractions.output),
    )?;
    let sum = fractions.input + fractions.output;
    if sum > 1.0 + 1e-15 {
        return Err(ModelError::CouplingFractions(sum));
    }
    let total = TAU * half_bandwidth_hz;
    let gamma_in = fractions.input * total;
    let gamma_out = fractions.output * total;
    let gamma_intrinsic = (total * (1.0 - sum)).max(0.0);
    ModeParams::new(role, TAU * frequency_hz, gamma_intrinsic, gamma_in, gamma_out)
}

/// `Δ = drive_omega − mode.omega`.
pub fn detuning(drive_omega: f64, mode: &ModeParams) -> f64 {
    drive_omega - mode.omega
}

/// Signal-frame detuning fixed by frequency matching, `Δ₊ = 2Δ₀ − Δ₋`.
pub fn signal_detuning(delta_pump: f64, delta_idler: f64) -> f64 {
    2.0 * delta_pump - delta_idler
}

/// Closest `Ω₊` to `2Ω₀ − Ω₋`, exact when the matching condition can be met
/// in `f64` for this idler (see [`match_frequencies`]).
pub fn matched_signal_omega(pump_omega: f64, idler_omega: f64) -> f64 {
    exact_signal_omega(pump_omega, idler_omega).unwrap_or(2.0 * pump_omega - idler_omega)
}

fn exact_signal_omega(pump_omega: f64, idler_omega: f64) -> Option<f64> {
    let target = 2.0 * pump_omega;
    let start = target - idler_omega;
    let (mut up, mut down) = (start, start);
    for _ in 0..8 {
        for s in [up, down] {
            if s + idler_omega - target == 0.0 {
                return Some(s);
            }
        }
        up = up.next_up();
        down = down.next_down();
    }
    None
}

/// `(Ω₋, Ω₊)` such that `Ω₊ + Ω₋ − 2Ω₀` evaluates to exactly zero in `f64`.
/// Rounding sometimes makes that impossible for the given `Ω₋`; it is then
/// moved by a few ulps (relative change ~1e-16).
pub fn match_frequencies(pump_omega: f64, idler_omega: f64) -> (f64, f64) {
    let (mut up, mut down) = (idler_omega, idler_omega);
    for _ in 0..64 {
        for i in [up, down] {
            if let Some(s) = exact_signal_omega(pump_omega, i) {
                return (i, s);
            }
        }
        up = up.next_up();
        down = down.next_down();
    }
    (idler_omega, 2.0 * pump_omega - idler_omega)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

/// Parses `"5 dBm"`, `"3.2e-3 W"`, `"2 mW"` or a bare number (watts).
pub fn parse_power(text: &str) -> Result<f64> {
    let s = text.trim();
    let lower = s.to_ascii_lowercase();
    let err = || ModelError::PowerSyntax(text.to_string());
    let (number, scale): (&str, Box<dyn Fn(f64) -> f64>) = if let Some(n) = lower.strip_suffix("dbm")
    {
        (n, Box::new(dbm_to_watts))
    } else if let Some(n) = lower.strip_suffix("mw") {
        (n, Box::new(|x| x * 1e-3))
    } else if let Some(n) = lower.strip_suffix('w') {
        (n, Box::new(|x| x))
    } else {
        (lower.as_str(), Box::new(|x| x))
    };
    let value: f64 = number.trim().parse().map_err(|_| err())?;
    let watts = scale(value);
    if !watts.is_finite() || watts < 0.0 {
        return Err(err());
    }
    Ok(watts)
}

/// Incident pump field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpDrive {
    /// W
    pub power: f64,
    /// rad/s
    pub frequency: f64,
    pub phase: f64,
}

impl PumpDrive {
    pub fn new(power: f64, frequency: f64, phase: f64) -> Result<Self> {
        check("drive.power", ">= 0", power, power >= 0.0)?;
        check("drive.frequency", "> 0", frequency, frequency > 0.0)?;
        check("drive.phase", "finite", phase, true)?;
        Ok(Self {
            power,
            frequency,
            phase,
        })
    }

    pub fn from_flux(flux: f64, frequency: f64, phase: f64) -> Result<Self> {
        check("drive.flux", ">= 0", flux, flux >= 0.0)?;
        Self::new(flux_to_power(flux, frequency), frequency, phase)
    }

    pub fn photon_flux(&self) -> f64 {
        pump_photon_flux(self)
    }

    /// `α_in = √flux · e^{iφ}`.
    pub fn amplitude(&self) -> C64 {
        C64::from_polar(self.photon_flux().sqrt(), self.phase)
    }
}

/// Photons per second carried by the drive, `P/(ħω)`.
pub fn pump_photon_flux(drive: &PumpDrive) -> f64 {
    drive.power / (HBAR * drive.frequency)
}

pub fn flux_to_power(flux: f64, frequency: f64) -> f64 {
    flux * HBAR * frequency
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetuningSign {
    Positive,
    Negative,
}

impl DetuningSign {
    /// Zero counts as positive.
    pub fn of(detuning: f64) -> Self {
        if detuning < 0.0 {
            DetuningSign::Negative
        } else {
            DetuningSign::Positive
        }
    }
}

/// Half-bandwidths of the two doublet components of the split pump mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubletLinewidths {
    pub upper_hz: f64,
    pub lower_hz: f64,
}

impl Default for DoubletLinewidths {
    fn default() -> Self {
        Self {
            upper_hz: defaults::PUMP_HALF_BANDWIDTH_UPPER_HZ,
            lower_hz: defaults::PUMP_HALF_BANDWIDTH_LOWER_HZ,
        }
    }
}

impl DoubletLinewidths {
    pub fn select(&self, sign: DetuningSign) -> f64 {
        match sign {
            DetuningSign::Positive => self.upper_hz,
            DetuningSign::Negative => self.lower_hz,
        }
    }
}

/// Pump half-bandwidth in Hz for a given detuning sign, using the measured
/// doublet values.
pub fn select_doublet_linewidth(sign: DetuningSign) -> f64 {
    DoubletLinewidths::default().select(sign)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    None,
    Constant,
    ExponentialRamp,
}

/// Phenomenological idler seed standing in for slow cross-relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub epsilon: C64,
    /// Ramp time constant, s.
    pub tau: f64,
    pub mode: SeedMode,
}

impl SeedConfig {
    pub fn new(mode: SeedMode, epsilon: C64, tau: f64) -> Result<Self> {
        check("seed.epsilon", "finite", epsilon.re, epsilon.im.is_finite())?;
        check("seed.tau", ">= 0", tau, tau >= 0.0)?;
        Ok(Self { epsilon, tau, mode })
    }

    pub fn none() -> Self {
        Self {
            epsilon: C64::new(0.0, 0.0),
            tau: 0.0,
            mode: SeedMode::None,
        }
    }

    pub fn constant(epsilon: C64) -> Self {
        Self {
            epsilon,
            tau: 0.0,
            mode: SeedMode::Constant,
        }
    }

    pub fn ramp(epsilon: C64, tau: f64) -> Self {
        Self {
            epsilon,
            tau,
            mode: SeedMode::ExponentialRamp,
        }
    }

    /// Seed amplitude that is effectively present, zero for `None`.
    pub fn magnitude(&self) -> f64 {
        match self.mode {
            SeedMode::None => 0.0,
            _ => self.epsilon.norm(),
        }
    }
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self::constant(C64::new(defaults::SEED_EPSILON, 0.0))
    }
}

/// Rotating frames. The pump amplitude always rotates with the drive; the
/// idler frame sits `idler_offset` above `Ω₋` and the signal frame is fixed
/// by frequency matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Frame {
    /// `Δ₋`, rad/s.
    pub idler_offset: f64,
    /// Rate used to make time dimensionless inside the integrator, rad/s.
    /// `None` means `γ₋`.
    pub normalization: Option<f64>,
}

/// How the lossy signal linewidth is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalLoss {
    /// `γ₊` in rad/s.
    Rate(f64),
    /// `γ₊ = ratio·γ₋`.
    LinewidthRatio(f64),
    /// `γ₊ = γ₋·(a₋/a₊)²` from the measured amplitude ratio `a₋/a₊`.
    AmplitudeRatio(f64),
}

/// Signal resonance at `Ω₊ = 2Ω₀ − Ω₋` with the requested loss.
pub fn matched_signal(
    pump: &ModeParams,
    idler: &ModeParams,
    loss: SignalLoss,
    output_fraction: f64,
) -> Result<ModeParams> {
    let gamma_idler = idler.gamma_total();
    let gamma = match loss {
        SignalLoss::Rate(rate) => rate,
        SignalLoss::LinewidthRatio(r) => {
            check("signal.linewidth_ratio", "> 0", r, r > 0.0)?;
            r * gamma_idler
        }
        SignalLoss::AmplitudeRatio(r) => {
            check("signal.amplitude_ratio", "> 0", r, r > 0.0)?;
            gamma_idler * r * r
        }
    };
    check("signal.gamma", "> 0", gamma, gamma > 0.0)?;
    check(
        "signal.coupling_out",
        "in [0, 1]",
        output_fraction,
        (0.0..=1.0).contains(&output_fraction),
    )?;
    ModeParams::new(
        Role::Signal,
        matched_signal_omega(pump.omega, idler.omega),
        gamma * (1.0 - output_fraction),
        0.0,
        gamma * output_fraction,
    )
}

/// Complete, validated description of one simulation.
///
/// Constructed only through [`SystemConfig::new`] (or the `with_*` helpers),
/// which enforce frequency matching and a lossy signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pump: ModeParams,
    idler: ModeParams,
    signal: ModeParams,
    g: C64,
    drive: PumpDrive,
    seed: SeedConfig,
    frame: Frame,
    doublet: Option<DoubletLinewidths>,
}

impl SystemConfig {
    /// Validates the triple of modes. A signal frequency within 1e-12
    /// relative of `2Ω₀ − Ω₋` is snapped onto the exact matched value;
    /// anything further away is rejected.
    pub fn new(
        pump: ModeParams,
        idler: ModeParams,
        signal: ModeParams,
        g: C64,
        drive: PumpDrive,
        seed: SeedConfig,
        frame: Frame,
    ) -> Result<Self> {
        let (idler_omega, expected) = match_frequencies(pump.omega, idler.omega);
        if (signal.omega - expected).abs() > 1e-12 * expected.abs() {
            return Err(ModelError::FrequencyMatching {
                signal_hz: signal.omega / TAU,
                expected_hz: expected / TAU,
            });
        }
        check("signal.gamma_total", "> 0 (lossy signal)", signal.gamma_total(), signal.gamma_total() > 0.0)?;
        check("g", "finite", g.re, g.im.is_finite())?;
        check("frame.idler_offset", "finite", frame.idler_offset, true)?;
        if let Some(n) = frame.normalization {
            check("frame.normalization", "> 0", n, n > 0.0)?;
        }
        let signal = ModeParams {
            omega: expected,
            role: Role::Signal,
            ..signal
        };
        Ok(Self {
            pump: ModeParams {
                role: Role::Pump,
                ..pump
            },
            idler: ModeParams {
                omega: idler_omega,
                role: Role::Idler,
                ..idler
            },
            signal,
            g,
            drive,
            seed,
            frame,
            doublet: None,
        })
    }

    pub fn pump(&self) -> &ModeParams {
        &self.pump
    }
    pub fn idler(&self) -> &ModeParams {
        &self.idler
    }
    pub fn signal(&self) -> &ModeParams {
        &self.signal
    }
    pub fn mode(&self, role: Role) -> &ModeParams {
        match role {
            Role::Pump => &self.pump,
            Role::Idler => &self.idler,
            Role::Signal => &self.signal,
        }
    }
    pub fn g(&self) -> C64 {
        self.g
    }
    pub fn drive(&self) -> &PumpDrive {
        &self.drive
    }
    pub fn seed(&self) -> &SeedConfig {
        &self.seed
    }
    pub fn frame(&self) -> &Frame {
        &self.frame
    }
    pub fn doublet(&self) -> Option<&DoubletLinewidths> {
        self.doublet.as_ref()
    }

    /// `Δ₀`, drive minus pump resonance.
    pub fn delta_pump(&self) -> f64 {
        detuning(self.drive.frequency, &self.pump)
    }

    /// `Δ₋`, set by the idler frame.
    pub fn delta_idler(&self) -> f64 {
        self.frame.idler_offset
    }

    /// `Δ₊ = 2Δ₀ − Δ₋`.
    pub fn delta_signal(&self) -> f64 {
        signal_detuning(self.delta_pump(), self.delta_idler())
    }

    pub fn delta(&self, role: Role) -> f64 {
        match role {
            Role::Pump => self.delta_pump(),
            Role::Idler => self.delta_idler(),
            Role::Signal => self.delta_signal(),
        }
    }

    /// Rate that makes integrator time dimensionless.
    pub fn time_scale(&self) -> f64 {
        self.frame
            .normalization
            .unwrap_or_else(|| self.idler.gamma_total())
    }

    /// Attach doublet linewidths; the pump linewidth is re-selected from the
    /// current detuning sign.
    pub fn with_doublet(mut self, doublet: DoubletLinewidths) -> Result<Self> {
        let hbw = doublet.select(DetuningSign::of(self.delta_pump()));
        self.pump = self.pump.with_half_bandwidth_hz(hbw)?;
        self.doublet = Some(doublet);
        Ok(self)
    }

    pub fn without_doublet(mut self) -> Self {
        self.doublet = None;
        self
    }

    pub fn with_drive(mut self, drive: PumpDrive) -> Result<Self> {
        self.drive = PumpDrive::new(drive.power, drive.frequency, drive.phase)?;
        if let Some(d) = self.doublet {
            self = self.with_doublet(d)?;
        }
        Ok(self)
    }

    pub fn with_power(self, power: f64) -> Result<Self> {
        let d = self.drive;
        self.with_drive(PumpDrive::new(power, d.frequency, d.phase)?)
    }

    /// Drive `offset_hz` away from the pump resonance. With doublet
    /// linewidths attached, the pump linewidth follows the offset sign.
    pub fn with_pump_offset_hz(self, offset_hz: f64) -> Result<Self> {
        let d = self.drive;
        check("pump_offset_hz", "finite", offset_hz, true)?;
        let freq = self.pump.omega + TAU * offset_hz;
        self.with_drive(PumpDrive::new(d.power, freq, d.phase)?)
    }

    pub fn with_drive_phase(self, phase: f64) -> Result<Self> {
        let d = self.drive;
        self.with_drive(PumpDrive::new(d.power, d.frequency, phase)?)
    }

    pub fn with_g(mut self, g: C64) -> Result<Self> {
        check("g", "finite", g.re, g.im.is_finite())?;
        self.g = g;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: SeedConfig) -> Result<Self> {
        self.seed = SeedConfig::new(seed.mode, seed.epsilon, seed.tau)?;
        Ok(self)
    }

    pub fn with_frame(self, frame: Frame) -> Result<Self> {
        let doublet = self.doublet;
        let mut cfg = Self::new(
            self.pump,
            self.idler,
            self.signal,
            self.g,
            self.drive,
            self.seed,
            frame,
        )?;
        cfg.doublet = doublet;
        Ok(cfg)
    }

    /// Replace a mode. Pump or idler changes re-derive the signal frequency
    /// keeping its linewidth; a replaced signal must already be matched.
    pub fn with_mode(self, mode: ModeParams) -> Result<Self> {
        let (mut pump, mut idler, mut signal) = (self.pump, self.idler, self.signal);
        match mode.role {
            Role::Pump => pump = mode,
            Role::Idler => idler = mode,
            Role::Signal => signal = mode,
        }
        if mode.role != Role::Signal {
            signal.omega = matched_signal_omega(pump.omega, idler.omega);
        }
        let mut cfg = Self::new(
            pump, idler, signal, self.g, self.drive, self.seed, self.frame,
        )?;
        cfg.doublet = self.doublet;
        Ok(cfg)
    }
}

impl Default for SystemConfig {
    /// Measured resonator values, 5 dBm drive on the pump resonance.
    fn default() -> Self {
        use defaults::*;
        let pump = mode_from_physical(
            Role::Pump,
            PUMP_FREQUENCY_HZ,
            PUMP_HALF_BANDWIDTH_UPPER_HZ,
            CouplingFractions {
                input: PUMP_COUPLING_IN,
                output: PUMP_COUPLING_OUT,
            },
        )
        .expect("default pump");
        let idler = mode_from_physical(
            Role::Idler,
            IDLER_FREQUENCY_HZ,
            IDLER_HALF_BANDWIDTH_HZ,
            CouplingFractions {
                input: IDLER_COUPLING_IN,
                output: IDLER_COUPLING_OUT,
            },
        )
        .expect("default idler");
        let signal = matched_signal(
            &pump,
            &idler,
            SignalLoss::LinewidthRatio(SIGNAL_LINEWIDTH_RATIO),
            SIGNAL_COUPLING_OUT,
        )
        .expect("default signal");
        let drive =
            PumpDrive::new(dbm_to_watts(DRIVE_POWER_DBM), pump.omega, 0.0).expect("default drive");
        Self::new(
            pump,
            idler,
            signal,
            C64::new(G_ABS, 0.0),
            drive,
            SeedConfig::default(),
            Frame::default(),
        )
        .and_then(|c| c.with_doublet(DoubletLinewidths::default()))
        .expect("default config")
    }
}

/// Mode amplitudes `⟨a_j⟩` at time `t`, normalised so `|α|²` is a photon
/// number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub t: f64,
    pub alpha0: C64,
    pub alpha_minus: C64,
    pub alpha_plus: C64,
}

impl FieldState {
    pub fn new(t: f64, alpha0: C64, alpha_minus: C64, alpha_plus: C64) -> Self {
        Self {
            t,
            alpha0,
            alpha_minus,
            alpha_plus,
        }
    }

    pub fn zero(t: f64) -> Self {
        let z = C64::new(0.0, 0.0);
        Self::new(t, z, z, z)
    }

    pub fn from_array(t: f64, a: [C64; 3]) -> Self {
        Self::new(t, a[0], a[1], a[2])
    }

    pub fn amplitudes(&self) -> [C64; 3] {
        [self.alpha0, self.alpha_minus, self.alpha_plus]
    }

    pub fn amplitude(&self, role: Role) -> C64 {
        self.amplitudes()[role.index()]
    }

    pub fn photons(&self, role: Role) -> f64 {
        self.amplitude(role).norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.amplitudes().iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frac(input: f64, output: f64) -> CouplingFractions {
        CouplingFractions { input, output }
    }

    #[test]
    fn idler_from_measured_half_bandwidth() {
        let m = mode_from_physical(Role::Idler, 12.0298e9, 6.0, frac(0.0, 0.5)).unwrap();
        assert!((m.gamma_total() - TAU * 6.0).abs() < 1e-12 * TAU * 6.0);
        assert!((m.gamma_out - TAU * 3.0).abs() < 1e-12);
        assert_eq!(m.gamma_in, 0.0);
        assert_eq!(m.omega, TAU * 12.0298e9);
    }

    #[test]
    fn pump_lower_doublet_linewidth() {
        let m = mode_from_physical(Role::Pump, 12.0375e9, 5.0, frac(0.3, 0.3)).unwrap();
        assert!((m.gamma_total() - TAU * 5.0).abs() < 1e-12 * TAU * 5.0);
        assert!((m.gamma_intrinsic - 0.4 * TAU * 5.0).abs() < 1e-12);
    }

    #[test]
    fn fully_overcoupled_mode() {
        let m = mode_from_physical(Role::Pump, 1.0, 1.0, frac(1.0, 0.0)).unwrap();
        assert_eq!(m.gamma_intrinsic, 0.0);
        assert_eq!(m.gamma_in, TAU);
    }

    #[test]
    fn mode_from_physical_rejects_bad_inputs() {
        assert!(mode_from_physical(Role::Pump, 0.0, 1.0, frac(0.0, 0.0)).is_err());
        assert!(mode_from_physical(Role::Pump, 1.0, -1.0, frac(0.0, 0.0)).is_err());
        assert!(mode_from_physical(Role::Pump, 1.0, 0.0, frac(0.0, 0.0)).is_err());
        assert_eq!(
            mode_from_physical(Role::Pump, 1.0, 1.0, frac(0.7, 0.6)),
            Err(ModelError::CouplingFractions(0.7 + 0.6))
        );
    }

    #[test]
    fn detuning_examples() {
        let m = mode_from_physical(Role::Pump, 12.0375e9, 5.0, frac(0.3, 0.3)).unwrap();
        assert_eq!(detuning(m.omega, &m), 0.0);
        let d = detuning(m.omega + TAU * 2671.0, &m);
        // drive frequency is stored absolutely; allow one ulp of Ω₀
        assert!((d - TAU * 2671.0).abs() < 2.0 * f64::EPSILON * m.omega);
        assert_eq!(signal_detuning(TAU * 2000.0, 0.0), TAU * 4000.0);
    }

    #[test]
    fn photon_flux_of_five_dbm() {
        let d = PumpDrive::new(dbm_to_watts(5.0), TAU * 12.0375e9, 0.0).unwrap();
        // 10^(0.5) mW / (ħ·2π·12.0375 GHz)
        let expected = 3.1622776601683795e-3 / (1.054571817e-34 * 75633843135.17427);
        assert!((pump_photon_flux(&d) - expected).abs() < 1e-12 * expected);
        assert!((pump_photon_flux(&d) - 3.964e20).abs() < 1e-3 * 3.964e20);
        let zero = PumpDrive::new(0.0, TAU * 12.0375e9, 0.0).unwrap();
        assert_eq!(pump_photon_flux(&zero), 0.0);
    }

    #[test]
    fn doublet_selection() {
        assert_eq!(select_doublet_linewidth(DetuningSign::Positive), 6.7);
        assert_eq!(select_doublet_linewidth(DetuningSign::Negative), 5.0);
        let sym = DoubletLinewidths {
            upper_hz: 8.0,
            lower_hz: 8.0,
        };
        assert_eq!(sym.select(DetuningSign::Positive), 8.0);
        assert_eq!(sym.select(DetuningSign::Negative), 8.0);
        assert_eq!(DetuningSign::of(0.0), DetuningSign::Positive);
    }

    #[test]
    fn power_parsing() {
        assert!((parse_power("5 dBm").unwrap() - dbm_to_watts(5.0)).abs() < 1e-18);
        assert_eq!(parse_power("2mW").unwrap(), 2e-3);
        assert_eq!(parse_power("0.25 W").unwrap(), 0.25);
        assert_eq!(parse_power("1e-3").unwrap(), 1e-3);
        assert!(parse_power("-1 W").is_err());
        assert!(parse_power("five").is_err());
    }

    #[test]
    fn inconsistent_signal_rejected() {
        let cfg = SystemConfig::default();
        let mut bad = *cfg.signal();
        bad.omega += TAU * 1.0e3;
        let err = SystemConfig::new(
            *cfg.pump(),
            *cfg.idler(),
            bad,
            cfg.g(),
            *cfg.drive(),
            *cfg.seed(),
            *cfg.frame(),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::FrequencyMatching { .. }));
        assert!(err.to_string().contains("2Ω₀ − Ω₋"));
    }

    #[test]
    fn lossless_signal_rejected() {
        let cfg = SystemConfig::default();
        assert!(matched_signal(cfg.pump(), cfg.idler(), SignalLoss::Rate(0.0), 0.5).is_err());
    }

    #[test]
    fn amplitude_ratio_sets_signal_loss() {
        let cfg = SystemConfig::default();
        let s = matched_signal(cfg.pump(), cfg.idler(), SignalLoss::AmplitudeRatio(10.0), 0.5)
            .unwrap();
        let expected = 100.0 * cfg.idler().gamma_total();
        assert!((s.gamma_total() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn default_config_uses_measured_values() {
        let cfg = SystemConfig::default();
        assert_eq!(cfg.pump().frequency_hz(), 12.0375e9);
        assert!((cfg.pump().frequency_hz() - cfg.idler().frequency_hz() - 7.669e6).abs() < 1e-4);
        assert!((cfg.idler().half_bandwidth_hz() - 6.0).abs() < 1e-12);
        // on resonance counts as the upper doublet
        assert!((cfg.pump().half_bandwidth_hz() - 6.7).abs() < 1e-12);
        let low = cfg.with_pump_offset_hz(-100.0).unwrap();
        assert!((low.pump().half_bandwidth_hz() - 5.0).abs() < 1e-12);
        assert!((low.pump().coupling_fractions().input - 0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn unit_round_trip(f in 1.0f64..1e11, hbw in 1e-3f64..1e6, fin in 0.0f64..0.5, fout in 0.0f64..0.5) {
            let m = mode_from_physical(Role::Idler, f, hbw, frac(fin, fout)).unwrap();
            prop_assert!((m.frequency_hz() - f).abs() <= 1e-12 * f);
            prop_assert!((m.half_bandwidth_hz() - hbw).abs() <= 1e-12 * hbw);
            let cf = m.coupling_fractions();
            prop_assert!((cf.input - fin).abs() <= 1e-12);
            prop_assert!((cf.output - fout).abs() <= 1e-12);
        }

        #[test]
        fn frequency_matching_is_bit_exact(p in 1.0f64..1e12, ratio in 0.5f64..1.5) {
            let i = p * ratio;
            let (i2, s) = match_frequencies(p, p * ratio);
            prop_assert!((i2 - i).abs() <= 1e-15 * i);
            prop_assert_eq!(s + i2 - 2.0 * p, 0.0);
        }

        #[test]
        fn constructed_configs_are_matched(spacing in -1e9f64..1e9, ratio in 1.0f64..1e4) {
            let base = SystemConfig::default();
            let idler = ModeParams { omega: base.pump().omega + spacing, ..*base.idler() };
            let cfg = base.with_mode(idler).unwrap();
            let sig = matched_signal(cfg.pump(), cfg.idler(), SignalLoss::LinewidthRatio(ratio), 0.5).unwrap();
            let cfg = cfg.with_mode(sig).unwrap();
            prop_assert_eq!(cfg.signal().omega + cfg.idler().omega - 2.0 * cfg.pump().omega, 0.0);
        }

        #[test]
        fn detuning_is_linear(delta in -1e6f64..1e6) {
            let m = SystemConfig::default().pump().clone();
            let w = m.omega;
            let diff = detuning(w + delta, &m) - detuning(w, &m);
            // exact up to the rounding of w + delta
            prop_assert!((diff - delta).abs() <= f64::EPSILON * w);
        }

        #[test]
        fn flux_power_round_trip(p in 0.0f64..10.0, f in 1e6f64..1e12) {
            let d = PumpDrive::new(p, f, 0.0).unwrap();
            let back = flux_to_power(pump_photon_flux(&d), d.frequency);
            prop_assert!((back - p).abs() <= 1e-14 * p.max(1e-300));
        }
    }
}
