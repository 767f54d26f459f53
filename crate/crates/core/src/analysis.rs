//! Steady states, sideband stability, oscillation threshold, effective
//! nonlinearity and the sweeps built on them.

use std::f64::consts::TAU;

use log::warn;
use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    integrate, integrate_until, Coefficients, DynamicsError, Sampling, SolverOptions,
    Trajectory,
};
use crate::model::{
    FieldState, ModeParams, ModelError, Role, SeedConfig, SystemConfig, C64, HBAR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("steady-state search did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("no threshold bracket in [{lo:e}, {hi:e}] W")]
    BracketNotFound { lo: f64, hi: f64 },
    #[error("analysis window has {got} samples, need at least {need}")]
    WindowTooShort { got: usize, need: usize },
    #[error("amplitude {amplitude:e} below floor {floor:e}: nothing oscillates")]
    BelowFloor { amplitude: f64, floor: f64 },
    #[error("trajectory has not settled (relative variation {variation:e} over the final window)")]
    NotSettled { variation: f64 },
    #[error("threshold power must be > 0 (got {0})")]
    NonPositiveThreshold(f64),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

const Z: C64 = C64 { re: 0.0, im: 0.0 };

/// Intracavity pump with both sidebands empty:
/// `α₀ = −√(2γ₀,in)·α₀,in/(γ₀ + iΔ₀)`.
pub fn pump_only_steady_state(cfg: &SystemConfig) -> C64 {
    let pump = cfg.pump();
    -(2.0 * pump.gamma_in).sqrt() * cfg.drive().amplitude()
        / C64::new(pump.gamma_total(), cfg.delta_pump())
}

/// Emitted power through the output port, `ħω·2γ_out·|α|²`.
pub fn output_power(alpha: C64, mode: &ModeParams) -> f64 {
    HBAR * mode.omega * 2.0 * mode.gamma_out * alpha.norm_sqr()
}

pub type Matrix2 = [[C64; 2]; 2];

/// Linearisation of the sideband equations in `(α₋, α₊*)` about a fixed pump:
///
/// ```text
/// M = [[−(γ₋ + iΔ₋),  g·α₀²      ],
///      [ g*·α₀*²,     −(γ₊ − iΔ₊)]]
/// ```
pub fn linearized_sideband_matrix(alpha0: C64, cfg: &SystemConfig) -> Matrix2 {
    let g = cfg.g();
    let pump2 = alpha0 * alpha0;
    [
        [
            -C64::new(cfg.idler().gamma_total(), cfg.delta_idler()),
            g * pump2,
        ],
        [
            g.conj() * pump2.conj(),
            -C64::new(cfg.signal().gamma_total(), -cfg.delta_signal()),
        ],
    ]
}

/// Both eigenvalues of a 2×2 complex matrix, largest real part first.
pub fn eigenvalues(m: &Matrix2) -> [C64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let mut s = (tr * tr - 4.0 * det).sqrt();
    // pick the root without cancellation, recover the other from det
    if (tr + s).norm() < (tr - s).norm() {
        s = -s;
    }
    let l1 = (tr + s) * 0.5;
    let l2 = if l1.norm() > 0.0 { det / l1 } else { (tr - s) * 0.5 };
    if l1.re >= l2.re {
        [l1, l2]
    } else {
        [l2, l1]
    }
}

/// Largest real part of the sideband eigenvalues, rad/s.
pub fn sideband_growth_rate(alpha0: C64, cfg: &SystemConfig) -> f64 {
    eigenvalues(&linearized_sideband_matrix(alpha0, cfg))[0].re
}

/// Effective nonlinearity from the intrinsic coupling,
/// `|g|·(γ₊/γ₋)/√(γ₊² + Δ₂²)`, evaluated as written.
pub fn effective_nonlinearity_eq6(g_abs: f64, gamma_plus: f64, gamma_minus: f64, delta2: f64) -> f64 {
    g_abs * (gamma_plus / gamma_minus) / gamma_plus.hypot(delta2)
}

/// Effective nonlinearity from adiabatic elimination of the signal,
/// `|g|²·γ₊/(γ₋·(γ₊² + Δ₊²))`; the reduced idler gain is `γ₋·g′·|α₀|⁴`.
pub fn effective_nonlinearity_derived(
    g_abs: f64,
    gamma_plus: f64,
    gamma_minus: f64,
    delta_plus: f64,
) -> f64 {
    g_abs * g_abs * gamma_plus / (gamma_minus * (gamma_plus * gamma_plus + delta_plus * delta_plus))
}

/// `g′ = (γ₀² + Δ₀²)/(2γ₀,in) · ħω₀/P_thresh`, evaluated as written.
pub fn effective_nonlinearity_from_threshold(
    gamma0: f64,
    delta0: f64,
    gamma0_in: f64,
    omega0: f64,
    p_thresh: f64,
) -> Result<f64> {
    if !(p_thresh > 0.0) {
        return Err(AnalysisError::NonPositiveThreshold(p_thresh));
    }
    Ok((gamma0 * gamma0 + delta0 * delta0) / (2.0 * gamma0_in) * (HBAR * omega0 / p_thresh))
}

/// Range of the effective nonlinearity quoted for the measured device.
pub const REPORTED_G_EFF_RANGE: (f64, f64) = (1e-18, 1e-17);

/// Threshold of the reduced (adiabatic) idler equation,
/// `|g|²|α₀|⁴ = γ₋(γ₊² + Δ₊²)/γ₊`. Exact for the full sideband matrix only
/// when `Δ₋ = Δ₊ = 0`.
pub fn adiabatic_threshold_gain(cfg: &SystemConfig) -> f64 {
    let (gm, gp, dp) = (
        cfg.idler().gamma_total(),
        cfg.signal().gamma_total(),
        cfg.delta_signal(),
    );
    gm * (gp * gp + dp * dp) / gp
}

// ---------------------------------------------------------------------------
// Threshold

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdCriterion {
    /// Bisection on the sign of the sideband growth rate at the undepleted
    /// pump amplitude.
    #[default]
    EigenvalueCrossing,
    /// Bisection on whether a seeded simulation grows past `onset_factor·ε`.
    SimulatedOnset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOptions {
    /// Search range in W.
    pub power_range: (f64, f64),
    pub eigen_rel_width: f64,
    pub onset_rel_width: f64,
    /// Idler amplitude that counts as onset, in units of the seed.
    pub onset_factor: f64,
    /// Simulated time per onset test, in units of `1/γ₋`.
    pub onset_horizon: f64,
    /// Seed used when the configuration has none.
    pub fallback_seed: f64,
    /// Compare the pump at the upper bracket against the undepleted value.
    pub check_depletion: bool,
    pub solver: SolverOptions,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            power_range: (1e-40, 1e3),
            eigen_rel_width: 1e-14,
            onset_rel_width: 1e-3,
            onset_factor: 1e3,
            onset_horizon: 2e3,
            fallback_seed: 1e-6,
            check_depletion: false,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// photons/s
    pub flux_threshold: f64,
    /// W
    pub power_threshold: f64,
    /// (below, above) in W.
    pub bracket: (f64, f64),
    pub criterion: ThresholdCriterion,
    /// Relative deviation of the stationary |α₀| above threshold from the
    /// undepleted value, when checked.
    pub pump_deviation: Option<f64>,
}

fn bisect_power<F>(lo: f64, hi: f64, rel_width: f64, mut above: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<bool>,
{
    if !(lo > 0.0 && hi > lo) {
        return Err(AnalysisError::BracketNotFound { lo, hi });
    }
    if above(lo)? || !above(hi)? {
        return Err(AnalysisError::BracketNotFound { lo, hi });
    }
    let (mut lo, mut hi) = (lo, hi);
    while (hi - lo) > rel_width * hi {
        let mid = if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        if above(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi))
}

fn onset_seed(cfg: &SystemConfig, fallback: f64) -> SeedConfig {
    let eps = cfg.seed().epsilon;
    if cfg.seed().magnitude() > 0.0 {
        SeedConfig::constant(eps)
    } else {
        SeedConfig::constant(C64::new(fallback, 0.0))
    }
}

/// Whether a seeded run starting from the undepleted pump reaches
/// `onset_factor·|ε|` in the idler within the horizon.
pub fn simulated_onset(cfg: &SystemConfig, opts: &ThresholdOptions) -> Result<bool> {
    let seed = onset_seed(cfg, opts.fallback_seed);
    let cfg = cfg.with_seed(seed)?;
    let level = opts.onset_factor * seed.epsilon.norm();
    let init = FieldState::new(0.0, pump_only_steady_state(&cfg), Z, Z);
    let t_end = opts.onset_horizon / cfg.idler().gamma_total();
    let traj = integrate_until(&init, &cfg, t_end, &opts.solver, |s| {
        s.alpha_minus.norm() > level
    })?;
    Ok(traj.stopped_early)
}

/// Input power at which the sidebands start to oscillate.
pub fn oscillation_threshold(
    cfg: &SystemConfig,
    criterion: ThresholdCriterion,
    opts: &ThresholdOptions,
) -> Result<ThresholdResult> {
    let (lo, hi) = opts.power_range;
    let bracket = match criterion {
        ThresholdCriterion::EigenvalueCrossing => {
            bisect_power(lo, hi, opts.eigen_rel_width, |p| {
                let c = cfg.with_power(p)?;
                Ok(sideband_growth_rate(pump_only_steady_state(&c), &c) > 0.0)
            })?
        }
        ThresholdCriterion::SimulatedOnset => {
            let sim_opts = ThresholdOptions {
                solver: opts.solver.clone().with_sampling(Sampling::Uniform(1)),
                ..opts.clone()
            };
            let above = |p: f64| simulated_onset(&cfg.with_power(p)?, &sim_opts);
            // Far above threshold the run is hopelessly stiff, so the search
            // starts from a bracket around the eigenvalue estimate.
            let (_, guess) = bisect_power(lo, hi, 1e-6, |p| {
                let c = cfg.with_power(p)?;
                Ok(sideband_growth_rate(pump_only_steady_state(&c), &c) > 0.0)
            })?;
            let (mut a, mut b) = ((guess / 2.0).max(lo), (guess * 2.0).min(hi));
            for _ in 0..20 {
                if a <= lo || !above(a)? {
                    break;
                }
                a = (a / 2.0).max(lo);
            }
            for _ in 0..20 {
                if b >= hi || above(b)? {
                    break;
                }
                b = (b * 2.0).min(hi);
            }
            bisect_power(a, b, opts.onset_rel_width, above)?
        }
    };
    let power_threshold = bracket.1;
    let flux_threshold = power_threshold / (HBAR * cfg.drive().frequency);
    let pump_deviation = if opts.check_depletion {
        let c = cfg.with_power(bracket.1 * 1.01)?;
        let undepleted = pump_only_steady_state(&c);
        let steady = SteadyOptions {
            solver: opts.solver.clone(),
            ..Default::default()
        };
        match steady_state(&c, &FieldState::new(0.0, undepleted, Z, Z), &steady) {
            Ok(ss) => {
                let dev = (ss.state.alpha0.norm() - undepleted.norm()).abs() / undepleted.norm();
                if dev > 0.01 {
                    warn!("pump depleted by {:.2}% just above threshold", 100.0 * dev);
                }
                Some(dev)
            }
            Err(e) => {
                warn!("depletion check skipped: {e}");
                None
            }
        }
    } else {
        None
    };
    Ok(ThresholdResult {
        flux_threshold,
        power_threshold,
        bracket,
        criterion,
        pump_deviation,
    })
}

// ---------------------------------------------------------------------------
// Steady state

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyOptions {
    pub solver: SolverOptions,
    /// Length of one settling chunk, units of `1/γ₋`.
    pub chunk: f64,
    /// Total settling budget, units of `1/γ₋`.
    pub max_time: f64,
    /// Relative variation of the moduli over a chunk that counts as settled.
    pub settle_tol: f64,
    /// Newton stops when the scaled residual falls below this.
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            chunk: 20.0,
            max_time: 2.0e3,
            settle_tol: 1e-5,
            newton_tol: 1e-12,
            max_newton: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    /// Amplitudes at the end of the settling run, polished.
    pub state: FieldState,
    /// `max_j |dα_j/dt| / (γ₋·max(|α_j|, 1))` in the co-rotating frame.
    pub residual: f64,
    pub converged: bool,
    /// Whether the moduli stopped changing before Newton polish.
    pub settled: bool,
    pub oscillating: bool,
    /// Rotation of `α₋` in its frame (`α₊` rotates the opposite way), Hz.
    pub pulling: f64,
}

impl SteadyState {
    /// Idler frequency relative to `Ω₋`, Hz.
    pub fn idler_offset_hz(&self, cfg: &SystemConfig) -> f64 {
        cfg.delta_idler() / TAU + self.pulling
    }

    /// Signal frequency relative to `Ω₊`, Hz.
    pub fn signal_offset_hz(&self, cfg: &SystemConfig) -> f64 {
        cfg.delta_signal() / TAU - self.pulling
    }
}

/// Sideband amplitude above which the state counts as oscillating.
pub(crate) fn oscillation_floor(cfg: &SystemConfig, alpha0: C64) -> f64 {
    (1e3 * cfg.seed().magnitude()).max(1e-9 * alpha0.norm().max(1.0))
}

const N_UNKNOWN: usize = 6;
type Vec6 = SVector<f64, N_UNKNOWN>;
type Mat6 = SMatrix<f64, N_UNKNOWN, N_UNKNOWN>;

/// Stationary-point problem in the frame co-rotating with the sidebands.
struct Stationary {
    coeffs: Coefficients,
    scale: [f64; 3],
    oscillating: bool,
    t_eval: f64,
}

impl Stationary {
    /// Unknowns: oscillating `[Re α₀, Im α₀, Re α₋, Re α₊, Im α₊, ν]` (with
    /// `Im α₋ = 0` as gauge), otherwise `[α₀, α₋, α₊]` as re/im pairs.
    fn unpack(&self, x: &Vec6) -> ([C64; 3], f64) {
        let s = self.scale;
        if self.oscillating {
            (
                [
                    C64::new(x[0], x[1]) * s[0],
                    C64::new(x[2], 0.0) * s[1],
                    C64::new(x[3], x[4]) * s[2],
                ],
                x[5],
            )
        } else {
            (
                [
                    C64::new(x[0], x[1]) * s[0],
                    C64::new(x[2], x[3]) * s[1],
                    C64::new(x[4], x[5]) * s[2],
                ],
                0.0,
            )
        }
    }

    fn pack(&self, a: &[C64; 3], nu: f64) -> Vec6 {
        let s = self.scale;
        let (a0, am, ap) = (a[0] / s[0], a[1] / s[1], a[2] / s[2]);
        if self.oscillating {
            Vec6::from([a0.re, a0.im, am.norm(), ap.re, ap.im, nu])
        } else {
            Vec6::from([a0.re, a0.im, am.re, am.im, ap.re, ap.im])
        }
    }

    fn residual(&self, x: &Vec6) -> Vec6 {
        let (a, nu) = self.unpack(x);
        let d = self.coeffs.rhs(self.t_eval, &a);
        let i = C64::i();
        let r = [
            d[0] / self.scale[0],
            (d[1] - i * nu * a[1]) / self.scale[1],
            (d[2] + i * nu * a[2]) / self.scale[2],
        ];
        Vec6::from([r[0].re, r[0].im, r[1].re, r[1].im, r[2].re, r[2].im])
    }

    fn jacobian(&self, x: &Vec6) -> Mat6 {
        let mut j = Mat6::zeros();
        for k in 0..N_UNKNOWN {
            let h = 1e-7 * x[k].abs().max(1e-3);
            let mut xp = *x;
            let mut xm = *x;
            xp[k] += h;
            xm[k] -= h;
            let col = (self.residual(&xp) - self.residual(&xm)) / (2.0 * h);
            j.set_column(k, &col);
        }
        j
    }

    fn solve(&self, mut x: Vec6, tol: f64, max_iter: usize) -> (Vec6, f64, bool) {
        let mut r = self.residual(&x);
        let mut norm = r.amax();
        for _ in 0..max_iter {
            if norm < tol {
                return (x, norm, true);
            }
            let Some(dx) = self.jacobian(&x).lu().solve(&r) else {
                return (x, norm, false);
            };
            let mut lambda = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial = x - dx * lambda;
                let rt = self.residual(&trial);
                let nt = rt.amax();
                if nt.is_finite() && nt < norm {
                    x = trial;
                    r = rt;
                    norm = nt;
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (x, norm, norm < tol)
    }
}

fn moduli_variation(samples: &[FieldState], floor: f64) -> f64 {
    (0..3)
        .map(|j| {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for s in samples {
                let m = s.amplitudes()[j].norm();
                lo = lo.min(m);
                hi = hi.max(m);
            }
            (hi - lo) / hi.max(floor)
        })
        .fold(0.0, f64::max)
}

/// Long-time integration from `guess` until the moduli settle, followed by
/// Newton polish of the stationary point (co-rotating with the sidebands
/// when they oscillate).
pub fn steady_state(cfg: &SystemConfig, guess: &FieldState, opts: &SteadyOptions) -> Result<SteadyState> {
    if !guess.is_finite() {
        return Err(DynamicsError::Divergence { t: guess.t }.into());
    }
    let gm = cfg.idler().gamma_total();
    let chunk = opts.chunk / gm;
    let solver = opts.solver.clone().with_sampling(Sampling::Uniform(256));
    let mut state = *guess;
    let mut elapsed = 0.0;
    let mut settled = false;
    while elapsed < opts.max_time / gm {
        let traj = integrate(&state, cfg, state.t + chunk, &solver)?;
        state = *traj.last();
        elapsed += chunk;
        let floor = oscillation_floor(cfg, state.alpha0);
        let seed_rel = cfg.seed().magnitude() / state.alpha_minus.norm().max(floor);
        let tol = opts.settle_tol.max(100.0 * seed_rel);
        // seed-level sidebands on a pump that still has gain are not settled
        let growing = state.alpha_minus.norm() <= floor
            && sideband_growth_rate(state.alpha0, cfg) > 1e-9 * gm;
        if !growing && moduli_variation(&traj.samples, floor) < tol {
            settled = true;
            break;
        }
    }

    let floor = oscillation_floor(cfg, state.alpha0);
    let oscillating = state.alpha_minus.norm() > floor;
    let time_scale = cfg.time_scale();
    let mut coeffs = Coefficients::new(cfg, 1.0 / time_scale);
    coeffs = if oscillating {
        coeffs.without_seed()
    } else {
        coeffs.with_asymptotic_seed()
    };
    let amp_scale = |a: C64| a.norm().max(1e-300);
    let problem = Stationary {
        coeffs,
        scale: if oscillating {
            [
                amp_scale(state.alpha0),
                amp_scale(state.alpha_minus),
                amp_scale(state.alpha_plus),
            ]
        } else {
            let s = state.alpha0.norm().max(1.0);
            [s, s, s]
        },
        oscillating,
        t_eval: f64::INFINITY,
    };

    // Rotate the sidebands into the gauge Im α₋ = 0.
    let phase = if oscillating {
        C64::from_polar(1.0, state.alpha_minus.arg())
    } else {
        C64::new(1.0, 0.0)
    };
    let gauged = [
        state.alpha0,
        state.alpha_minus * phase.conj(),
        state.alpha_plus * phase,
    ];
    let nu0 = if oscillating {
        eigenvalues(&linearized_sideband_matrix(state.alpha0, cfg))[0].im / time_scale
    } else {
        0.0
    };
    let x0 = problem.pack(&gauged, nu0);
    let (x, res, ok) = problem.solve(x0, opts.newton_tol, opts.max_newton);
    let (a, nu) = problem.unpack(&x);
    if !ok || (oscillating && a[1].norm() < floor) {
        return Err(AnalysisError::NoConvergence { residual: res * time_scale / gm });
    }
    let polished = FieldState::new(state.t, a[0], a[1] * phase, a[2] * phase.conj());
    // residual relative to max(|α_j|, 1) in units of γ₋
    let raw = problem.residual(&x);
    let residual = (0..3)
        .map(|j| {
            let r = C64::new(raw[2 * j], raw[2 * j + 1]).norm() * problem.scale[j];
            r / a[j].norm().max(1.0)
        })
        .fold(0.0, f64::max)
        * time_scale
        / gm;
    if !settled {
        warn!("steady state polished from an unsettled trajectory");
    }
    Ok(SteadyState {
        state: polished,
        residual,
        converged: true,
        settled,
        oscillating,
        pulling: nu * time_scale / TAU,
    })
}

// ---------------------------------------------------------------------------
// Trajectory diagnostics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyWindow {
    /// Trailing fraction of the trajectory to fit.
    pub fraction: f64,
    pub min_samples: usize,
    /// Amplitudes below this are treated as absent.
    pub amplitude_floor: f64,
}

impl Default for FrequencyWindow {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            min_samples: 64,
            amplitude_floor: 1e-12,
        }
    }
}

/// Least-squares slope of the unwrapped phase of one amplitude over the
/// trailing window, in Hz relative to that amplitude's frame.
pub fn extract_frequency_offset(traj: &Trajectory, role: Role, window: &FrequencyWindow) -> Result<f64> {
    let n = traj.len();
    let take = ((n as f64 * window.fraction).ceil() as usize).max(window.min_samples);
    if take > n || take < 2 {
        return Err(AnalysisError::WindowTooShort {
            got: n,
            need: window.min_samples.max(2),
        });
    }
    let samples = &traj.samples[n - take..];
    let mut phase = Vec::with_capacity(take);
    let mut prev = 0.0;
    let mut unwrapped = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let a = s.amplitude(role);
        if a.norm() < window.amplitude_floor {
            return Err(AnalysisError::BelowFloor {
                amplitude: a.norm(),
                floor: window.amplitude_floor,
            });
        }
        let p = a.arg();
        if k == 0 {
            unwrapped = p;
        } else {
            let mut d = p - prev;
            d -= TAU * (d / TAU).round();
            unwrapped += d;
        }
        prev = p;
        phase.push((s.t, unwrapped));
    }
    let m = phase.len() as f64;
    let tm = phase.iter().map(|p| p.0).sum::<f64>() / m;
    let pm = phase.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, p) in &phase {
        num += (t - tm) * (p - pm);
        den += (t - tm) * (t - tm);
    }
    Ok(num / den / TAU)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetCriteria {
    /// Fraction of the final idler amplitude that marks onset.
    pub threshold_ratio: f64,
    /// Final idler amplitudes below this mean no oscillation.
    pub floor: f64,
    /// Allowed relative variation of |α₋| over the final 10% of samples.
    pub settle_tol: f64,
}

impl Default for OnsetCriteria {
    fn default() -> Self {
        Self {
            threshold_ratio: 0.5,
            floor: 1e-3,
            settle_tol: 1e-2,
        }
    }
}

/// Time after the first sample at which |α₋| first reaches
/// `threshold_ratio` of its final value; `None` when nothing oscillates.
pub fn onset_delay(traj: &Trajectory, criteria: &OnsetCriteria) -> Result<Option<f64>> {
    let last = traj.last().alpha_minus.norm();
    if last < criteria.floor {
        return Ok(None);
    }
    let n = traj.len();
    let tail = &traj.samples[n - (n / 10).max(2).min(n)..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), s| {
        let m = s.alpha_minus.norm();
        (lo.min(m), hi.max(m))
    });
    let variation = (hi - lo) / hi;
    if variation > criteria.settle_tol {
        return Err(AnalysisError::NotSettled { variation });
    }
    let level = criteria.threshold_ratio * last;
    let t0 = traj.first().t;
    Ok(traj
        .samples
        .iter()
        .find(|s| s.alpha_minus.norm() >= level)
        .map(|s| s.t - t0))
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptParameter {
    PumpOffsetHz,
    PowerW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Pump detuning in unloaded (intrinsic) half-bandwidths.
    pub normalized_detuning: f64,
    /// Empty when the point succeeded.
    pub error: Option<String>,
    pub oscillating: bool,
    pub converged: bool,
    pub pump_power: f64,
    pub idler_power: f64,
    pub signal_power: f64,
    pub idler_offset_hz: Option<f64>,
    pub signal_offset_hz: Option<f64>,
    pub pulling_hz: Option<f64>,
    pub threshold: Option<f64>,
    pub g_eff: Option<f64>,
}

impl SweepRow {
    fn failed(value: f64, normalized_detuning: f64, err: &AnalysisError) -> Self {
        Self {
            value,
            normalized_detuning,
            error: Some(err.to_string()),
            oscillating: false,
            converged: false,
            pump_power: f64::NAN,
            idler_power: f64::NAN,
            signal_power: f64::NAN,
            idler_offset_hz: None,
            signal_offset_hz: None,
            pulling_hz: None,
            threshold: None,
            g_eff: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: SweptParameter,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOptions {
    pub steady: SteadyOptions,
    pub threshold: ThresholdOptions,
}

fn check_values(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(AnalysisError::InvalidSweep("no sweep values".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidSweep(format!("non-finite value {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

fn normalized_detuning(cfg: &SystemConfig) -> f64 {
    let p = cfg.pump();
    let unloaded = if p.gamma_intrinsic > 0.0 {
        p.gamma_intrinsic
    } else {
        p.gamma_total()
    };
    cfg.delta_pump() / unloaded
}

/// Threshold and the threshold-derived effective nonlinearity for one
/// operating point.
pub fn threshold_and_nonlinearity(
    cfg: &SystemConfig,
    opts: &ThresholdOptions,
) -> Result<(ThresholdResult, f64)> {
    let th = oscillation_threshold(cfg, ThresholdCriterion::EigenvalueCrossing, opts)?;
    let p = cfg.pump();
    let g_eff = effective_nonlinearity_from_threshold(
        p.gamma_total(),
        cfg.delta_pump(),
        p.gamma_in,
        p.omega,
        th.power_threshold,
    )?;
    Ok((th, g_eff))
}

/// Steady state plus derived quantities at one operating point.
pub fn evaluate_point(
    cfg: &SystemConfig,
    value: f64,
    with_threshold: bool,
    opts: &SweepOptions,
) -> SweepRow {
    let nd = normalized_detuning(cfg);
    let guess = FieldState::new(0.0, pump_only_steady_state(cfg), Z, Z);
    let ss = match steady_state(cfg, &guess, &opts.steady) {
        Ok(ss) => ss,
        Err(e) => return SweepRow::failed(value, nd, &e),
    };
    let (threshold, g_eff) = if with_threshold {
        match threshold_and_nonlinearity(cfg, &opts.threshold) {
            Ok((th, g)) => (Some(th.power_threshold), Some(g)),
            Err(e) => {
                let mut row = SweepRow::failed(value, nd, &e);
                row.converged = ss.converged;
                return row;
            }
        }
    } else {
        (None, None)
    };
    let s = &ss.state;
    SweepRow {
        value,
        normalized_detuning: nd,
        error: None,
        oscillating: ss.oscillating,
        converged: ss.converged,
        pump_power: output_power(s.alpha0, cfg.pump()),
        idler_power: output_power(s.alpha_minus, cfg.idler()),
        signal_power: output_power(s.alpha_plus, cfg.signal()),
        idler_offset_hz: ss.oscillating.then(|| ss.idler_offset_hz(cfg)),
        signal_offset_hz: ss.oscillating.then(|| ss.signal_offset_hz(cfg)),
        pulling_hz: ss.oscillating.then_some(ss.pulling),
        threshold,
        g_eff,
    }
}

/// Steps the drive across `offsets_hz` from the pump resonance. Points run
/// in parallel; rows come back sorted by offset.
pub fn sweep_detuning(cfg: &SystemConfig, offsets_hz: &[f64], opts: &SweepOptions) -> Result<SweepResult> {
    let values = check_values(offsets_hz)?;
    let rows = values
        .par_iter()
        .map(|&offset| match cfg.with_pump_offset_hz(offset) {
            Ok(c) => evaluate_point(&c, offset, true, opts),
            Err(e) => SweepRow::failed(offset, f64::NAN, &e.into()),
        })
        .collect();
    Ok(SweepResult {
        parameter: SweptParameter::PumpOffsetHz,
        rows,
    })
}

/// Steps the incident power (W) at fixed drive frequency.
pub fn sweep_power(cfg: &SystemConfig, powers_w: &[f64], opts: &SweepOptions) -> Result<SweepResult> {
    let values = check_values(powers_w)?;
    let rows = values
        .par_iter()
        .map(|&p| match cfg.with_power(p) {
            Ok(c) => evaluate_point(&c, p, false, opts),
            Err(e) => SweepRow::failed(p, f64::NAN, &e.into()),
        })
        .collect();
    Ok(SweepResult {
        parameter: SweptParameter::PowerW,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityRow {
    pub offset_hz: f64,
    pub normalized_detuning: f64,
    pub error: Option<String>,
    pub power_threshold: Option<f64>,
    /// From the threshold power.
    pub g_eff_threshold: Option<f64>,
    pub g_eff_from_g: f64,
    pub g_eff_adiabatic: f64,
    /// Whether `g_eff_threshold` falls inside [`REPORTED_G_EFF_RANGE`].
    pub in_reported_range: bool,
}

/// Effective nonlinearity three ways across pump offsets.
pub fn nonlinearity_sweep(
    cfg: &SystemConfig,
    offsets_hz: &[f64],
    opts: &ThresholdOptions,
) -> Result<Vec<NonlinearityRow>> {
    let values = check_values(offsets_hz)?;
    Ok(values
        .par_iter()
        .map(|&offset| {
            let c = match cfg.with_pump_offset_hz(offset) {
                Ok(c) => c,
                Err(e) => {
                    return NonlinearityRow {
                        offset_hz: offset,
                        normalized_detuning: f64::NAN,
                        error: Some(e.to_string()),
                        power_threshold: None,
                        g_eff_threshold: None,
                        g_eff_from_g: f64::NAN,
                        g_eff_adiabatic: f64::NAN,
                        in_reported_range: false,
                    }
                }
            };
            let (gm, gp, dp) = (
                c.idler().gamma_total(),
                c.signal().gamma_total(),
                c.delta_signal(),
            );
            let g_abs = c.g().norm();
            let th = threshold_and_nonlinearity(&c, opts);
            let (power_threshold, g_eff_threshold, error) = match th {
                Ok((t, g)) => (Some(t.power_threshold), Some(g), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            let (lo, hi) = REPORTED_G_EFF_RANGE;
            NonlinearityRow {
                offset_hz: offset,
                normalized_detuning: normalized_detuning(&c),
                error,
                power_threshold,
                g_eff_threshold,
                g_eff_from_g: effective_nonlinearity_eq6(g_abs, gp, gm, dp),
                g_eff_adiabatic: effective_nonlinearity_derived(g_abs, gp, gm, dp),
                in_reported_range: g_eff_threshold.is_some_and(|g| (lo..=hi).contains(&g)),
            }
        })
        .collect())
}
