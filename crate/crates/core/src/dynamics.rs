//! Coupled amplitude equations for pump, idler and signal, the adiabatically
//! reduced idler equation, and deterministic time integration.
//!
//! Frames: `α₀` rotates with the drive, `α₋` with `Ω₋ + Δ₋` (the configured
//! idler frame) and `α₊` with `2ω₀ − (Ω₋ + Δ₋)`. Any residual rotation of a
//! sideband amplitude is therefore a frequency shift relative to its frame.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::effective_nonlinearity_eq6;
use crate::model::{FieldState, SeedConfig, SeedMode, SystemConfig, C64};
use crate::ode::{self, Control, OdeError, Step, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("integration failed (stiffness) at t = {t} s: step size underflow")]
    Stiffness { t: f64 },
    #[error("integration diverged at t = {t} s")]
    Divergence { t: f64 },
    #[error("step budget exhausted at t = {t} s")]
    StepBudget { t: f64 },
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("t_end = {t_end} must be after the initial time {t0}")]
    Interval { t0: f64, t_end: f64 },
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    AdaptiveRk,
    FixedRk4,
}

/// Which samples a trajectory keeps.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Sampling {
    /// Every accepted step.
    #[default]
    Steps,
    /// `n` equal intervals between the initial time and `t_end`.
    Uniform(usize),
    /// Explicit times in seconds (sorted; values at or before the initial
    /// time are ignored).
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// s. Also the step of [`Method::FixedRk4`].
    pub max_step: f64,
    pub method: Method,
    pub sampling: Sampling,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            method: Method::AdaptiveRk,
            sampling: Sampling::Steps,
            max_steps: 50_000_000,
        }
    }
}

impl SolverOptions {
    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DynamicsError::Options(m.to_string()));
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return bad("tolerances must be > 0");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be > 0");
        }
        if self.method == Method::FixedRk4 && !self.max_step.is_finite() {
            return bad("fixed-step RK4 needs a finite max_step");
        }
        if let Sampling::Uniform(0) = self.sampling {
            return bad("uniform sampling needs at least one interval");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<FieldState>,
    pub step_stats: StepStats,
    /// True when a stop predicate ended the run before `t_end`.
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn first(&self) -> &FieldState {
        &self.samples[0]
    }

    pub fn last(&self) -> &FieldState {
        self.samples.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }
}

/// Idler seed term in rad/s (amplitude per second).
pub fn seed_injection(t: f64, seed: &SeedConfig, gamma_minus: f64) -> C64 {
    match seed.mode {
        SeedMode::None => C64::new(0.0, 0.0),
        SeedMode::Constant => seed.epsilon * gamma_minus,
        SeedMode::ExponentialRamp => {
            let ramp = if seed.tau > 0.0 {
                -(-t.max(0.0) / seed.tau).exp_m1()
            } else {
                1.0
            };
            seed.epsilon * (gamma_minus * ramp)
        }
    }
}

/// All coefficients of the amplitude equations in one time unit. `scale = 1`
/// gives SI rates; `scale = 1/γ_n` gives rates per normalised time `γ_n·t`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Coefficients {
    g: C64,
    decay: [C64; 3],
    drive: C64,
    seed: C64,
    seed_mode: SeedMode,
    seed_tau: f64,
}

impl Coefficients {
    pub(crate) fn new(cfg: &SystemConfig, scale: f64) -> Self {
        let damping = |role| {
            let m = cfg.mode(role);
            C64::new(m.gamma_total(), cfg.delta(role)) * scale
        };
        use crate::model::Role::*;
        let seed = cfg.seed();
        Self {
            g: cfg.g() * scale,
            decay: [damping(Pump), damping(Idler), damping(Signal)],
            drive: cfg.drive().amplitude() * ((2.0 * cfg.pump().gamma_in).sqrt() * scale),
            seed: seed.epsilon * (cfg.idler().gamma_total() * scale),
            seed_mode: seed.mode,
            seed_tau: seed.tau / scale,
        }
    }

    pub(crate) fn without_seed(mut self) -> Self {
        self.seed_mode = SeedMode::None;
        self
    }

    /// Ramp seeds replaced by their long-time value.
    pub(crate) fn with_asymptotic_seed(mut self) -> Self {
        if self.seed_mode == SeedMode::ExponentialRamp {
            self.seed_mode = SeedMode::Constant;
        }
        self
    }

    fn seed_at(&self, t: f64) -> C64 {
        match self.seed_mode {
            SeedMode::None => C64::new(0.0, 0.0),
            SeedMode::Constant => self.seed,
            SeedMode::ExponentialRamp => {
                if self.seed_tau > 0.0 {
                    self.seed * -(-t.max(0.0) / self.seed_tau).exp_m1()
                } else {
                    self.seed
                }
            }
        }
    }

    #[inline]
    pub(crate) fn rhs(&self, t: f64, a: &[C64; 3]) -> [C64; 3] {
        let [a0, am, ap] = *a;
        let pump2 = a0 * a0;
        [
            -2.0 * self.g.conj() * a0.conj() * am * ap - self.decay[0] * a0 - self.drive,
            self.g * pump2 * ap.conj() - self.decay[1] * am + self.seed_at(t),
            self.g * pump2 * am.conj() - self.decay[2] * ap,
        ]
    }
}

/// Time derivative of the three amplitudes (per second):
///
/// ```text
/// dα₀/dt = −2g*·α₀*·α₋·α₊ − (γ₀ + iΔ₀)·α₀ − √(2γ₀,in)·α₀,in
/// dα₋/dt =  g·α₀²·α₊*     − (γ₋ + iΔ₋)·α₋ + seed(t)
/// dα₊/dt =  g·α₀²·α₋*     − (γ₊ + iΔ₊)·α₊
/// ```
///
/// For real `g` the first line is the familiar `−2g·α₀*·α₋·α₊`; the conjugate
/// keeps photon number conserved by the nonlinear terms for complex `g`.
pub fn rhs_full(state: &FieldState, cfg: &SystemConfig, t: f64) -> [C64; 3] {
    Coefficients::new(cfg, 1.0).rhs(t, &state.amplitudes())
}

/// Adiabatic signal amplitude `g·α₀²·α₋*/(γ₊ + iΔ₊)`.
pub fn adiabatic_signal(alpha0: C64, alpha_minus: C64, cfg: &SystemConfig) -> C64 {
    let denom = C64::new(cfg.signal().gamma_total(), cfg.delta_signal());
    cfg.g() * alpha0 * alpha0 * alpha_minus.conj() / denom
}

/// Which effective nonlinearity the reduced idler equation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReducedForm {
    /// Exact substitution of the adiabatic signal:
    /// `dα₋/dt = [|g|²|α₀|⁴/(γ₊ − iΔ₊) − (γ₋ + iΔ₋)]·α₋`.
    #[default]
    Derived,
    /// `−[γ₋(1 − g′|α₀|⁴) + i(Δ₋ − g′·Δ₊·γ₋/γ₊·|α₀|⁴)]·α₋` with `g′` taken
    /// as `|g|·(γ₊/γ₋)/√(γ₊² + Δ₊²)`. Dimensionally inconsistent with the
    /// full equations; kept for comparison only.
    AsPrinted,
}

/// Idler equation with the signal adiabatically eliminated.
pub fn rhs_reduced(alpha0: C64, alpha_minus: C64, cfg: &SystemConfig, form: ReducedForm) -> C64 {
    let gm = cfg.idler().gamma_total();
    let gp = cfg.signal().gamma_total();
    let dm = cfg.delta_idler();
    let dp = cfg.delta_signal();
    if gp < 10.0 * gm.max(cfg.pump().gamma_total()) {
        warn!("adiabatic elimination with γ₊ = {gp} not much larger than γ₋ = {gm}");
    }
    let pump4 = alpha0.norm_sqr().powi(2);
    match form {
        ReducedForm::Derived => {
            let gain = cfg.g().norm_sqr() * pump4 / C64::new(gp, -dp);
            (gain - C64::new(gm, dm)) * alpha_minus
        }
        ReducedForm::AsPrinted => {
            let gp_eff = effective_nonlinearity_eq6(cfg.g().norm(), gp, gm, dp);
            let re = gm * (1.0 - gp_eff * pump4);
            let im = dm - gp_eff * dp * gm / gp * pump4;
            -C64::new(re, im) * alpha_minus
        }
    }
}

fn map_ode_error(e: OdeError, time_scale: f64) -> DynamicsError {
    match e {
        OdeError::StepUnderflow { t, .. } => DynamicsError::Stiffness { t: t / time_scale },
        OdeError::NonFinite { t } => DynamicsError::Divergence { t: t / time_scale },
        OdeError::TooManySteps { t, .. } => DynamicsError::StepBudget { t: t / time_scale },
    }
}

/// Collects samples from accepted steps according to a [`Sampling`] plan.
struct Sampler<const N: usize> {
    targets: Vec<f64>,
    next: usize,
    every_step: bool,
    out: Vec<(f64, [C64; N])>,
}

impl<const N: usize> Sampler<N> {
    fn new(sampling: &Sampling, t0: f64, t_end: f64, y0: [C64; N]) -> Self {
        let targets = match sampling {
            Sampling::Steps => Vec::new(),
            Sampling::Uniform(n) => (1..=*n)
                .map(|k| {
                    if k == *n {
                        t_end
                    } else {
                        t0 + (t_end - t0) * k as f64 / *n as f64
                    }
                })
                .collect(),
            Sampling::Times(ts) => {
                let mut v: Vec<f64> = ts
                    .iter()
                    .copied()
                    .filter(|t| *t > t0 && *t <= t_end)
                    .collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        };
        Self {
            targets,
            next: 0,
            every_step: matches!(sampling, Sampling::Steps),
            out: vec![(t0, y0)],
        }
    }

    /// Times here are in integrator units; `to_internal` converts targets.
    fn observe(&mut self, step: &Step<'_, N>, to_internal: f64) {
        if self.every_step {
            self.out.push((step.t_new, *step.y_new));
            return;
        }
        while self.next < self.targets.len() {
            let target = self.targets[self.next] * to_internal;
            if target > step.t_new {
                break;
            }
            let y = if target >= step.t_new {
                *step.y_new
            } else {
                step.interpolate(target)
            };
            self.out.push((target, y));
            self.next += 1;
        }
    }

    /// Makes sure the last accepted state is present when stopping early.
    fn close(&mut self, t: f64, y: [C64; N]) {
        if self.out.last().map_or(true, |(tl, _)| *tl < t) {
            self.out.push((t, y));
        }
    }
}

/// Integrates a normalised system `dy/dτ = f(τ, y)`, `τ = γ_n·t`. The stop
/// predicate sees each accepted state in SI time.
pub(crate) fn run<const N: usize, F, S>(
    f: F,
    y0: [C64; N],
    t0: f64,
    t_end: f64,
    time_scale: f64,
    opts: &SolverOptions,
    mut stop: S,
) -> Result<(Vec<(f64, [C64; N])>, StepStats, bool)>
where
    F: FnMut(f64, &[C64; N]) -> [C64; N],
    S: FnMut(f64, &[C64; N]) -> bool,
{
    opts.validate()?;
    if !(t_end > t0) {
        return Err(DynamicsError::Interval { t0, t_end });
    }
    let mut sampler = Sampler::new(&opts.sampling, t0, t_end, y0);
    let mut stopped = false;
    let mut last = (t0 * time_scale, y0);
    let observer = |s: &Step<'_, N>| {
        sampler.observe(s, time_scale);
        last = (s.t_new, *s.y_new);
        if stop(s.t_new / time_scale, s.y_new) {
            stopped = true;
            Control::Stop
        } else {
            Control::Continue
        }
    };
    let stats = match opts.method {
        Method::AdaptiveRk => {
            let tol = Tolerances {
                rel: opts.rel_tol,
                abs: opts.abs_tol,
                max_step: opts.max_step * time_scale,
                max_steps: opts.max_steps,
            };
            ode::dopri5(f, t0 * time_scale, y0, t_end * time_scale, &tol, observer)
        }
        Method::FixedRk4 => ode::rk4(
            f,
            t0 * time_scale,
            y0,
            t_end * time_scale,
            opts.max_step * time_scale,
            opts.max_steps,
            observer,
        ),
    }
    .map_err(|e| map_ode_error(e, time_scale))?;
    if stopped {
        sampler.close(last.0, last.1);
    }
    let samples = sampler
        .out
        .into_iter()
        .enumerate()
        .map(|(i, (t, y))| (if i == 0 { t0 } else { t / time_scale }, y))
        .collect();
    Ok((
        samples,
        StepStats {
            accepted: stats.accepted,
            rejected: stats.rejected,
            evaluations: stats.evaluations,
        },
        stopped,
    ))
}

/// Integrates the full three-mode model from `initial` to `t_end` (seconds).
pub fn integrate(
    initial: &FieldState,
    cfg: &SystemConfig,
    t_end: f64,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    integrate_until(initial, cfg, t_end, opts, |_| false)
}

/// Like [`integrate`] but stops after the first accepted step for which
/// `stop` returns true.
pub fn integrate_until<S>(
    initial: &FieldState,
    cfg: &SystemConfig,
    t_end: f64,
    opts: &SolverOptions,
    mut stop: S,
) -> Result<Trajectory>
where
    S: FnMut(&FieldState) -> bool,
{
    let scale = cfg.time_scale();
    let coeffs = Coefficients::new(cfg, 1.0 / scale);
    let (samples, step_stats, stopped_early) = run(
        |tau, y: &[C64; 3]| coeffs.rhs(tau, y),
        initial.amplitudes(),
        initial.t,
        t_end,
        scale,
        opts,
        |t, y| stop(&FieldState::from_array(t, *y)),
    )?;
    let mut samples: Vec<FieldState> = samples
        .into_iter()
        .map(|(t, y)| FieldState::from_array(t, y))
        .collect();
    samples[0] = *initial;
    Ok(Trajectory {
        samples,
        step_stats,
        stopped_early,
    })
}

/// Integrates the reduced idler equation with `α₀` held fixed. Samples carry
/// the fixed pump and the adiabatic signal alongside `α₋`.
pub fn integrate_reduced(
    alpha0: C64,
    initial_idler: C64,
    cfg: &SystemConfig,
    t0: f64,
    t_end: f64,
    form: ReducedForm,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let scale = cfg.time_scale();
    let rate = rhs_reduced(alpha0, C64::new(1.0, 0.0), cfg, form) / scale;
    let (samples, step_stats, stopped_early) = run(
        |_, y: &[C64; 1]| [rate * y[0]],
        [initial_idler],
        t0,
        t_end,
        scale,
        opts,
        |_, _| false,
    )?;
    let samples = samples
        .into_iter()
        .map(|(t, [am])| FieldState::new(t, alpha0, am, adiabatic_signal(alpha0, am, cfg)))
        .collect();
    Ok(Trajectory {
        samples,
        step_stats,
        stopped_early,
    })
}
