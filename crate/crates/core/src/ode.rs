//! Explicit Runge–Kutta integrators for small complex systems.
//!
//! [`dopri5`] is the Dormand–Prince 5(4) pair with the continuous extension
//! from Hairer, Nørsett & Wanner (Solving ODEs I, §II.6). [`rk4`] is the
//! classical fixed-step scheme with cubic Hermite dense output. Both report
//! every accepted step to an observer that can sample the dense output or
//! stop the integration.

use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h}); problem too stiff for an explicit method")]
    StepUnderflow { t: f64, h: f64 },
    #[error("solution diverged (non-finite state) at t = {t}")]
    NonFinite { t: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// One accepted step together with its interpolant.
pub struct Step<'a, const N: usize> {
    pub t_old: f64,
    pub t_new: f64,
    pub y_old: &'a [C64; N],
    pub y_new: &'a [C64; N],
    dense: Dense<N>,
}

enum Dense<const N: usize> {
    Dopri([[C64; N]; 5]),
    Hermite { f_old: [C64; N], f_new: [C64; N] },
}

impl<const N: usize> Step<'_, N> {
    /// Dense output at `t ∈ [t_old, t_new]`.
    pub fn interpolate(&self, t: f64) -> [C64; N] {
        let h = self.t_new - self.t_old;
        if h == 0.0 {
            return *self.y_new;
        }
        let s = (t - self.t_old) / h;
        let s1 = 1.0 - s;
        match &self.dense {
            Dense::Dopri(r) => std::array::from_fn(|i| {
                r[0][i] + (r[1][i] + (r[2][i] + (r[3][i] + r[4][i] * s1) * s) * s1) * s
            }),
            Dense::Hermite { f_old, f_new } => {
                let h00 = (1.0 + 2.0 * s) * s1 * s1;
                let h10 = s * s1 * s1;
                let h01 = s * s * (3.0 - 2.0 * s);
                let h11 = -s * s * s1;
                std::array::from_fn(|i| {
                    self.y_old[i] * h00
                        + f_old[i] * (h10 * h)
                        + self.y_new[i] * h01
                        + f_new[i] * (h11 * h)
                })
            }
        }
    }
}

fn axpy<const N: usize>(y: &[C64; N], h: f64, terms: &[(f64, &[C64; N])]) -> [C64; N] {
    std::array::from_fn(|i| {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        y[i] + acc * h
    })
}

fn finite<const N: usize>(y: &[C64; N]) -> bool {
    y.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn weighted_rms<const N: usize>(v: &[C64; N], scale: &[f64; N]) -> f64 {
    let sum: f64 = v.iter().zip(scale).map(|(z, s)| z.norm_sqr() / (s * s)).sum();
    (sum / N as f64).sqrt()
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn scale<const N: usize>(tol: &Tolerances, a: &[C64; N], b: &[C64; N]) -> [f64; N] {
    std::array::from_fn(|i| tol.abs + tol.rel * a[i].norm().max(b[i].norm()))
}

fn initial_step<const N: usize, F>(
    f: &mut F,
    t0: f64,
    y0: &[C64; N],
    f0: &[C64; N],
    tol: &Tolerances,
    span: f64,
) -> f64
where
    F: FnMut(f64, &[C64; N]) -> [C64; N],
{
    let sc = scale(tol, y0, y0);
    let d0 = weighted_rms(y0, &sc);
    let d1 = weighted_rms(f0, &sc);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(tol.max_step).min(span);
    let y1 = axpy(y0, h0, &[(1.0, f0)]);
    let f1 = f(t0 + h0, &y1);
    let diff: [C64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = weighted_rms(&diff, &sc) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(tol.max_step).min(span)
}

/// Adaptive Dormand–Prince 5(4) from `t0` to `t_end`.
pub fn dopri5<const N: usize, F, O>(
    mut f: F,
    t0: f64,
    y0: [C64; N],
    t_end: f64,
    tol: &Tolerances,
    mut observer: O,
) -> Result<Stats, OdeError>
where
    F: FnMut(f64, &[C64; N]) -> [C64; N],
    O: FnMut(&Step<'_, N>) -> Control,
{
    let mut stats = Stats::default();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    stats.evaluations += 1;
    let mut h = initial_step(&mut f, t0, &y, &k1, tol, t_end - t0);
    stats.evaluations += 1;
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(OdeError::TooManySteps {
                t,
                max_steps: tol.max_steps,
            });
        }
        if h < 1e-14 * t.abs().max(t_end.abs()).max(1e-300) {
            return Err(if finite(&y) {
                OdeError::StepUnderflow { t, h }
            } else {
                OdeError::NonFinite { t }
            });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let y2 = axpy(&y, h, &[(A21, &k1)]);
        let k2 = f(t + C2 * h, &y2);
        let y3 = axpy(&y, h, &[(A31, &k1), (A32, &k2)]);
        let k3 = f(t + C3 * h, &y3);
        let y4 = axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        let k4 = f(t + C4 * h, &y4);
        let y5 = axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        let k5 = f(t + C5 * h, &y5);
        let y6 = axpy(
            &y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        let t_new = if last { t_end } else { t + h };
        let k6 = f(t_new, &y6);
        let y_new = axpy(
            &y,
            h,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let k7 = f(t_new, &y_new);
        stats.evaluations += 6;

        let err_vec: [C64; N] = std::array::from_fn(|i| {
            (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h
        });
        let err = weighted_rms(&err_vec, &scale(tol, &y, &y_new));

        if !err.is_finite() || !finite(&y_new) {
            stats.rejected += 1;
            last_rejected = true;
            h *= 0.1;
            continue;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            let rc2: [C64; N] = std::array::from_fn(|i| y_new[i] - y[i]);
            let rc3: [C64; N] = std::array::from_fn(|i| k1[i] * h - rc2[i]);
            let rc4: [C64; N] = std::array::from_fn(|i| rc2[i] - k7[i] * h - rc3[i]);
            let rc5: [C64; N] = std::array::from_fn(|i| {
                (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h
            });
            let step = Step {
                t_old: t,
                t_new,
                y_old: &y,
                y_new: &y_new,
                dense: Dense::Dopri([y, rc2, rc3, rc4, rc5]),
            };
            let control = observer(&step);
            t = t_new;
            y = y_new;
            k1 = k7;
            if control == Control::Stop {
                break;
            }
            let mut fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h = (h * fac).min(tol.max_step);
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
        }
    }
    Ok(stats)
}

/// Classical RK4 with step `h` (the last step is shortened to hit `t_end`).
pub fn rk4<const N: usize, F, O>(
    mut f: F,
    t0: f64,
    y0: [C64; N],
    t_end: f64,
    h: f64,
    max_steps: usize,
    mut observer: O,
) -> Result<Stats, OdeError>
where
    F: FnMut(f64, &[C64; N]) -> [C64; N],
    O: FnMut(&Step<'_, N>) -> Control,
{
    let mut stats = Stats::default();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    stats.evaluations += 1;
    while t < t_end {
        if stats.accepted >= max_steps {
            return Err(OdeError::TooManySteps { t, max_steps });
        }
        let (hs, t_new) = if t + h >= t_end {
            (t_end - t, t_end)
        } else {
            (h, t + h)
        };
        let k2 = f(t + 0.5 * hs, &axpy(&y, 0.5 * hs, &[(1.0, &k1)]));
        let k3 = f(t + 0.5 * hs, &axpy(&y, 0.5 * hs, &[(1.0, &k2)]));
        let k4 = f(t_new, &axpy(&y, hs, &[(1.0, &k3)]));
        let y_new = axpy(
            &y,
            hs,
            &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
        );
        if !finite(&y_new) {
            return Err(OdeError::NonFinite { t });
        }
        let k_new = f(t_new, &y_new);
        stats.evaluations += 4;
        stats.accepted += 1;
        let step = Step {
            t_old: t,
            t_new,
            y_old: &y,
            y_new: &y_new,
            dense: Dense::Hermite {
                f_old: k1,
                f_new: k_new,
            },
        };
        let control = observer(&step);
        t = t_new;
        y = y_new;
        k1 = k_new;
        if control == Control::Stop {
            break;
        }
    }
    Ok(stats)
}
