#![allow(dead_code)]

use rand::Rng;
use sapphire_fwm::model::{
    matched_signal_omega, FieldState, Frame, ModeParams, PumpDrive, Role, SeedConfig,
    SystemConfig, C64,
};

pub const W0: f64 = 1.0e3;
pub const WM: f64 = 0.9e3;

/// Desk-scale rates with `γ₋ = 1`.
#[derive(Debug, Clone, Copy)]
pub struct Desk {
    pub g: C64,
    pub gamma0: f64,
    /// Fraction of `γ₀` through the input port.
    pub in_fraction: f64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    pub delta0: f64,
    pub delta_minus: f64,
    pub flux: f64,
    pub phase: f64,
    pub seed: SeedConfig,
}

impl Default for Desk {
    fn default() -> Self {
        Self {
            g: C64::new(1.0, 0.0),
            gamma0: 1.0,
            in_fraction: 0.5,
            gamma_minus: 1.0,
            gamma_plus: 10.0,
            delta0: 0.0,
            delta_minus: 0.0,
            flux: 1.0,
            phase: 0.0,
            seed: SeedConfig::constant(C64::new(1e-6, 0.0)),
        }
    }
}

impl Desk {
    pub fn build(&self) -> SystemConfig {
        let pump = ModeParams::new(
            Role::Pump,
            W0,
            0.0,
            self.in_fraction * self.gamma0,
            (1.0 - self.in_fraction) * self.gamma0,
        )
        .unwrap();
        let idler = ModeParams::new(Role::Idler, WM, self.gamma_minus / 2.0, 0.0, self.gamma_minus / 2.0)
            .unwrap();
        let signal = ModeParams::new(
            Role::Signal,
            matched_signal_omega(W0, WM),
            self.gamma_plus / 2.0,
            0.0,
            self.gamma_plus / 2.0,
        )
        .unwrap();
        let drive = PumpDrive::from_flux(self.flux, W0 + self.delta0, self.phase).unwrap();
        SystemConfig::new(
            pump,
            idler,
            signal,
            self.g,
            drive,
            self.seed,
            Frame {
                idler_offset: self.delta_minus,
                normalization: None,
            },
        )
        .unwrap()
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            g: C64::from_polar(10f64.powf(rng.random_range(-1.0..1.0)), rng.random_range(-3.0..3.0)),
            gamma0: rng.random_range(0.3..3.0),
            in_fraction: rng.random_range(0.1..0.9),
            gamma_minus: 1.0,
            gamma_plus: rng.random_range(2.0..50.0),
            delta0: rng.random_range(-2.0..2.0),
            delta_minus: 0.0,
            flux: 1.0,
            phase: rng.random_range(-3.0..3.0),
            seed: SeedConfig::constant(C64::new(1e-6, 0.0)),
        }
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn start(cfg: &SystemConfig) -> FieldState {
    let z = C64::new(0.0, 0.0);
    FieldState::new(0.0, sapphire_fwm::analysis::pump_only_steady_state(cfg), z, z)
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}
