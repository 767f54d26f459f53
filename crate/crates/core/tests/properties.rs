mod common;

use common::{rel, start, Desk};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapphire_fwm::analysis::{
    linearized_sideband_matrix, eigenvalues, oscillation_threshold, pump_only_steady_state,
    steady_state, ThresholdCriterion, ThresholdOptions,
};
use sapphire_fwm::dynamics::{integrate, Sampling, SolverOptions};
use sapphire_fwm::model::{FieldState, SeedConfig, C64};

fn threshold(d: &Desk) -> f64 {
    oscillation_threshold(&d.build(), ThresholdCriterion::EigenvalueCrossing, &ThresholdOptions::default())
        .unwrap()
        .power_threshold
}

#[test]
fn threshold_is_monotone_in_idler_loss_and_detuning() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let d = Desk::random(&mut rng);
        let mut last = 0.0;
        for gm in [0.5, 1.0, 2.0, 4.0] {
            let p = threshold(&Desk { gamma_minus: gm, ..d });
            assert!(p >= last);
            last = p;
        }
        for sign in [1.0, -1.0] {
            let mut last = 0.0;
            for dm in [0.0, 0.3, 1.0, 3.0] {
                // |Δ₋| grows while the pump detuning is held fixed
                let p = threshold(&Desk { delta_minus: sign * dm, delta0: 0.0, ..d });
                assert!(p >= last * (1.0 - 1e-12));
                last = p;
            }
        }
    }
}

#[test]
fn best_detuning_ignores_drive_and_coupling_phase() {
    let d = Desk { gamma_plus: 7.0, delta_minus: 0.3, ..Desk::default() };
    let offsets: Vec<f64> = (0..41).map(|k| -2.0 + 0.1 * k as f64).collect();
    let argmin = |d: Desk| {
        let mut best = (f64::INFINITY, 0.0);
        for &x in &offsets {
            let flux = threshold(&Desk { delta0: x, ..d }) / (sapphire_fwm::model::HBAR * (common::W0 + x));
            if flux < best.0 {
                best = (flux, x);
            }
        }
        best.1
    };
    let reference = argmin(d);
    assert_eq!(argmin(Desk { phase: 2.1, ..d }), reference);
    assert_eq!(argmin(Desk { g: d.g * C64::from_polar(1.0, -0.7), ..d }), reference);
}

#[test]
fn linear_stability_predicts_simulated_decay() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let opts = SolverOptions::default().with_sampling(Sampling::Uniform(1));
    for _ in 0..10 {
        let mut d = Desk::random(&mut rng);
        d.seed = SeedConfig::none();
        let base = d.build();
        let th = threshold(&d);
        for factor in [0.7, 1.4] {
            let cfg = base.with_power(th * factor).unwrap();
            let a0 = pump_only_steady_state(&cfg);
            let stable = eigenvalues(&linearized_sideband_matrix(a0, &cfg))
                .iter()
                .all(|l| l.re < 0.0);
            assert_eq!(stable, factor < 1.0);
            let kick = C64::new(1e-8, 0.0);
            let init = FieldState::new(0.0, a0, kick, kick);
            let end = integrate(&init, &cfg, 30.0, &opts).unwrap();
            let grew = end.last().alpha_minus.norm() > 1e-8;
            assert_eq!(grew, !stable, "factor {factor}, {d:?}");
        }
    }
}

#[test]
fn steady_state_matches_analytic_oscillation() {
    // Δ₀ = Δ₋ = 0: α₀ clamps at |g||α₀|² = √(γ₋γ₊) and the pump equation
    // fixes the sideband photon number.
    let d = Desk { flux: 40.0, ..Desk::default() };
    let cfg = d.build();
    let ss = steady_state(&cfg, &start(&cfg), &Default::default()).unwrap();
    let (gm, gp) = (d.gamma_minus, d.gamma_plus);
    let a0 = ss.state.alpha0.norm();
    assert!(rel(d.g.norm() * a0 * a0, (gm * gp).sqrt()) < 1e-9);
    // |dα₀/dt| = 0: γ₀|α₀| + 2|g||α₀||α₋||α₊| = √(2γ_in)|α_in| with phases aligned
    let am = ss.state.alpha_minus.norm();
    let ap = ss.state.alpha_plus.norm();
    let lhs = d.gamma0 * a0 + 2.0 * d.g.norm() * a0 * am * ap;
    let rhs = (2.0 * d.gamma0 * d.in_fraction).sqrt() * d.flux.sqrt();
    assert!(rel(lhs, rhs) < 1e-9);
    assert!(ss.pulling.abs() < 1e-9);
}

#[test]
fn random_above_threshold_states_satisfy_balances() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let mut d = Desk::random(&mut rng);
        d.delta_minus = rng.random_range(-1.0..1.0);
        let base = d.build();
        let cfg = base.with_power(threshold(&d) * rng.random_range(1.5..5.0)).unwrap();
        let ss = steady_state(&cfg, &start(&cfg), &Default::default()).unwrap();
        assert!(ss.oscillating && ss.converged);
        let (nm, np) = (ss.state.alpha_minus.norm_sqr(), ss.state.alpha_plus.norm_sqr());
        assert!(rel(d.gamma_minus * nm, d.gamma_plus * np) < 1e-6);
        let nu = std::f64::consts::TAU * ss.pulling;
        let (dm, dp) = (cfg.delta_idler() + nu, cfg.delta_signal() - nu);
        assert!((dm * nm - dp * np).abs() < 1e-6 * d.gamma_minus * nm);
    }
}
