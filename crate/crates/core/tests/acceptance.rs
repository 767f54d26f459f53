//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails that is not listed in `KNOWN_RED`.

mod common;

use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Instant;

use common::{rel, slope, start, Desk};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapphire_fwm::analysis::{
    adiabatic_threshold_gain, effective_nonlinearity_from_threshold, onset_delay,
    oscillation_threshold, pump_only_steady_state, sideband_growth_rate, steady_state,
    sweep_detuning, OnsetCriteria, SteadyOptions, SweepOptions, ThresholdCriterion,
    ThresholdOptions, REPORTED_G_EFF_RANGE,
};
use sapphire_fwm::dynamics::{integrate, Sampling, SolverOptions};
use sapphire_fwm::model::{FieldState, SeedConfig, SystemConfig, C64, HBAR};

/// Criteria expected to fail. Part 2b checks the adiabatic closed form on
/// configurations where it is not the exact crossing of the sideband matrix.
const KNOWN_RED: &[&str] = &["2b"];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: &'static str, title: &str, pass: bool, detail: String, t: Instant) -> Outcome {
    println!(
        "criterion {id:<3} {:<4} {title}: {detail} [{:.2} s]",
        if pass { "PASS" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    );
    Outcome { id, pass, detail }
}

fn threshold_gain(cfg: &SystemConfig, power: f64) -> f64 {
    let c = cfg.with_power(power).unwrap();
    let a2 = pump_only_steady_state(&c).norm_sqr();
    c.g().norm_sqr() * a2 * a2
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = SolverOptions::default()
        .with_tolerances(1e-11, 1e-14)
        .with_sampling(Sampling::Uniform(1));
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut d = Desk::random(&mut rng);
        d.g = C64::new(0.0, 0.0);
        d.seed = SeedConfig::none();
        d.flux = 10f64.powf(rng.random_range(-2.0..4.0));
        d.delta0 = rng.random_range(-5.0..5.0);
        let cfg = d.build();
        let traj = integrate(&FieldState::zero(0.0), &cfg, 40.0 / d.gamma0, &opts).unwrap();
        let want = pump_only_steady_state(&cfg);
        worst = worst.max((traj.last().alpha0 - want).norm() / want.norm());
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        "1",
        "pump-only oracle, 100 random g = 0 configs",
        worst < 1e-9 && secs < 10.0,
        format!("max rel error {worst:.2e} (tol 1e-9), {secs:.2} s (limit 10 s)"),
        t,
    )
}

fn criterion_2() -> Vec<Outcome> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = ThresholdOptions::default();
    let mut worst_methods = 0.0f64;
    let mut worst_exact = 0.0f64;
    let mut worst_adiabatic = 0.0f64;
    let mut worst_adiabatic_resonant = 0.0f64;
    for k in 0..20 {
        let mut d = Desk::random(&mut rng);
        // half the configs exercise Δ₋ ≠ 0, the rest carry the closed-form checks
        if k % 2 == 1 {
            d.delta_minus = rng.random_range(-1.0..1.0);
        }
        let cfg = d.build();
        let e = oscillation_threshold(&cfg, ThresholdCriterion::EigenvalueCrossing, &opts).unwrap();
        let s = oscillation_threshold(&cfg, ThresholdCriterion::SimulatedOnset, &opts).unwrap();
        worst_methods = worst_methods.max(rel(s.power_threshold, e.power_threshold));
        if k % 2 == 0 {
            let got = threshold_gain(&cfg, e.power_threshold);
            let (gm, gp, dp) = (d.gamma_minus, d.gamma_plus, cfg.delta_signal());
            let exact = gm * gp * (1.0 + (dp / (gm + gp)).powi(2));
            worst_exact = worst_exact.max(rel(got, exact));
            worst_adiabatic = worst_adiabatic.max(rel(got, adiabatic_threshold_gain(&cfg)));
            // the same closed form with Δ₊ = 0 as well
            let mut r = d;
            r.delta0 = 0.0;
            let rc = r.build();
            let er = oscillation_threshold(&rc, ThresholdCriterion::EigenvalueCrossing, &opts).unwrap();
            let gr = threshold_gain(&rc, er.power_threshold);
            worst_adiabatic_resonant = worst_adiabatic_resonant.max(rel(gr, adiabatic_threshold_gain(&rc)));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    vec![
        report(
            "2a",
            "threshold: eigenvalue crossing vs simulated onset, 20 desk configs",
            worst_methods < 0.01 && secs < 120.0,
            format!("max rel difference {worst_methods:.2e} (tol 1e-2), {secs:.1} s (limit 120 s)"),
            t,
        ),
        report(
            "2b",
            "threshold: |g|²|α₀|⁴ = γ₋(γ₊²+Δ₊²)/γ₊ at Δ₋ = 0, Δ₊ ≠ 0",
            worst_adiabatic < 1e-10,
            format!(
                "max rel error {worst_adiabatic:.2e} (tol 1e-10); adiabatic form drops O(Δ₊²/(γ₋+γ₊)²)"
            ),
            t,
        ),
        report(
            "2c",
            "threshold: same closed form at Δ₋ = Δ₊ = 0",
            worst_adiabatic_resonant < 1e-10,
            format!("max rel error {worst_adiabatic_resonant:.2e} (tol 1e-10)"),
            t,
        ),
        report(
            "2d",
            "threshold: exact crossing γ₋γ₊[1+(Δ₊/(γ₋+γ₊))²] at Δ₋ = 0",
            worst_exact < 1e-10,
            format!("max rel error {worst_exact:.2e} (tol 1e-10)"),
            t,
        ),
    ]
}

fn flux_balance_rows(cfg: &SystemConfig, offsets: &[f64]) -> (usize, f64) {
    let sweep = sweep_detuning(cfg, offsets, &SweepOptions::default()).unwrap();
    let (i, s) = (cfg.idler(), cfg.signal());
    let mut count = 0;
    let mut worst = 0.0f64;
    for r in sweep.rows.iter().filter(|r| r.converged && r.oscillating) {
        let nm = r.idler_power / (HBAR * i.omega * 2.0 * i.gamma_out);
        let np = r.signal_power / (HBAR * s.omega * 2.0 * s.gamma_out);
        worst = worst.max(rel(i.gamma_total() * nm, s.gamma_total() * np));
        count += 1;
    }
    (count, worst)
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let cfg = SystemConfig::default();
    let offsets: Vec<f64> = (0..50).map(|k| -4000.0 + 8000.0 * k as f64 / 49.0).collect();
    let (count, worst) = flux_balance_rows(&cfg, &offsets);
    report(
        "3",
        "flux balance γ₋|α₋|² = γ₊|α₊|², 50-point detuning sweep",
        count > 0 && worst < 1e-6,
        format!("{count} oscillating rows, max rel error {worst:.2e} (tol 1e-6)"),
        t,
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let cfg = SystemConfig::default();
    let offsets: Vec<f64> = (0..21).map(|k| -1000.0 + 100.0 * k as f64).collect();
    let sweep = sweep_detuning(&cfg, &offsets, &SweepOptions::default()).unwrap();
    let rows: Vec<_> = sweep.rows.iter().filter(|r| r.oscillating).collect();
    let x: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.signal_offset_hz.unwrap()).collect();
    let yi: Vec<f64> = rows.iter().map(|r| r.idler_offset_hz.unwrap()).collect();
    let (ss, si) = (slope(&x, &ys), slope(&x, &yi));
    let spread = yi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - yi.iter().cloned().fold(f64::INFINITY, f64::min);
    report(
        "4",
        "frequency clamping over ±1 kHz, γ₊/γ₋ = 1e3",
        rows.len() == offsets.len() && (ss - 2.0).abs() <= 0.05 && si.abs() * 100.0 <= ss.abs(),
        format!(
            "signal slope {ss:.4} (2.00 ± 0.05), idler slope {si:.2e}, idler spread {spread:.2} Hz, {}/{} rows oscillating",
            rows.len(),
            offsets.len()
        ),
        t,
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = ThresholdOptions::default();
    let mut worst = 0.0f64;
    let mut oscillating = 0;
    for k in 0..20 {
        let mut d = Desk::random(&mut rng);
        if k % 2 == 1 {
            d.delta_minus = rng.random_range(-1.0..1.0);
        }
        let base = d.build();
        let th = oscillation_threshold(&base, ThresholdCriterion::EigenvalueCrossing, &opts).unwrap();
        let cfg = base
            .with_power(th.power_threshold * rng.random_range(1.5..6.0))
            .unwrap();
        let ss = steady_state(&cfg, &start(&cfg), &SteadyOptions::default()).unwrap();
        if ss.oscillating {
            oscillating += 1;
        }
        worst = worst.max(sideband_growth_rate(ss.state.alpha0, &cfg).abs() / d.gamma_minus);
    }
    report(
        "5",
        "gain clamping max Re eig M(α₀_ss) = 0, 20 above-threshold configs",
        oscillating == 20 && worst < 1e-4,
        format!("{oscillating}/20 oscillating, max |Re λ|/γ₋ = {worst:.2e} (tol 1e-4)"),
        t,
    )
}

fn max_mismatch(a: &[FieldState], b: &[FieldState], scale: f64, map: impl Fn(C64) -> C64) -> f64 {
    let mut worst = 0.0f64;
    let mut peak = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in x.amplitudes().iter().zip(y.amplitudes()) {
            peak = peak.max(u.norm());
            worst = worst.max((map(*u) * scale - v).norm());
        }
    }
    worst / (peak * scale)
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let d = Desk {
        delta0: 0.4,
        delta_minus: 0.1,
        flux: 20.0,
        ..Desk::default()
    };
    let opts = SolverOptions::default()
        .with_tolerances(1e-11, 1e-16)
        .with_sampling(Sampling::Uniform(400));
    let run = |cfg: &SystemConfig| integrate(&FieldState::zero(0.0), cfg, 60.0, &opts).unwrap().samples;
    let base = d.build();
    let reference = run(&base);

    // drive and seed rotated together: every amplitude picks up the same phase
    let phi = 1.234;
    let rotated = Desk {
        phase: phi,
        seed: SeedConfig::constant(C64::from_polar(1e-6, phi)),
        ..d
    };
    let rot = run(&rotated.build());
    let mut phase_err = 0.0f64;
    for (x, y) in reference.iter().zip(&rot) {
        for (u, v) in x.amplitudes().iter().zip(y.amplitudes()) {
            phase_err = phase_err.max((u.norm() - v.norm()).abs() / u.norm().max(1e-3));
        }
    }

    let mut scale_err = 0.0f64;
    for s in [0.1, 10.0] {
        let scaled = Desk {
            g: d.g / (s * s),
            flux: d.flux * s * s,
            seed: SeedConfig::constant(C64::new(1e-6 * s, 0.0)),
            ..d
        };
        let traj = run(&scaled.build());
        scale_err = scale_err.max(max_mismatch(&reference, &traj, s, |u| u));
    }
    let osc = reference.last().unwrap().alpha_minus.norm() > 1e-3;
    report(
        "6",
        "symmetries: drive-phase rotation and (g, α_in, ε) scaling, s ∈ {0.1, 10}",
        osc && phase_err < 1e-6 && scale_err < 1e-6,
        format!(
            "|α| change under rotation {phase_err:.2e}, scaling mismatch {scale_err:.2e} (tol 1e-6, relative to peak)"
        ),
        t,
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let cfg = SystemConfig::default();
    let th = oscillation_threshold(&cfg, ThresholdCriterion::EigenvalueCrossing, &Default::default())
        .unwrap();
    let p = cfg.pump();
    let (g0, d0, gin, w0, pt) = (
        p.gamma_total(),
        cfg.delta_pump(),
        p.gamma_in,
        p.omega,
        th.power_threshold,
    );
    let got = effective_nonlinearity_from_threshold(g0, d0, gin, w0, pt).unwrap();
    let by_hand = (g0 * g0 + d0 * d0) / (2.0 * gin) * (HBAR * w0 / pt);
    // fixed arithmetic example: γ₀ = 3, Δ₀ = 4, γ_in = 1.25, ω₀ = 2, P = 0.5 ⇒ 10·ħ·4
    let fixed = effective_nonlinearity_from_threshold(3.0, 4.0, 1.25, 2.0, 0.5).unwrap();
    let pass = got == by_hand && rel(fixed, 40.0 * HBAR) < 1e-15;
    let (lo, hi) = REPORTED_G_EFF_RANGE;
    let mut sweep = Vec::new();
    for off in [-2000.0, -500.0, 0.0, 500.0, 2000.0] {
        let c = cfg.with_pump_offset_hz(off).unwrap();
        let th = oscillation_threshold(&c, ThresholdCriterion::EigenvalueCrossing, &Default::default())
            .unwrap();
        let g = effective_nonlinearity_from_threshold(
            c.pump().gamma_total(),
            c.delta_pump(),
            c.pump().gamma_in,
            c.pump().omega,
            th.power_threshold,
        )
        .unwrap();
        sweep.push(format!("{off:+.0} Hz: {g:.2e}"));
    }
    report(
        "7",
        "effective nonlinearity from threshold",
        pass,
        format!(
            "g' = {got:.4e} at threshold {pt:.4e} W; reported (not asserted) vs [{lo:e}, {hi:e}]: {}",
            sweep.join(", ")
        ),
        t,
    )
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let base = SystemConfig::default()
        .with_seed(SeedConfig::ramp(C64::new(1e-6, 0.0), 2.0))
        .unwrap();
    let th = oscillation_threshold(&base, ThresholdCriterion::EigenvalueCrossing, &Default::default())
        .unwrap();
    let opts = SolverOptions::default().with_sampling(Sampling::Uniform(4000));
    let mut delays = Vec::new();
    for factor in [1.5, 2.0, 3.0, 5.0, 10.0] {
        let cfg = base.with_power(th.power_threshold * factor).unwrap();
        let traj = integrate(&FieldState::zero(0.0), &cfg, 20.0, &opts).unwrap();
        delays.push(onset_delay(&traj, &OnsetCriteria::default()).ok().flatten());
    }
    let values: Vec<f64> = delays.iter().map(|d| d.unwrap_or(f64::NAN)).collect();
    let decreasing = delays.iter().all(Option::is_some) && values.windows(2).all(|w| w[1] < w[0]);
    report(
        "8",
        "onset delay with ramp seed (τ = 2 s) decreases with power",
        decreasing,
        format!(
            "delays at {{1.5, 2, 3, 5, 10}}×P_th: {}",
            values
                .iter()
                .map(|d| format!("{d:.3} s"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
        t,
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fwm"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .stdout(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let cases: &[(&str, &[&str])] = &[
        ("trajectory.csv", &["simulate", "--t-end", "1", "--samples", "200", "--pump-offset-hz", "2671"]),
        ("steady.csv", &["steady", "--pump-offset-hz", "500"]),
        ("threshold.csv", &["threshold"]),
        ("threshold.csv", &["threshold", "--criterion", "onset"]),
        ("sweep_detuning.csv", &["sweep-detuning", "--points", "9"]),
        ("sweep_power.csv", &["sweep-power", "--points", "6"]),
        ("nonlinearity.csv", &["nonlinearity", "--points", "9"]),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for (k, (file, args)) in cases.iter().enumerate() {
        let (a, b) = (tmp.path().join(format!("{k}a")), tmp.path().join(format!("{k}b")));
        let ok = run_cli(&a, args) && run_cli(&b, args);
        let same = ok
            && std::fs::read(a.join(file)).ok().is_some_and(|x| {
                std::fs::read(b.join(file)).ok().as_ref() == Some(&x)
            });
        if !same {
            failures.push(args[0].to_string());
        }
    }
    report(
        "9",
        "CLI reproducibility, every subcommand run twice",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} invocations byte-identical", cases.len())
        } else {
            format!("differing or failing: {}", failures.join(", "))
        },
        t,
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments; the suite always runs whole.
    println!("acceptance suite");
    let mut outcomes = vec![criterion_1()];
    outcomes.extend(criterion_2());
    outcomes.push(criterion_3());
    outcomes.push(criterion_4());
    outcomes.push(criterion_5());
    outcomes.push(criterion_6());
    outcomes.push(criterion_7());
    outcomes.push(criterion_8());
    outcomes.push(criterion_9());

    let unexpected: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_RED.contains(&o.id))
        .collect();
    let known: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| !o.pass && KNOWN_RED.contains(&o.id))
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!(
        "acceptance: {passed}/{} passed, {} known red, {} unexpected failures",
        outcomes.len(),
        known.len(),
        unexpected.len()
    );
    for o in &known {
        println!("  known red {}: {}", o.id, o.detail);
    }
    for o in KNOWN_RED {
        if outcomes.iter().any(|x| x.id == *o && x.pass) {
            println!("  note: {o} is listed as known red but passed");
        }
    }
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
