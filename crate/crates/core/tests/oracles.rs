//! Reference values computed once with 40-digit quadrature and polylog
//! routines, plus cross-checks against small independent integrators.

use orthomode::dynamics::{simulate_emitter, simulate_transfer, LinkParams, NodeParams, SimOptions};
use orthomode::modes::{mode_overlap, TemporalMode};
use orthomode::pulses::{synthesize, PulseSettings, PulseSpec};
use orthomode::specfun::{polylog_neg_exp, PolylogOrder};
use orthomode::transfer::{
    delay_grid, detuning_sweep, global_fit, synthetic_sweeps, CascadeSetup, FitOptions, PfModel,
};
use orthomode::units::{angular_to_mhz, mhz_to_angular};
use orthomode::Error;

fn gamma() -> f64 {
    mhz_to_angular(14.0)
}

#[test]
fn polylog_reference_values() {
    let cases = [
        (PolylogOrder::TWO, 0.5, -0.5332172799948812511664),
        (PolylogOrder::TWO, 3.0, -0.04918072033882422663106),
        (PolylogOrder::THREE, 0.5, -0.5671842444922777342039),
        (PolylogOrder::THREE, 3.0, -0.04948170145479613173221),
        (PolylogOrder::FOUR, 0.5, -0.5858664753250889837616),
        (PolylogOrder::FOUR, 3.0, -0.04963364641182007543700),
    ];
    for (s, x, want) in cases {
        let got = polylog_neg_exp(s, x).unwrap();
        assert!((got - want).abs() < 2e-15, "Li{}(-e^-{x}) = {got}", s.get());
    }
}

#[test]
fn cumulative_reference_values() {
    let g = gamma();
    let f2 = TemporalMode::closed_form(2, g).unwrap();
    let f1 = TemporalMode::closed_form(1, g).unwrap();
    assert!((f2.cumulative(2.0 / g) - 0.5681341388055560034108).abs() < 1e-13);
    assert!((f1.cumulative(-1.5 / g) - 0.4371789881278430027282).abs() < 1e-13);
    assert!((f2.survival(2.0 / g) - (1.0 - 0.5681341388055560034108)).abs() < 1e-13);
}

#[test]
fn overlap_reference_values() {
    let g = gamma();
    let f0 = TemporalMode::closed_form(0, g).unwrap();
    let f1 = TemporalMode::closed_form(1, g).unwrap();
    let f2 = TemporalMode::closed_form(2, g).unwrap();
    let o01 = mode_overlap(&f0, &f1, 0.5 / g);
    let o12 = mode_overlap(&f1, &f2, 0.7 / g);
    assert!((o01 - 0.1364068719975723280425).abs() < 1e-10, "{o01}");
    assert!((o12 - 0.2087751284288675209687).abs() < 1e-10, "{o12}");
}

#[test]
fn efficiency_reference_value() {
    let g = mhz_to_angular(24.0);
    let model = PfModel::new(g, 2).unwrap();
    let tau0 = 145.9e-9;
    let pf = model.pf(0, 1, tau0 + 0.3 / g, tau0, 0.17).unwrap();
    assert!((pf - 0.005634136319162804392871).abs() < 1e-12, "{pf}");
}

/// Plain real RK4 of `α' = gβ, β' = -gα - κβ/2` on the same sample grid,
/// with the same four-point midpoint interpolation of the drive.
fn real_oracle(samples: &[f64], dt: f64, kappa: f64, extra: usize) -> Vec<(f64, f64)> {
    let at = |k: i64| {
        if k < 0 || k as usize >= samples.len() {
            0.0
        } else {
            samples[k as usize]
        }
    };
    let rhs = |g: f64, a: f64, b: f64| (g * b, -g * a - 0.5 * kappa * b);
    let (mut a, mut b) = (1.0, 0.0);
    let mut out = vec![(a, b)];
    for j in 0..(samples.len() + extra - 1) as i64 {
        let g0 = at(j);
        let gm = (-at(j - 1) + 9.0 * at(j) + 9.0 * at(j + 1) - at(j + 2)) / 16.0;
        let g1 = at(j + 1);
        let k1 = rhs(g0, a, b);
        let k2 = rhs(gm, a + 0.5 * dt * k1.0, b + 0.5 * dt * k1.1);
        let k3 = rhs(gm, a + 0.5 * dt * k2.0, b + 0.5 * dt * k2.1);
        let k4 = rhs(g1, a + dt * k3.0, b + dt * k3.1);
        a += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        b += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        out.push((a, b));
    }
    out
}

#[test]
fn complex_integrator_matches_real_form() {
    let kappa = mhz_to_angular(26.7);
    let node = NodeParams::new(kappa);
    for n in 0..=2 {
        let mode = TemporalMode::closed_form(n, gamma()).unwrap();
        let wf = synthesize(&PulseSpec::emit(mode, kappa)).unwrap();
        let traj = simulate_emitter(&wf, &node, &SimOptions::default()).unwrap();
        let real: Vec<f64> = wf.samples.iter().map(|s| s.re).collect();
        let oracle = real_oracle(&real, wf.dt, kappa, traj.len() - wf.len());
        assert_eq!(oracle.len(), traj.len());
        for (k, (a, b)) in oracle.iter().enumerate() {
            assert!((traj.emitter.alpha[k].re - a).abs() < 1e-12);
            assert!((traj.emitter.beta[k].re - b).abs() < 1e-12);
            assert!(traj.emitter.alpha[k].im.abs() < 1e-15);
        }
    }
}

#[test]
fn emitter_releases_everything_without_decay() {
    let kappa = mhz_to_angular(26.7);
    let settings = PulseSettings { tail: 1e-6, ..Default::default() };
    for n in 0..=2 {
        let mode = TemporalMode::closed_form(n, gamma()).unwrap();
        let wf = synthesize(&PulseSpec::emit(mode, kappa).with_settings(settings)).unwrap();
        let traj = simulate_emitter(&wf, &NodeParams::new(kappa), &SimOptions::default()).unwrap();
        let s = traj.summary();
        assert!((s.emitted - 1.0).abs() < 1e-3, "n={n}: emitted {}", s.emitted);
        assert!(s.norm_defect < 1e-8);
    }
}

fn cascade(tail: f64) -> CascadeSetup {
    let mut setup = CascadeSetup::new(
        mhz_to_angular(24.0),
        NodeParams::new(mhz_to_angular(26.7)),
        NodeParams::new(mhz_to_angular(30.7)),
        LinkParams::new(145.9e-9, 0.17).unwrap(),
    );
    setup.settings.tail = tail;
    setup
}

#[test]
fn matched_transfer_reaches_link_transmission() {
    let setup = cascade(1e-6);
    for n in 0..=2 {
        let pf = setup.simulate_pf(n, n, setup.link.delay).unwrap();
        assert!((pf - 0.83).abs() < 5e-3, "n={n}: {pf}");
    }
    let cross = setup.simulate_pf(0, 1, setup.link.delay).unwrap();
    assert!(cross < 5e-3, "{cross}");
}

#[test]
fn simulated_sweep_follows_model() {
    // with tight windows the simulated curve converges onto the overlap model
    let setup = cascade(1e-6);
    let model = PfModel::new(setup.gamma, 2).unwrap();
    for k in -4..=4 {
        let tau = setup.link.delay + k as f64 * 2e-9;
        let sim = setup.simulate_pf(1, 1, tau).unwrap();
        let ideal = model.pf(1, 1, tau, setup.link.delay, 0.17).unwrap();
        assert!((sim - ideal).abs() < 1e-4, "tau offset {k}: {sim} vs {ideal}");
    }
}

#[test]
fn mismatched_sample_periods_are_rejected() {
    let setup = cascade(1e-3);
    let mode = TemporalMode::closed_form(0, setup.gamma).unwrap();
    let emit = synthesize(&PulseSpec::emit(mode.clone(), setup.emitter.kappa)).unwrap();
    let settings = PulseSettings { dt: 0.05e-9, ..Default::default() };
    let absorb =
        synthesize(&PulseSpec::absorb(mode, setup.receiver.kappa).with_settings(settings)).unwrap();
    let res = simulate_transfer(
        &emit,
        &absorb,
        (&setup.emitter, &setup.receiver),
        &setup.link,
        &SimOptions::default(),
    );
    assert!(matches!(res, Err(Error::Usage(_))));
}

#[test]
fn global_fit_is_unbiased() {
    let g = mhz_to_angular(24.0);
    let model = PfModel::new(g, 2).unwrap();
    let grid = delay_grid(145.9e-9, 40e-9, 41);
    let runs = 40;
    let (mut tau, mut p) = (0.0, 0.0);
    for seed in 0..runs {
        let sweeps = synthetic_sweeps(&model, &grid, 145.9e-9, 0.17, 0.01, seed).unwrap();
        let fit = global_fit(&sweeps, &FitOptions::default()).unwrap();
        tau += fit.tau0;
        p += fit.p_loss;
    }
    tau /= runs as f64;
    p /= runs as f64;
    assert!((tau - 145.9e-9).abs() < 0.02e-9, "mean tau0 {tau}");
    assert!((p - 0.17).abs() < 1e-3, "mean p_loss {p}");
}

#[test]
fn resonant_link_has_ridge_through_origin() {
    let setup = cascade(PulseSettings::default().tail);
    let grid: Vec<f64> = (-5..=5).map(|k| mhz_to_angular(0.3 * k as f64)).collect();
    let map = detuning_sweep(&setup, 0.0, &grid, &grid).unwrap();
    let ridge = map.ridge.clone().unwrap();
    assert!((ridge.slope - 1.0).abs() < 0.05, "{}", ridge.slope);
    assert!(angular_to_mhz(ridge.intercept).abs() < 0.05);
    let (da, db, _) = map.maximum();
    assert!(da.abs() < 1e-9 && db.abs() < 1e-9);
}

#[test]
fn fast_modes_are_infeasible() {
    let mode = TemporalMode::closed_form(0, mhz_to_angular(30.0)).unwrap();
    let res = synthesize(&PulseSpec::emit(mode, mhz_to_angular(26.7)));
    assert!(matches!(res, Err(Error::Infeasible { .. })));
}

