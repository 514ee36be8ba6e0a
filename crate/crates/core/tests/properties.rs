use orthomode::modes::{mode_overlap, TemporalMode};
use orthomode::pulses::{count_sign_changes, synthesize, PulseSpec};
use orthomode::specfun::{log1p_exp, polylog_neg_exp, sech, PolylogOrder};
use orthomode::transfer::{PfModel, Selectivity, TransferMatrix};
use orthomode::units::mhz_to_angular;
use orthomode::Error;
use proptest::prelude::*;

fn mode(n: usize, gamma_mhz: f64) -> TemporalMode {
    TemporalMode::closed_form(n, mhz_to_angular(gamma_mhz)).unwrap()
}

proptest! {
    #[test]
    fn log1p_exp_identity(x in -700.0f64..700.0) {
        // ln(1 + e^-x) - ln(1 + e^x) = -x
        let d = log1p_exp(x) - log1p_exp(-x);
        prop_assert!((d + x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn sech_is_even_and_bounded(x in -800.0f64..800.0) {
        prop_assert_eq!(sech(x), sech(-x));
        prop_assert!(sech(x) > 0.0 || x.abs() > 700.0);
        prop_assert!(sech(x) <= 1.0);
    }

    #[test]
    fn polylog_approaches_leading_term(x in 20.0f64..700.0, s in 2u32..=4) {
        // Li_s(-e^-x) = -e^-x (1 - e^-x / 2^s + ...)
        let v = polylog_neg_exp(PolylogOrder::new(s).unwrap(), x).unwrap();
        let lead = -(-x).exp();
        prop_assert!((v - lead).abs() <= 1e-8 * lead.abs());
    }

    #[test]
    fn polylog_is_monotone(x in 0.0f64..30.0, h in 1e-3f64..1.0, s in 2u32..=4) {
        let order = PolylogOrder::new(s).unwrap();
        prop_assert!(polylog_neg_exp(order, x + h).unwrap() > polylog_neg_exp(order, x).unwrap());
    }

    #[test]
    fn modes_have_definite_parity(n in 0usize..=4, u in -20.0f64..20.0, g in 5.0f64..40.0) {
        let m = TemporalMode::new(n, mhz_to_angular(g)).unwrap();
        let t = u / m.gamma();
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let scale = m.gamma().sqrt();
        prop_assert!((m.eval(-t) - sign * m.eval(t)).abs() <= 1e-12 * scale);
    }

    #[test]
    fn cumulative_is_symmetric(n in 0usize..=2, u in -30.0f64..30.0) {
        let m = mode(n, 14.0);
        let t = u / m.gamma();
        prop_assert!((m.cumulative(t) + m.cumulative(-t) - 1.0).abs() <= 1e-13);
        prop_assert!((m.cumulative(t) + m.survival(t) - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn cumulative_derivative_is_density(n in 0usize..=2, u in -12.0f64..12.0) {
        let m = mode(n, 14.0);
        let t = u / m.gamma();
        let h = 1e-4 / m.gamma();
        let fd = (m.cumulative(t + h) - m.cumulative(t - h)) / (2.0 * h);
        let f2 = m.eval(t).powi(2);
        prop_assert!((fd - f2).abs() <= 1e-6 * m.gamma());
    }

    #[test]
    fn synthesized_pulse_has_n_nodes(n in 0usize..=2, ratio in 0.2f64..0.9) {
        let kappa = mhz_to_angular(26.7);
        let m = TemporalMode::closed_form(n, ratio * kappa).unwrap();
        let wf = synthesize(&PulseSpec::emit(m.clone(), kappa)).unwrap();
        let re: Vec<f64> = wf.samples.iter().map(|s| s.re).collect();
        prop_assert!(count_sign_changes(&re) >= n);
    }

    #[test]
    fn slow_modes_are_feasible_fast_are_not(n in 0usize..=2, ratio in prop::sample::select(vec![0.2, 0.5, 0.9, 1.0, 1.1])) {
        let kappa = mhz_to_angular(26.7);
        let m = TemporalMode::closed_form(n, ratio * kappa).unwrap();
        let res = synthesize(&PulseSpec::emit(m, kappa));
        if ratio < 1.0 {
            prop_assert!(res.is_ok());
        } else {
            let infeasible = matches!(res, Err(Error::Infeasible { .. }));
            prop_assert!(infeasible);
        }
    }

    #[test]
    fn overlap_is_bounded_and_symmetric(a in 0usize..=2, b in 0usize..=2, u in -6.0f64..6.0) {
        let (fa, fb) = (mode(a, 24.0), mode(b, 24.0));
        let s = u / fa.gamma();
        let o = mode_overlap(&fa, &fb, s);
        prop_assert!(o.abs() <= 1.0 + 1e-12);
        // swapping the roles is the same as shifting the other way
        prop_assert!((o - mode_overlap(&fb, &fa, -s)).abs() <= 1e-10);
    }

    #[test]
    fn efficiency_peaks_at_link_delay(n in 0usize..=2, u in -6.0f64..6.0, p in 0.0f64..0.9) {
        let model = PfModel::new(mhz_to_angular(24.0), 2).unwrap();
        let tau0 = 145.9e-9;
        let pf = model.pf(n, n, tau0 + u / model.gamma(), tau0, p).unwrap();
        prop_assert!(pf <= 1.0 - p + 1e-12);
        prop_assert!(pf >= 0.0);
        let peak = model.pf(n, n, tau0, tau0, p).unwrap();
        prop_assert!((peak - (1.0 - p)).abs() <= 1e-9);
    }

    #[test]
    fn selectivity_is_scale_invariant(scale in 0.01f64..10.0, tau_off in -3.0f64..3.0) {
        let model = PfModel::new(mhz_to_angular(24.0), 2).unwrap();
        let tau0 = 145.9e-9;
        let m = TransferMatrix::from_model(&model, tau0 + tau_off * 1e-9, tau0, 0.17).unwrap();
        let (a, b) = (m.selectivity(), m.scaled(scale).selectivity());
        if a.infinite {
            prop_assert!(b.infinite);
        } else {
            prop_assert!((a.ratio - b.ratio).abs() <= 1e-9 * a.ratio);
        }
    }

    #[test]
    fn selectivity_in_decibels(d in 0.1f64..1.0, o in 1e-4f64..0.1) {
        let s = Selectivity::from_means(d, o);
        prop_assert!((s.db - 10.0 * (d / o).log10()).abs() <= 1e-12);
    }
}
