use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use orthomode::dynamics::{
    analytic_population, emitter_population_sweep, plateaus, simulate_emitter, LinkParams,
    NodeParams, SimOptions,
};
use orthomode::pulses::{synthesize, PulseSettings, PulseSpec, RabiProfile, Window};
use orthomode::transfer::{
    delay_grid, detuning_sweep, global_fit, model_sweep, propagation_delay, read_sweeps_csv,
    simulated_sweep, synthetic_sweeps, write_sweeps_csv, CascadeSetup, DelaySweep, FitOptions,
    PfModel, TransferMatrix,
};
use orthomode::units::{angular_to_mhz, mhz_to_angular, ns_to_s, s_to_ns, us_to_s};
use orthomode::{ModeFamily, TemporalMode};
use serde::Serialize;

use crate::config::{RunConfig, SweepSource};
use crate::CliError;

/// Resolved configuration of one command run plus its output conventions.
pub struct Run {
    pub cfg: RunConfig,
    header: String,
}

impl Run {
    /// Fills the command-specific defaults and fixes the provenance header.
    pub fn new(command: &'static str, mut cfg: RunConfig) -> Result<Self, CliError> {
        let two_node = matches!(command, "transfer" | "detuning" | "fit");
        cfg.gamma_mhz.get_or_insert(if two_node { 24.0 } else { 14.0 });
        if two_node {
            cfg.delta_a_mhz.get_or_insert(-0.3);
            cfg.delta_b_mhz.get_or_insert(1.9);
        }
        if cfg.tau_ns.is_none() {
            let tau = match (cfg.length_m, cfg.v_fraction) {
                (Some(l), Some(v)) => s_to_ns(propagation_delay(l, v, 0.0, None)?),
                (None, None) => 145.9,
                _ => return Err(CliError::config("--length and --v-fraction go together")),
            };
            cfg.tau_ns = Some(tau);
        }
        let header = format!(
            "orthomode {} {command}\nconfig-sha256 {}",
            env!("CARGO_PKG_VERSION"),
            cfg.digest()
        );
        Ok(Run { cfg, header })
    }

    fn gamma(&self) -> f64 {
        mhz_to_angular(self.cfg.gamma_mhz.unwrap_or_default())
    }

    fn tau(&self) -> f64 {
        ns_to_s(self.cfg.tau_ns.unwrap_or_default())
    }

    fn settings(&self) -> PulseSettings {
        PulseSettings {
            dt: ns_to_s(self.cfg.dt_ns),
            taper: ns_to_s(self.cfg.taper_ns),
            tail: self.cfg.tail,
        }
    }

    fn window(&self) -> Window {
        match self.cfg.window_ns {
            Some([a, b]) => Window::Explicit { start: ns_to_s(a), end: ns_to_s(b) },
            None => Window::Auto,
        }
    }

    fn opts(&self) -> SimOptions {
        SimOptions { substeps: self.cfg.substeps, ..Default::default() }
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.cfg.output_dir)?;
        Ok(&self.cfg.output_dir)
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.out_dir()?.join(name);
        let file = File::create(&path)?;
        Ok((path, BufWriter::new(file)))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }

    /// Records the resolved configuration next to the outputs.
    fn write_config(&self) -> Result<(), CliError> {
        self.write_json("config.json", &self.cfg)?;
        Ok(())
    }

    fn setup(&self) -> Result<CascadeSetup, CliError> {
        let c = &self.cfg;
        let emitter = NodeParams::new(mhz_to_angular(c.kappa_a_mhz));
        let mut receiver = NodeParams::new(mhz_to_angular(c.kappa_b_mhz))
            .with_detuning(mhz_to_angular(c.delta_ab_mhz));
        let t1 = c.t1_us.map(us_to_s);
        receiver = receiver.with_t1(t1);
        let mut setup = CascadeSetup::new(
            self.gamma(),
            emitter.with_t1(t1),
            receiver,
            LinkParams::new(self.tau(), c.p_loss)?,
        );
        setup.settings = self.settings();
        setup.emit_window = self.window();
        setup.absorb_window = self.window();
        setup.carriers = (
            mhz_to_angular(c.delta_a_mhz.unwrap_or_default()),
            mhz_to_angular(c.delta_b_mhz.unwrap_or_default()),
        );
        setup.opts = self.opts();
        Ok(setup)
    }
}

fn mode(n: usize, gamma: f64) -> Result<TemporalMode, CliError> {
    Ok(TemporalMode::new(n, gamma)?)
}

pub fn synth(run: &Run) -> Result<(), CliError> {
    let gamma = run.gamma();
    let kappa_a = mhz_to_angular(run.cfg.kappa_a_mhz);
    let kappa_b = mhz_to_angular(run.cfg.kappa_b_mhz);
    println!(
        "feasibility: Gamma/kappa_A = {:.3}, Gamma/kappa_B = {:.3} (both must be < 1)",
        gamma / kappa_a,
        gamma / kappa_b
    );
    let max_order = run.cfg.modes.iter().copied().max().unwrap_or(0);
    if max_order > 2 {
        let family = ModeFamily::gram_schmidt(gamma, max_order)?;
        println!(
            "orthogonality: modes 0..={max_order}, max |(f_n|f_m) - delta_nm| = {:.2e}",
            family.orthonormality_defect()
        );
    }
    let emit_carrier = mhz_to_angular(run.cfg.delta_a_mhz.unwrap_or_default());
    let absorb_carrier = mhz_to_angular(run.cfg.delta_b_mhz.unwrap_or_default());
    for &n in &run.cfg.modes {
        let m = mode(n, gamma)?;
        let specs = [
            ("emit", PulseSpec::emit(m.clone(), kappa_a).with_detuning(emit_carrier)),
            ("absorb", PulseSpec::absorb(m, kappa_b).with_detuning(absorb_carrier)),
        ];
        for (tag, spec) in specs {
            let spec = spec.with_window(run.window()).with_settings(run.settings());
            let wf = synthesize(&spec)?;
            let name = format!("{tag}_n{n}");
            let (path, mut w) = run.create(&format!("{name}.csv"))?;
            wf.write_csv(&mut w, Some(&run.header))?;
            w.flush()?;
            run.write_json(&format!("{name}.json"), &wf.metadata())?;
            let peak = wf.samples.iter().map(|g| g.norm()).fold(0.0, f64::max);
            println!(
                "{name}: {} samples, window [{:.1}, {:.1}] ns, captured {:.6}, peak |g|/2pi {:.3} MHz, clamped {} -> {}",
                wf.len(),
                s_to_ns(wf.window.0),
                s_to_ns(wf.window.1),
                wf.captured,
                angular_to_mhz(peak),
                wf.clamped,
                path.display()
            );
        }
    }
    if run.cfg.modes.iter().all(|&n| n <= 2) {
        let profile = RabiProfile::new(gamma, kappa_a, &run.settings())?;
        let (_, mut w) = run.create("rabi_profile.csv")?;
        profile.write_csv(&mut w, Some(&run.header))?;
        w.flush()?;
    }
    run.write_config()
}

#[derive(Serialize)]
struct EmitSummary {
    mode: usize,
    plateaus_ns: Vec<[f64; 2]>,
    final_pg_ideal: f64,
    final_pg_decay: f64,
    max_decay_model_deviation: f64,
    emitted_full_pulse: f64,
}

pub fn emit_sweep(run: &Run) -> Result<(), CliError> {
    let gamma = run.gamma();
    let kappa = mhz_to_angular(run.cfg.kappa_a_mhz);
    let t1 = us_to_s(run.cfg.t1_us.unwrap_or(orthomode::dynamics::DEFAULT_T1_EF * 1e6));
    let settings = run.settings();
    let opts = run.opts();
    let ideal = NodeParams::new(kappa);
    let decaying = ideal.with_t1(Some(t1));
    let mut summaries = Vec::new();
    for &n in &run.cfg.modes {
        let m = mode(n, gamma)?;
        let spec = PulseSpec::emit(m.clone(), kappa).with_window(run.window()).with_settings(settings);
        let (a, b) = spec.resolve_window()?;
        let points = run.cfg.truncation_points;
        let grid: Vec<f64> = (0..points)
            .map(|i| a - 10e-9 + (b - a + 20e-9) * i as f64 / (points - 1) as f64)
            .collect();
        let p_ideal = emitter_population_sweep(&m, &ideal, &settings, &grid, &opts)?;
        let p_decay = emitter_population_sweep(&m, &decaying, &settings, &grid, &opts)?;

        let (_, mut w) = run.create(&format!("emit_sweep_n{n}.csv"))?;
        for line in run.header.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "T_ns,Pg_ideal,Pg_ideal_model,Pg_decay,Pg_decay_model")?;
        let mut deviation: f64 = 0.0;
        for (k, &t) in grid.iter().enumerate() {
            let model_ideal = analytic_population(&m, kappa, t, None);
            let model_decay = analytic_population(&m, kappa, t, Some(t1));
            deviation = deviation.max((p_decay[k] - model_decay).abs());
            writeln!(
                w,
                "{:?},{:?},{:?},{:?},{:?}",
                s_to_ns(t),
                p_ideal[k],
                model_ideal,
                p_decay[k],
                model_decay
            )?;
        }
        w.flush()?;

        // full pulse, for the emitted field trace
        let wf = synthesize(&spec)?;
        let traj = simulate_emitter(&wf, &ideal, &opts)?;
        let (_, mut w) = run.create(&format!("emit_trajectory_n{n}.csv"))?;
        traj.write_csv(&mut w, Some(&run.header))?;
        w.flush()?;

        let flat = plateaus(&grid, &p_ideal, 1e-3 * gamma);
        let s = EmitSummary {
            mode: n,
            plateaus_ns: flat.iter().map(|(x, y)| [s_to_ns(*x), s_to_ns(*y)]).collect(),
            final_pg_ideal: *p_ideal.last().unwrap_or(&f64::NAN),
            final_pg_decay: *p_decay.last().unwrap_or(&f64::NAN),
            max_decay_model_deviation: deviation,
            emitted_full_pulse: traj.emitted_probability(),
        };
        println!(
            "n={n}: {} plateaus, final P_g {:.5} (ideal) / {:.5} (T1 = {:.1} us), decay model deviation {:.2e}",
            s.plateaus_ns.len(),
            s.final_pg_ideal,
            s.final_pg_decay,
            t1 * 1e6,
            s.max_decay_model_deviation
        );
        summaries.push(s);
    }
    run.write_json("emit_sweep_summary.json", &summaries)?;
    run.write_config()
}

fn load_sweeps(run: &Run) -> Result<Vec<DelaySweep>, CliError> {
    let Some(path) = &run.cfg.input else {
        return Err(CliError::config("--input is required for measured data"));
    };
    let file = File::open(path)
        .map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_sweeps_csv(file, run.gamma())?)
}

fn write_matrix(run: &Run, m: &TransferMatrix) -> Result<(), CliError> {
    let (_, mut w) = run.create("transfer_matrix.csv")?;
    for line in run.header.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "# tau_ns {:?}", s_to_ns(m.delay))?;
    writeln!(w, "nA,nB0,nB1,nB2")?;
    for (a, row) in m.entries.iter().enumerate() {
        writeln!(w, "{a},{:?},{:?},{:?}", row[0], row[1], row[2])?;
    }
    w.flush()?;
    Ok(())
}

fn fit_and_report(run: &Run, sweeps: &[DelaySweep]) -> Result<(), CliError> {
    let fit = global_fit(sweeps, &FitOptions::default());
    let fit = match fit {
        Ok(f) => f,
        Err(orthomode::Error::Fit { best, iterations }) => {
            run.write_json("fit.json", &best.report())?;
            return Err(orthomode::Error::Fit { best, iterations }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let report = fit.report();
    run.write_json("fit.json", &report)?;
    println!(
        "fit: tau0 = {:.3} +/- {:.3} ns, p_loss = {:.4} +/- {:.4}, residual {:.3e}{}",
        report.tau0_ns,
        report.tau0_err_ns,
        report.p_loss,
        report.p_loss_err,
        report.residual,
        if report.at_boundary { " (at boundary)" } else { "" }
    );
    Ok(())
}

pub fn transfer(run: &Run) -> Result<(), CliError> {
    let tau = run.tau();
    let grid = delay_grid(tau, ns_to_s(run.cfg.tau_half_width_ns), run.cfg.tau_points);
    let sweeps = match run.cfg.source {
        SweepSource::Model => {
            let model = PfModel::new(run.gamma(), 2)?;
            if run.cfg.noise_sigma > 0.0 {
                synthetic_sweeps(&model, &grid, tau, run.cfg.p_loss, run.cfg.noise_sigma, run.cfg.seed)?
            } else {
                let mut out = Vec::with_capacity(9);
                for a in 0..3 {
                    for b in 0..3 {
                        out.push(model_sweep(&model, a, b, &grid, tau, run.cfg.p_loss)?);
                    }
                }
                out
            }
        }
        SweepSource::Sim => {
            let setup = run.setup()?;
            let mut out = Vec::with_capacity(9);
            for a in 0..3 {
                for b in 0..3 {
                    out.push(simulated_sweep(&setup, a, b, &grid)?);
                }
            }
            out
        }
        SweepSource::File => load_sweeps(run)?,
    };
    let (_, mut w) = run.create("delay_sweeps.csv")?;
    write_sweeps_csv(&sweeps, &mut w, Some(&run.header))?;
    w.flush()?;

    let matrix = TransferMatrix::from_sweeps(&sweeps, tau)?;
    write_matrix(run, &matrix)?;
    let sigma = matrix.selectivity();
    run.write_json("selectivity.json", &sigma)?;
    for (a, row) in matrix.entries.iter().enumerate() {
        println!("nA={a}: {:.4} {:.4} {:.4}", row[0], row[1], row[2]);
    }
    if sigma.infinite {
        println!("selectivity: infinite (no cross-mode transfer)");
    } else {
        println!("selectivity: {:.2} ({:.2} dB)", sigma.ratio, sigma.db);
    }

    if sweeps.iter().all(|s| s.len() >= 10) {
        fit_and_report(run, &sweeps)?;
    } else {
        println!("fit: skipped, each curve needs at least 10 delays");
    }
    run.write_config()
}

#[derive(Serialize)]
struct DetuningSummary {
    ridge_slope: Option<f64>,
    ridge_intercept_mhz: Option<f64>,
    max_delta_a_mhz: f64,
    max_delta_b_mhz: f64,
    max_pf: f64,
    /// Vertical distance of the configured carrier pair from the ridge.
    carrier_offset_from_ridge_mhz: Option<f64>,
}

pub fn detuning(run: &Run) -> Result<(), CliError> {
    let setup = run.setup()?;
    let n = run.cfg.detuning_points as i64;
    let step = run.cfg.detuning_step_mhz;
    let grid: Vec<f64> = (0..n)
        .map(|k| mhz_to_angular(step * (k - (n - 1) / 2) as f64))
        .collect();
    let map = detuning_sweep(&setup, mhz_to_angular(run.cfg.delta_ab_mhz), &grid, &grid)?;
    let (_, mut w) = run.create("detuning_map.csv")?;
    map.write_csv(&mut w, Some(&run.header))?;
    w.flush()?;

    let (ma, mb, mp) = map.maximum();
    let (da, db) = (run.cfg.delta_a_mhz.unwrap_or_default(), run.cfg.delta_b_mhz.unwrap_or_default());
    let summary = DetuningSummary {
        ridge_slope: map.ridge.as_ref().map(|r| r.slope),
        ridge_intercept_mhz: map.ridge.as_ref().map(|r| angular_to_mhz(r.intercept)),
        max_delta_a_mhz: angular_to_mhz(ma),
        max_delta_b_mhz: angular_to_mhz(mb),
        max_pf: mp,
        carrier_offset_from_ridge_mhz: map
            .ridge
            .as_ref()
            .map(|r| db - (r.slope * da + angular_to_mhz(r.intercept))),
    };
    run.write_json("detuning_summary.json", &summary)?;
    match (summary.ridge_slope, summary.ridge_intercept_mhz) {
        (Some(s), Some(i)) => println!("ridge: delta_B = {s:.3} delta_A + {i:.3} MHz"),
        _ => println!("ridge: not resolved on this grid"),
    }
    println!(
        "maximum P_f = {:.4} at (delta_A, delta_B) = ({:.2}, {:.2}) MHz",
        mp, summary.max_delta_a_mhz, summary.max_delta_b_mhz
    );
    if let Some(off) = summary.carrier_offset_from_ridge_mhz {
        println!("carrier pair ({da:.2}, {db:.2}) MHz sits {off:+.3} MHz from the ridge");
    }
    run.write_config()
}

pub fn fit(run: &Run) -> Result<(), CliError> {
    let sweeps = load_sweeps(run)?;
    fit_and_report(run, &sweeps)?;
    run.write_config()
}
