//! The experiment layer: delay-overlap absorption model, delay sweeps,
//! transfer matrix, selectivity, the two-parameter global fit and the
//! carrier-detuning calibration.
//!
//! A photon emitted in mode `f_{n_A}` and absorbed with the pulse for
//! `f_{n_B}` delayed by `τ` ends up in the receiver's f level with
//!
//! ```text
//! P_f(τ) = (1 − p_loss) |∫ f_{n_B}(t − (τ − τ₀)) f_{n_A}(t) dt|²
//! ```
//!
//! where `τ₀` is the delay at which emission and absorption line up.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_transfer, LinkParams, NodeParams, SimOptions};
use crate::error::{Error, Result};
use crate::lm;
use crate::modes::{mode_overlap, mode_overlap_derivative, TemporalMode};
use crate::pulses::{synthesize, PulseSettings, PulseSpec, Window};
use crate::units::{ns_to_s, s_to_ns, SPEED_OF_LIGHT};

/// Matrix values at the optimal delay, transcribed from the stated ranges of
/// the measured transfer matrix (diagonal 75-79 %, off-diagonal 1-4 %).
/// These are transcriptions, not raw data.
pub const TRANSCRIBED_MATRIX_CSV: &str = include_str!("../data/transfer_matrix_transcribed.csv");

/// Where a curve or matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Model,
    Simulation,
    Measured,
}

/// Overlap model over one mode family.
#[derive(Debug, Clone, PartialEq)]
pub struct PfModel {
    modes: Vec<TemporalMode>,
}

impl PfModel {
    /// Modes `0..=max_order` at bandwidth `gamma`.
    pub fn new(gamma: f64, max_order: usize) -> Result<Self> {
        let modes = (0..=max_order)
            .map(|n| TemporalMode::new(n, gamma))
            .collect::<Result<_>>()?;
        Ok(PfModel { modes })
    }

    pub fn gamma(&self) -> f64 {
        self.modes[0].gamma()
    }

    pub fn max_order(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn mode(&self, n: usize) -> Result<&TemporalMode> {
        self.modes
            .get(n)
            .ok_or_else(|| Error::usage(format!("mode {n} outside the model family")))
    }

    /// `∫ f_{n_B}(t − shift) f_{n_A}(t) dt`.
    pub fn overlap(&self, n_a: usize, n_b: usize, shift: f64) -> Result<f64> {
        Ok(mode_overlap(self.mode(n_b)?, self.mode(n_a)?, shift))
    }

    pub fn pf(&self, n_a: usize, n_b: usize, tau: f64, tau0: f64, p_loss: f64) -> Result<f64> {
        let o = self.overlap(n_a, n_b, tau - tau0)?;
        Ok((1.0 - p_loss) * o * o)
    }
}

/// `(1 − p_loss) |∫ f_B(t − (τ − τ₀)) f_A(t) dt|²` for two modes of one family.
pub fn pf_model(
    mode_a: &TemporalMode,
    mode_b: &TemporalMode,
    tau: f64,
    tau0: f64,
    p_loss: f64,
) -> Result<f64> {
    if (mode_a.gamma() / mode_b.gamma() - 1.0).abs() > 1e-12 {
        return Err(Error::usage("emitted and absorbed modes must share one bandwidth"));
    }
    if !(0.0..=1.0).contains(&p_loss) {
        return Err(Error::usage(format!("p_loss must lie in [0, 1], got {p_loss}")));
    }
    let o = mode_overlap(mode_b, mode_a, tau - tau0);
    Ok((1.0 - p_loss) * o * o)
}

/// `P_f` of one `(n_A, n_B)` pair over a grid of absorption delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySweep {
    pub n_a: usize,
    pub n_b: usize,
    /// Bandwidth of the mode family (rad/s).
    pub gamma: f64,
    /// Absorption delays (s).
    pub tau: Vec<f64>,
    pub pf: Vec<f64>,
    pub source: Source,
}

impl DelaySweep {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Value at the grid point nearest to `tau`.
    pub fn nearest(&self, tau: f64) -> Option<f64> {
        self.tau
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - tau).abs().total_cmp(&(b.1 - tau).abs()))
            .map(|(k, _)| self.pf[k])
    }

    /// Grid point with the largest `P_f`.
    pub fn argmax(&self) -> Option<f64> {
        self.pf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| self.tau[k])
    }
}

/// Model curve on `grid`.
pub fn model_sweep(
    model: &PfModel,
    n_a: usize,
    n_b: usize,
    grid: &[f64],
    tau0: f64,
    p_loss: f64,
) -> Result<DelaySweep> {
    let pf = grid
        .iter()
        .map(|&tau| model.pf(n_a, n_b, tau, tau0, p_loss))
        .collect::<Result<_>>()?;
    Ok(DelaySweep { n_a, n_b, gamma: model.gamma(), tau: grid.to_vec(), pf, source: Source::Model })
}

/// Uniform grid of `points` delays spanning `center ± half_width`.
pub fn delay_grid(center: f64, half_width: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![center];
    }
    (0..points)
        .map(|k| center - half_width + 2.0 * half_width * k as f64 / (points - 1) as f64)
        .collect()
}

/// Model curves for every pair `n_A, n_B ≤ max_order` with Gaussian noise of
/// standard deviation `sigma`. Noisy values are not clipped to `[0, 1]`.
pub fn synthetic_sweeps(
    model: &PfModel,
    grid: &[f64],
    tau0: f64,
    p_loss: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<DelaySweep>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0))
        .map_err(|e| Error::usage(format!("invalid noise level: {e}")))?;
    let n = model.max_order();
    let mut out = Vec::with_capacity((n + 1) * (n + 1));
    for n_a in 0..=n {
        for n_b in 0..=n {
            let mut sweep = model_sweep(model, n_a, n_b, grid, tau0, p_loss)?;
            if sigma > 0.0 {
                for v in &mut sweep.pf {
                    *v += noise.sample(&mut rng);
                }
            }
            sweep.source = Source::Measured;
            out.push(sweep);
        }
    }
    Ok(out)
}

/// Writes sweeps in the measured-data format `tau_ns,nA,nB,Pf`.
pub fn write_sweeps_csv<W: Write>(sweeps: &[DelaySweep], writer: W, comment: Option<&str>) -> Result<()> {
    let mut writer = writer;
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(writer, "# {line}")?;
        }
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["tau_ns", "nA", "nB", "Pf"])?;
    for s in sweeps {
        for (tau, pf) in s.tau.iter().zip(&s.pf) {
            csv.write_record([
                format!("{:?}", s_to_ns(*tau)),
                s.n_a.to_string(),
                s.n_b.to_string(),
                format!("{pf:?}"),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct MeasuredRow {
    tau_ns: f64,
    #[serde(rename = "nA")]
    n_a: usize,
    #[serde(rename = "nB")]
    n_b: usize,
    #[serde(rename = "Pf")]
    pf: f64,
}

/// Reads `tau_ns,nA,nB,Pf` rows into one sweep per pair, sorted by delay.
pub fn read_sweeps_csv<R: Read>(reader: R, gamma: f64) -> Result<Vec<DelaySweep>> {
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = csv.headers()?.iter().map(str::to_owned).collect();
    if headers != ["tau_ns", "nA", "nB", "Pf"] {
        return Err(Error::format(format!(
            "measured data header must be tau_ns,nA,nB,Pf, got {}",
            headers.join(",")
        )));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for (line, row) in csv.deserialize::<MeasuredRow>().enumerate() {
        let row = row.map_err(|e| Error::format(format!("measured data row {}: {e}", line + 1)))?;
        if !(row.tau_ns.is_finite() && row.pf.is_finite()) {
            return Err(Error::format(format!("non-finite value in measured data row {}", line + 1)));
        }
        groups.entry((row.n_a, row.n_b)).or_default().push((ns_to_s(row.tau_ns), row.pf));
    }
    if groups.is_empty() {
        return Err(Error::format("measured data file has no rows"));
    }
    Ok(groups
        .into_iter()
        .map(|((n_a, n_b), mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            DelaySweep {
                n_a,
                n_b,
                gamma,
                tau: pts.iter().map(|p| p.0).collect(),
                pf: pts.iter().map(|p| p.1).collect(),
                source: Source::Measured,
            }
        })
        .collect())
}

/// Physical setup of a simulated two-node link.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSetup {
    /// Mode bandwidth (rad/s).
    pub gamma: f64,
    pub emitter: NodeParams,
    pub receiver: NodeParams,
    pub link: LinkParams,
    pub settings: PulseSettings,
    pub emit_window: Window,
    pub absorb_window: Window,
    /// Carrier detunings `(δ_A, δ_B)` of the two pulses (rad/s).
    pub carriers: (f64, f64),
    pub opts: SimOptions,
}

impl CascadeSetup {
    pub fn new(gamma: f64, emitter: NodeParams, receiver: NodeParams, link: LinkParams) -> Self {
        CascadeSetup {
            gamma,
            emitter,
            receiver,
            link,
            settings: PulseSettings::default(),
            emit_window: Window::Auto,
            absorb_window: Window::Auto,
            carriers: (0.0, 0.0),
            opts: SimOptions::default(),
        }
    }

    fn check(&self) -> Result<()> {
        let limit = self.emitter.kappa.min(self.receiver.kappa);
        if !(self.gamma < limit) {
            return Err(Error::Infeasible {
                time: f64::INFINITY,
                asymptotic_ratio: self.gamma / limit,
            });
        }
        Ok(())
    }

    /// Receiver f population after sending `f_{n_A}` and absorbing with the
    /// `f_{n_B}` pulse delayed by `tau`.
    pub fn simulate_pf(&self, n_a: usize, n_b: usize, tau: f64) -> Result<f64> {
        self.check()?;
        let emit = synthesize(
            &PulseSpec::emit(TemporalMode::new(n_a, self.gamma)?, self.emitter.kappa)
                .with_detuning(self.carriers.0)
                .with_window(self.emit_window)
                .with_settings(self.settings),
        )?;
        let absorb = synthesize(
            &PulseSpec::absorb(TemporalMode::new(n_b, self.gamma)?, self.receiver.kappa)
                .with_detuning(self.carriers.1)
                .with_window(self.absorb_window)
                .with_settings(self.settings),
        )?;
        let traj = simulate_transfer(
            &emit,
            &absorb.delayed(tau),
            (&self.emitter, &self.receiver),
            &self.link,
            &self.opts,
        )?;
        Ok(traj.final_pf_receiver().unwrap_or(0.0))
    }
}

/// Simulated curve on `grid`, one cascade per delay.
pub fn simulated_sweep(setup: &CascadeSetup, n_a: usize, n_b: usize, grid: &[f64]) -> Result<DelaySweep> {
    let pf = grid
        .par_iter()
        .map(|&tau| setup.simulate_pf(n_a, n_b, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(DelaySweep {
        n_a,
        n_b,
        gamma: setup.gamma,
        tau: grid.to_vec(),
        pf,
        source: Source::Simulation,
    })
}

/// Options of [`global_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// One weight per sweep; equal weights when `None`.
    pub weights: Option<Vec<f64>>,
    /// Starting `(τ₀, p_loss)`; estimated from the data when `None`.
    pub start: Option<(f64, f64)>,
    pub solver: lm::Options,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            weights: None,
            start: None,
            solver: lm::Options { gtol: 1e-10, ..Default::default() },
        }
    }
}

/// Outcome of the two-parameter fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Optimal absorption delay (s).
    pub tau0: f64,
    pub tau0_err: f64,
    pub p_loss: f64,
    pub p_loss_err: f64,
    /// `√(Σ r²)`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `p_loss` ran to 0 or 1.
    pub at_boundary: bool,
    pub n_points: usize,
}

impl FitResult {
    pub fn report(&self) -> FitReport {
        FitReport {
            tau0_ns: s_to_ns(self.tau0),
            tau0_err_ns: s_to_ns(self.tau0_err),
            p_loss: self.p_loss,
            p_loss_err: self.p_loss_err,
            residual: self.residual,
            n_points: self.n_points,
            converged: self.converged,
            at_boundary: self.at_boundary,
        }
    }
}

/// JSON fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tau0_ns: f64,
    pub tau0_err_ns: f64,
    pub p_loss: f64,
    pub p_loss_err: f64,
    pub residual: f64,
    pub n_points: usize,
    pub converged: bool,
    pub at_boundary: bool,
}

/// Logit beyond which `p_loss` counts as pinned to 0 or 1.
const LOGIT_BOUNDARY: f64 = 20.0;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct FitProblem<'a> {
    model: &'a PfModel,
    /// `(n_A, n_B, τ, P_f, weight)`
    points: Vec<(usize, usize, f64, f64, f64)>,
}

impl FitProblem<'_> {
    fn gamma(&self) -> f64 {
        self.model.gamma()
    }
}

impl lm::Problem for FitProblem<'_> {
    fn n_params(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let tau0 = p[0] / self.gamma();
        let keep = 1.0 - sigmoid(p[1]);
        self.points
            .iter()
            .map(|&(a, b, tau, y, w)| {
                let o = mode_overlap(&self.model.modes[b], &self.model.modes[a], tau - tau0);
                w * (keep * o * o - y)
            })
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let g = self.gamma();
        let tau0 = p[0] / g;
        let loss = sigmoid(p[1]);
        let keep = 1.0 - loss;
        self.points
            .iter()
            .map(|&(a, b, tau, _, w)| {
                let (ma, mb) = (&self.model.modes[a], &self.model.modes[b]);
                let o = mode_overlap(mb, ma, tau - tau0);
                let d = mode_overlap_derivative(mb, ma, tau - tau0);
                // shift = τ − u/Γ
                vec![-w * keep * 2.0 * o * d / g, -w * o * o * loss * keep]
            })
            .collect()
    }
}

/// Least-squares fit of `τ₀` and `p_loss` shared by all sweeps.
pub fn global_fit(sweeps: &[DelaySweep], opts: &FitOptions) -> Result<FitResult> {
    if sweeps.is_empty() {
        return Err(Error::usage("global fit needs at least one sweep"));
    }
    let gamma = sweeps[0].gamma;
    if sweeps.iter().any(|s| (s.gamma / gamma - 1.0).abs() > 1e-12) {
        return Err(Error::usage("all sweeps of a global fit must share one bandwidth"));
    }
    if let Some(s) = sweeps.iter().find(|s| s.len() < 10) {
        return Err(Error::usage(format!(
            "sweep ({}, {}) has {} points, at least 10 needed",
            s.n_a,
            s.n_b,
            s.len()
        )));
    }
    if let Some(w) = &opts.weights {
        if w.len() != sweeps.len() || w.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::usage("fit weights need one non-negative value per sweep"));
        }
    }
    let max_order = sweeps.iter().map(|s| s.n_a.max(s.n_b)).max().unwrap_or(0);
    let model = PfModel::new(gamma, max_order)?;
    let mut points = Vec::new();
    for (k, s) in sweeps.iter().enumerate() {
        let w = opts.weights.as_ref().map_or(1.0, |w| w[k].sqrt());
        for (&tau, &y) in s.tau.iter().zip(&s.pf) {
            points.push((s.n_a, s.n_b, tau, y, w));
        }
    }
    let n_points = points.len();
    let problem = FitProblem { model: &model, points };

    let (tau_start, p_start) = opts.start.unwrap_or_else(|| initial_guess(sweeps));
    let p_start = p_start.clamp(1e-3, 1.0 - 1e-3);
    let start = [tau_start * gamma, (p_start / (1.0 - p_start)).ln()];
    let rep = lm::minimize(&problem, &start, &opts.solver, |p| p[1].abs() > LOGIT_BOUNDARY);

    let loss = sigmoid(rep.params[1]);
    let at_boundary = rep.params[1].abs() > LOGIT_BOUNDARY;
    let dof = n_points.saturating_sub(2).max(1) as f64;
    let s2 = rep.rss / dof;
    let (tau0_err, p_loss_err) = match lm::invert(&rep.jtj) {
        Some(cov) if !at_boundary => (
            (s2 * cov[0][0]).max(0.0).sqrt() / gamma,
            (s2 * cov[1][1]).max(0.0).sqrt() * loss * (1.0 - loss),
        ),
        _ => (f64::NAN, f64::NAN),
    };
    let result = FitResult {
        tau0: rep.params[0] / gamma,
        tau0_err,
        p_loss: loss,
        p_loss_err,
        residual: rep.rss.sqrt(),
        iterations: rep.iterations,
        converged: rep.converged,
        at_boundary,
        n_points,
    };
    if !rep.converged && !at_boundary {
        return Err(Error::Fit { iterations: rep.iterations, best: Box::new(result) });
    }
    Ok(result)
}

fn initial_guess(sweeps: &[DelaySweep]) -> (f64, f64) {
    let diagonal: Vec<&DelaySweep> = sweeps.iter().filter(|s| s.n_a == s.n_b).collect();
    if diagonal.is_empty() {
        let centers: f64 = sweeps.iter().map(|s| 0.5 * (s.tau[0] + s.tau[s.len() - 1])).sum();
        return (centers / sweeps.len() as f64, 0.5);
    }
    let mut tau = 0.0;
    let mut peak = 0.0;
    for s in &diagonal {
        let (k, &m) = s
            .pf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("sweeps have points");
        tau += s.tau[k];
        peak += m;
    }
    let n = diagonal.len() as f64;
    (tau / n, 1.0 - peak / n)
}

/// Selectivity ratio `Σ` = mean diagonal / mean off-diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selectivity {
    pub ratio: f64,
    /// The off-diagonal mean vanishes and `ratio` is `+∞`.
    pub infinite: bool,
    pub db: f64,
    pub diagonal_mean: f64,
    pub off_diagonal_mean: f64,
}

impl Selectivity {
    pub fn from_means(diagonal_mean: f64, off_diagonal_mean: f64) -> Self {
        let infinite = off_diagonal_mean <= 1e-12 * diagonal_mean.abs().max(f64::MIN_POSITIVE);
        let ratio = if infinite { f64::INFINITY } else { diagonal_mean / off_diagonal_mean };
        Selectivity {
            ratio,
            infinite,
            db: 10.0 * ratio.log10(),
            diagonal_mean,
            off_diagonal_mean,
        }
    }
}

/// `M[n_A][n_B] = P_f` at one delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub entries: [[f64; 3]; 3],
    /// Delay at which the entries were taken (s).
    pub delay: f64,
    pub source: Source,
}

impl TransferMatrix {
    pub fn from_model(model: &PfModel, tau: f64, tau0: f64, p_loss: f64) -> Result<Self> {
        let mut entries = [[0.0; 3]; 3];
        for (a, row) in entries.iter_mut().enumerate() {
            for (b, e) in row.iter_mut().enumerate() {
                *e = model.pf(a, b, tau, tau0, p_loss)?;
            }
        }
        Ok(TransferMatrix { entries, delay: tau, source: Source::Model })
    }

    /// Entries at the grid point nearest `tau` of each sweep.
    pub fn from_sweeps(sweeps: &[DelaySweep], tau: f64) -> Result<Self> {
        let mut entries = [[f64::NAN; 3]; 3];
        for s in sweeps {
            if s.n_a < 3 && s.n_b < 3 {
                entries[s.n_a][s.n_b] = s.nearest(tau).unwrap_or(f64::NAN);
            }
        }
        if entries.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::format("data does not cover all nine (nA, nB) pairs"));
        }
        let source = sweeps.first().map_or(Source::Measured, |s| s.source);
        Ok(TransferMatrix { entries, delay: tau, source })
    }

    /// Cascaded simulation of all nine pairs. Each absorption pulse is
    /// displaced by an independent uniform timing error in `±jitter`.
    pub fn from_simulation(setup: &CascadeSetup, tau: f64, jitter: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts: Vec<f64> = (0..9)
            .map(|_| if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 })
            .collect();
        let values = (0..9)
            .into_par_iter()
            .map(|k| setup.simulate_pf(k / 3, k % 3, tau + shifts[k]))
            .collect::<Result<Vec<_>>>()?;
        let mut entries = [[0.0; 3]; 3];
        for (k, v) in values.into_iter().enumerate() {
            entries[k / 3][k % 3] = v;
        }
        Ok(TransferMatrix { entries, delay: tau, source: Source::Simulation })
    }

    pub fn selectivity(&self) -> Selectivity {
        let mut diag = 0.0;
        let mut off = 0.0;
        for (a, row) in self.entries.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if a == b {
                    diag += v;
                } else {
                    off += v;
                }
            }
        }
        Selectivity::from_means(diag / 3.0, off / 6.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.entries.iter_mut().flatten().for_each(|v| *v *= factor);
        out
    }
}

/// Line `δ_B = slope·δ_A + intercept` through the ridge of a detuning map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub slope: f64,
    /// rad/s
    pub intercept: f64,
    /// Sub-grid maxima `(δ_A, δ_B)` along anti-diagonals (rad/s).
    pub points: Vec<(f64, f64)>,
}

/// Receiver population over a grid of carrier detunings.
#[derive(Debug, Clone, PartialEq)]
pub struct DetuningMap {
    /// rad/s
    pub delta_a: Vec<f64>,
    /// rad/s
    pub delta_b: Vec<f64>,
    /// `pf[i][j]` at `(delta_a[i], delta_b[j])`.
    pub pf: Vec<Vec<f64>>,
    pub ridge: Option<RidgeFit>,
}

impl DetuningMap {
    /// Grid point with the largest population, `(δ_A, δ_B, P_f)`.
    pub fn maximum(&self) -> (f64, f64, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, row) in self.pf.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        (self.delta_a[best.0], self.delta_b[best.1], best.2)
    }

    /// Bilinear interpolation of the map.
    pub fn interpolate(&self, da: f64, db: f64) -> Option<f64> {
        let locate = |grid: &[f64], x: f64| -> Option<(usize, f64)> {
            if grid.len() < 2 || x < grid[0] || x > grid[grid.len() - 1] {
                return None;
            }
            let k = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1) - 1;
            Some((k, (x - grid[k]) / (grid[k + 1] - grid[k])))
        };
        let (i, u) = locate(&self.delta_a, da)?;
        let (j, v) = locate(&self.delta_b, db)?;
        let p = &self.pf;
        Some(
            (1.0 - u) * (1.0 - v) * p[i][j]
                + u * (1.0 - v) * p[i + 1][j]
                + (1.0 - u) * v * p[i][j + 1]
                + u * v * p[i + 1][j + 1],
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W, comment: Option<&str>) -> Result<()> {
        let mut writer = writer;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(writer, "# {line}")?;
            }
        }
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["deltaA_over_2pi_MHz", "deltaB_over_2pi_MHz", "Pf"])?;
        for (i, &a) in self.delta_a.iter().enumerate() {
            for (j, &b) in self.delta_b.iter().enumerate() {
                csv.write_record([
                    format!("{:?}", crate::units::angular_to_mhz(a)),
                    format!("{:?}", crate::units::angular_to_mhz(b)),
                    format!("{:?}", self.pf[i][j]),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    }
}

/// Cascaded simulation of mode `f_0` over all carrier pairs. The receiver
/// resonator sits `delta_ab` above the emitter's; `setup.receiver.detuning`
/// is overridden.
pub fn detuning_sweep(
    setup: &CascadeSetup,
    delta_ab: f64,
    delta_a: &[f64],
    delta_b: &[f64],
) -> Result<DetuningMap> {
    let mut base = setup.clone();
    base.receiver.detuning = delta_ab;
    let tau = base.link.delay;
    let cells: Vec<(usize, usize)> = (0..delta_a.len())
        .flat_map(|i| (0..delta_b.len()).map(move |j| (i, j)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(i, j)| {
            let mut s = base.clone();
            s.carriers = (delta_a[i], delta_b[j]);
            s.simulate_pf(0, 0, tau)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pf = vec![vec![0.0; delta_b.len()]; delta_a.len()];
    for (&(i, j), v) in cells.iter().zip(values) {
        pf[i][j] = v;
    }
    let ridge = ridge_fit(delta_a, delta_b, &pf);
    Ok(DetuningMap { delta_a: delta_a.to_vec(), delta_b: delta_b.to_vec(), pf, ridge })
}

/// Per-anti-diagonal maxima with parabolic refinement, then a straight-line
/// fit. Needs uniform grids with equal spacing on both axes.
pub fn ridge_fit(delta_a: &[f64], delta_b: &[f64], pf: &[Vec<f64>]) -> Option<RidgeFit> {
    let (na, nb) = (delta_a.len(), delta_b.len());
    if na < 3 || nb < 3 {
        return None;
    }
    let da = (delta_a[na - 1] - delta_a[0]) / (na - 1) as f64;
    let db = (delta_b[nb - 1] - delta_b[0]) / (nb - 1) as f64;
    if ((da - db) / da).abs() > 1e-9 {
        return None;
    }
    let mut points = Vec::new();
    for k in 0..na + nb - 1 {
        let lo = k.saturating_sub(nb - 1);
        let hi = k.min(na - 1);
        if hi < lo + 2 {
            continue;
        }
        let line: Vec<f64> = (lo..=hi).map(|i| pf[i][k - i]).collect();
        let (m, _) = line
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        if m == 0 || m == line.len() - 1 {
            continue;
        }
        let (ym, y0, yp) = (line[m - 1], line[m], line[m + 1]);
        let curv = ym - 2.0 * y0 + yp;
        let s = if curv < 0.0 { 0.5 * (ym - yp) / curv } else { 0.0 };
        let i = (lo + m) as f64 + s;
        let j = k as f64 - i;
        points.push((delta_a[0] + i * da, delta_b[0] + j * db));
    }
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(RidgeFit { slope, intercept: my - slope * mx, points })
}

/// Travel time through a line of `length` at `v_fraction·c`, plus an extra
/// cable of `extra_cable` at `cable_v_fraction·c`.
pub fn propagation_delay(
    length: f64,
    v_fraction: f64,
    extra_cable: f64,
    cable_v_fraction: Option<f64>,
) -> Result<f64> {
    if !(length.is_finite() && length >= 0.0) || !(extra_cable.is_finite() && extra_cable >= 0.0) {
        return Err(Error::Domain("lengths must be finite and non-negative".into()));
    }
    if !(v_fraction > 0.0 && v_fraction <= 1.0) {
        return Err(Error::Domain(format!("velocity fraction {v_fraction} outside (0, 1]")));
    }
    let cable = match (extra_cable > 0.0, cable_v_fraction) {
        (false, _) => 0.0,
        (true, Some(f)) if f > 0.0 && f <= 1.0 => extra_cable / (f * SPEED_OF_LIGHT),
        (true, _) => {
            return Err(Error::Domain("extra cable needs a velocity fraction in (0, 1]".into()))
        }
    };
    Ok(length / (v_fraction * SPEED_OF_LIGHT) + cable)
}
