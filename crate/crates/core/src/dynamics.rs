//! Single-excitation dynamics of emitter, channel and receiver.
//!
//! Each node is a transmon f-level coupled to its transfer resonator by the
//! drive `g(t)`. In the amplitudes `α` (qubit in f, resonator empty) and `β`
//! (qubit in g, one resonator photon):
//!
//! ```text
//! α' = g β − α/(2 T1)
//! β' = −g* α − (κ/2) β − iΔ β − √κ f_in
//! ```
//!
//! The emitted field is `f_out = √κ_A β_A`. The receiver is driven by
//! `f_in = √(1 − p_loss) f_out(t − τ)` and reflects `f_refl = f_in + √κ_B β_B`.
//! With this sign pair, time-reversed absorption of a matched mode maps the
//! photon onto the receiver qubit and the total excitation is conserved.
//!
//! The cascade is integrated in the retarded frame of the emitter: receiver
//! time is emitter time plus the link delay, so no photon is ever in flight.
//! A node's drive is referenced to its own resonator, i.e. the sampled rate
//! is multiplied by `e^{iΔt}` before entering the equations.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::TemporalMode;
use crate::pulses::{self, CouplingWaveform, PulseSettings, PulseSpec};
use crate::quad;
use crate::units::{ns_to_s, s_to_ns};

/// Largest tolerated change of the excitation norm within one step.
pub const MAX_STEP_DRIFT: f64 = 1e-4;

/// Placeholder e-f lifetime for runs that enable decay without a value.
pub const DEFAULT_T1_EF: f64 = 10e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One qubit-resonator node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    /// Resonator linewidth `κ` (rad/s).
    pub kappa: f64,
    /// Resonator frequency offset from the simulation frame (rad/s).
    pub detuning: f64,
    /// e-f decay time (s).
    pub t1_ef: Option<f64>,
}

impl NodeParams {
    pub fn new(kappa: f64) -> Self {
        NodeParams { kappa, detuning: 0.0, t1_ef: None }
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_t1(mut self, t1_ef: Option<f64>) -> Self {
        self.t1_ef = t1_ef;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::usage(format!("linewidth must be positive, got {}", self.kappa)));
        }
        if !self.detuning.is_finite() {
            return Err(Error::usage("resonator detuning must be finite"));
        }
        if let Some(t1) = self.t1_ef {
            if !(t1 > 0.0) {
                return Err(Error::usage(format!("T1 must be positive, got {t1}")));
            }
        }
        Ok(())
    }

    fn decay_rate(&self) -> f64 {
        self.t1_ef.map_or(0.0, |t1| 1.0 / t1)
    }
}

/// The channel between the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Propagation delay `τ` (s).
    pub delay: f64,
    /// Single-pass loss probability.
    pub p_loss: f64,
    /// Informational length (m).
    pub length: Option<f64>,
    /// Informational group velocity (m/s).
    pub group_velocity: Option<f64>,
}

impl LinkParams {
    pub fn new(delay: f64, p_loss: f64) -> Result<Self> {
        let link = LinkParams { delay, p_loss, length: None, group_velocity: None };
        link.validate()?;
        Ok(link)
    }

    fn validate(&self) -> Result<()> {
        if !(self.delay.is_finite() && self.delay >= 0.0) {
            return Err(Error::usage(format!("link delay must be >= 0, got {}", self.delay)));
        }
        if !(0.0..=1.0).contains(&self.p_loss) {
            return Err(Error::usage(format!("p_loss must lie in [0, 1], got {}", self.p_loss)));
        }
        Ok(())
    }
}

/// Integration options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// RK4 steps per waveform sample.
    pub substeps: usize,
    /// Free evolution after the last drive sample, in units of `1/κ`.
    pub tail_kappa: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { substeps: 1, tail_kappa: 10.0 }
    }
}

/// Amplitudes of one node on the trajectory grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeTrace {
    pub alpha: Vec<Complex64>,
    pub beta: Vec<Complex64>,
}

impl NodeTrace {
    fn with_capacity(n: usize) -> Self {
        NodeTrace { alpha: Vec::with_capacity(n), beta: Vec::with_capacity(n) }
    }

    pub fn population_f(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn population_resonator(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b.norm_sqr()).collect()
    }
}

/// Recorded simulation. Times are emitter times; fields are in s^(-1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub emitter: NodeTrace,
    pub receiver: Option<NodeTrace>,
    pub f_out: Vec<Complex64>,
    pub f_in: Vec<Complex64>,
    pub f_refl: Vec<Complex64>,
    /// `∫ |f_out|² dt` up to each time.
    pub emitted: Vec<f64>,
    /// `∫ |f_refl|² dt` up to each time.
    pub reflected: Vec<f64>,
    /// `p_loss ∫ |f_out|² dt` up to each time.
    pub lost: Vec<f64>,
    /// Probability lost to e-f decay up to each time (both nodes).
    pub decayed: Vec<f64>,
    /// Difference between the requested and the applied receiver offset (s).
    pub delay_rounding: f64,
    /// Envelope fraction inside the unmodified window of the emission pulse.
    pub captured_fraction: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Total probability of all accounts at step `k`.
    pub fn norm_at(&self, k: usize) -> f64 {
        let mut total = self.emitter.alpha[k].norm_sqr()
            + self.emitter.beta[k].norm_sqr()
            + self.decayed[k];
        match &self.receiver {
            Some(r) => {
                total += r.alpha[k].norm_sqr() + r.beta[k].norm_sqr() + self.reflected[k]
                    + self.lost[k]
            }
            None => total += self.emitted[k],
        }
        total
    }

    /// `max_k |norm_at(k) - 1|`.
    pub fn norm_defect(&self) -> f64 {
        (0..self.len()).map(|k| (self.norm_at(k) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn final_pf_emitter(&self) -> f64 {
        self.emitter.alpha.last().map_or(1.0, |a| a.norm_sqr())
    }

    pub fn final_pf_receiver(&self) -> Option<f64> {
        self.receiver.as_ref().and_then(|r| r.alpha.last()).map(|a| a.norm_sqr())
    }

    pub fn emitted_probability(&self) -> f64 {
        self.emitted.last().copied().unwrap_or(0.0)
    }

    pub fn reflected_probability(&self) -> f64 {
        self.reflected.last().copied().unwrap_or(0.0)
    }

    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            final_pf_b: self.final_pf_receiver(),
            final_pf_a: self.final_pf_emitter(),
            emitted: self.emitted_probability(),
            reflected: self.reflected_probability(),
            captured_fraction: self.captured_fraction,
            norm_defect: self.norm_defect(),
            delay_rounding_ns: s_to_ns(self.delay_rounding),
        }
    }

    /// CSV with one row per step. Fields are exported in ns^(-1/2).
    pub fn write_csv<W: Write>(&self, writer: W, comment: Option<&str>) -> Result<()> {
        let mut writer = writer;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(writer, "# {line}")?;
            }
        }
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "t_ns", "alphaA_re", "alphaA_im", "betaA_re", "betaA_im", "alphaB_re", "alphaB_im",
            "betaB_re", "betaB_im", "fout_re", "fout_im", "frefl_re", "frefl_im",
        ])?;
        let field = ns_to_s(1.0).sqrt();
        let mut row = Vec::with_capacity(13);
        for k in 0..self.len() {
            row.clear();
            row.push(format!("{:?}", s_to_ns(self.t[k])));
            let (ab, bb) = match &self.receiver {
                Some(r) => (r.alpha[k], r.beta[k]),
                None => (ZERO, ZERO),
            };
            for z in [
                self.emitter.alpha[k],
                self.emitter.beta[k],
                ab,
                bb,
                self.f_out[k] * field,
                self.f_refl[k] * field,
            ] {
                row.push(format!("{:?}", z.re));
                row.push(format!("{:?}", z.im));
            }
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// JSON summary of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    #[serde(rename = "final_Pf_B")]
    pub final_pf_b: Option<f64>,
    #[serde(rename = "final_Pf_A")]
    pub final_pf_a: f64,
    pub emitted: f64,
    pub reflected: f64,
    pub captured_fraction: f64,
    pub norm_defect: f64,
    pub delay_rounding_ns: f64,
}

/// Four-point cubic interpolation weights at fraction `θ` between nodes 0 and 1
/// of the stencil `-1, 0, 1, 2`.
fn cubic_weights(theta: f64) -> [f64; 4] {
    let (a, b, c, d) = (theta + 1.0, theta, theta - 1.0, theta - 2.0);
    [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0]
}

/// A drive sampled on the integration grid, with the node's frame rotation.
struct Drive<'a> {
    wf: Option<&'a CouplingWaveform>,
    /// Waveform index of grid index 0.
    offset: i64,
    /// Waveform time of grid index 0.
    t_start: f64,
    dt: f64,
    rotation: f64,
}

impl Drive<'_> {
    fn at(&self, j: i64, stage: &Stage) -> Complex64 {
        let Some(wf) = self.wf else { return ZERO };
        let (theta, weights) = stage;
        let k = j + self.offset;
        let mut g = ZERO;
        for (i, w) in weights.iter().enumerate() {
            if *w != 0.0 {
                g += *w * wf.sample(k - 1 + i as i64);
            }
        }
        if self.rotation != 0.0 && g != ZERO {
            let t = self.t_start + self.dt * (j as f64 + theta);
            g *= Complex64::from_polar(1.0, self.rotation * t);
        }
        g
    }
}

/// Fractional position inside a sample interval and its interpolation weights.
type Stage = (f64, [f64; 4]);

#[derive(Clone, Copy)]
struct State {
    aa: Complex64,
    ba: Complex64,
    ab: Complex64,
    bb: Complex64,
    emitted: f64,
    reflected: f64,
    lost: f64,
    decayed: f64,
}

impl State {
    fn axpy(&self, h: f64, d: &State) -> State {
        State {
            aa: self.aa + h * d.aa,
            ba: self.ba + h * d.ba,
            ab: self.ab + h * d.ab,
            bb: self.bb + h * d.bb,
            emitted: self.emitted + h * d.emitted,
            reflected: self.reflected + h * d.reflected,
            lost: self.lost + h * d.lost,
            decayed: self.decayed + h * d.decayed,
        }
    }

    fn norm(&self, cascade: bool) -> f64 {
        let a = self.aa.norm_sqr() + self.ba.norm_sqr() + self.decayed;
        if cascade {
            a + self.ab.norm_sqr() + self.bb.norm_sqr() + self.reflected + self.lost
        } else {
            a + self.emitted
        }
    }
}

struct System {
    a: NodeParams,
    b: Option<NodeParams>,
    transmission: f64,
    p_loss: f64,
}

impl System {
    fn fields(&self, s: &State) -> (Complex64, Complex64, Complex64) {
        let f_out = self.a.kappa.sqrt() * s.ba;
        match &self.b {
            Some(b) => {
                let f_in = self.transmission * f_out;
                (f_out, f_in, f_in + b.kappa.sqrt() * s.bb)
            }
            None => (f_out, ZERO, ZERO),
        }
    }

    fn rhs(&self, s: &State, ga: Complex64, gb: Complex64) -> State {
        let i = Complex64::i();
        let a = &self.a;
        let ra = a.decay_rate();
        let (f_out, f_in, f_refl) = self.fields(s);
        let mut d = State {
            aa: ga * s.ba - 0.5 * ra * s.aa,
            ba: -ga.conj() * s.aa - 0.5 * a.kappa * s.ba - i * a.detuning * s.ba,
            ab: ZERO,
            bb: ZERO,
            emitted: f_out.norm_sqr(),
            reflected: 0.0,
            lost: 0.0,
            decayed: ra * s.aa.norm_sqr(),
        };
        if let Some(b) = &self.b {
            let rb = b.decay_rate();
            d.ab = gb * s.bb - 0.5 * rb * s.ab;
            d.bb = -gb.conj() * s.ab - 0.5 * b.kappa * s.bb - i * b.detuning * s.bb
                - b.kappa.sqrt() * f_in;
            d.reflected = f_refl.norm_sqr();
            d.lost = self.p_loss * f_out.norm_sqr();
            d.decayed += rb * s.ab.norm_sqr();
        }
        d
    }
}

/// Integrates grid indices `0..n_steps` with both drives.
fn integrate(
    sys: &System,
    da: &Drive,
    db: &Drive,
    t_start: f64,
    dt: f64,
    n_points: usize,
    opts: &SimOptions,
) -> Result<Trajectory> {
    let cascade = sys.b.is_some();
    let m = opts.substeps.max(1);
    let h = dt / m as f64;
    // weights for every stage time inside one sample interval
    let stage_weights: Vec<[Stage; 3]> = (0..m)
        .map(|sub| {
            let th = sub as f64 / m as f64;
            let dth = 1.0 / m as f64;
            [th, th + 0.5 * dth, th + dth].map(|x| (x, cubic_weights(x)))
        })
        .collect();

    let mut traj = Trajectory {
        t: Vec::with_capacity(n_points),
        emitter: NodeTrace::with_capacity(n_points),
        receiver: cascade.then(|| NodeTrace::with_capacity(n_points)),
        f_out: Vec::with_capacity(n_points),
        f_in: Vec::with_capacity(n_points),
        f_refl: Vec::with_capacity(n_points),
        emitted: Vec::with_capacity(n_points),
        reflected: Vec::with_capacity(n_points),
        lost: Vec::with_capacity(n_points),
        decayed: Vec::with_capacity(n_points),
        delay_rounding: 0.0,
        captured_fraction: f64::NAN,
    };
    let mut s = State {
        aa: Complex64::new(1.0, 0.0),
        ba: ZERO,
        ab: ZERO,
        bb: ZERO,
        emitted: 0.0,
        reflected: 0.0,
        lost: 0.0,
        decayed: 0.0,
    };
    let record = |traj: &mut Trajectory, j: usize, s: &State| {
        let (f_out, f_in, f_refl) = sys.fields(s);
        traj.t.push(t_start + dt * j as f64);
        traj.emitter.alpha.push(s.aa);
        traj.emitter.beta.push(s.ba);
        if let Some(r) = traj.receiver.as_mut() {
            r.alpha.push(s.ab);
            r.beta.push(s.bb);
        }
        traj.f_out.push(f_out);
        traj.f_in.push(f_in);
        traj.f_refl.push(f_refl);
        traj.emitted.push(s.emitted);
        traj.reflected.push(s.reflected);
        traj.lost.push(s.lost);
        traj.decayed.push(s.decayed);
    };
    record(&mut traj, 0, &s);
    let mut norm = s.norm(cascade);
    for j in 0..n_points.saturating_sub(1) {
        let ji = j as i64;
        for w in &stage_weights {
            let g0 = (da.at(ji, &w[0]), db.at(ji, &w[0]));
            let g1 = (da.at(ji, &w[1]), db.at(ji, &w[1]));
            let g2 = (da.at(ji, &w[2]), db.at(ji, &w[2]));
            let k1 = sys.rhs(&s, g0.0, g0.1);
            let k2 = sys.rhs(&s.axpy(0.5 * h, &k1), g1.0, g1.1);
            let k3 = sys.rhs(&s.axpy(0.5 * h, &k2), g1.0, g1.1);
            let k4 = sys.rhs(&s.axpy(h, &k3), g2.0, g2.1);
            s = s
                .axpy(h / 6.0, &k1)
                .axpy(h / 3.0, &k2)
                .axpy(h / 3.0, &k3)
                .axpy(h / 6.0, &k4);
        }
        let next = s.norm(cascade);
        let drift = (next - norm).abs();
        if !(drift <= MAX_STEP_DRIFT) {
            return Err(Error::Integrator { step: j + 1, drift });
        }
        norm = next;
        record(&mut traj, j + 1, &s);
    }
    Ok(traj)
}

fn check_waveform(wf: &CouplingWaveform) -> Result<()> {
    if !(wf.dt > 0.0 && wf.dt.is_finite() && wf.t0.is_finite()) || wf.samples.is_empty() {
        return Err(Error::usage("waveform needs a positive sample period and samples"));
    }
    Ok(())
}

/// Emission from a node starting in `α = 1, β = 0`, continued for
/// `tail_kappa/κ` after the drive ends.
pub fn simulate_emitter(
    waveform: &CouplingWaveform,
    node: &NodeParams,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_waveform(waveform)?;
    node.validate()?;
    let dt = waveform.dt;
    let tail = (opts.tail_kappa / node.kappa / dt).ceil() as usize;
    let n_points = waveform.len() + tail;
    let sys = System { a: *node, b: None, transmission: 0.0, p_loss: 0.0 };
    let da = Drive {
        wf: Some(waveform),
        offset: 0,
        t_start: waveform.t0,
        dt,
        rotation: node.detuning,
    };
    let db = Drive { wf: None, offset: 0, t_start: 0.0, dt, rotation: 0.0 };
    let mut traj = integrate(&sys, &da, &db, waveform.t0, dt, n_points, opts)?;
    traj.captured_fraction = waveform.captured;
    Ok(traj)
}

/// Emission at node A, propagation through the link and absorption at node B.
///
/// `absorb` is positioned in receiver lab time; the photon emitted at time
/// `t` reaches the receiver at `t + link.delay`.
pub fn simulate_transfer(
    emit: &CouplingWaveform,
    absorb: &CouplingWaveform,
    nodes: (&NodeParams, &NodeParams),
    link: &LinkParams,
    opts: &SimOptions,
) -> Result<Trajectory> {
    check_waveform(emit)?;
    check_waveform(absorb)?;
    nodes.0.validate()?;
    nodes.1.validate()?;
    link.validate()?;
    let dt = emit.dt;
    if ((absorb.dt - dt) / dt).abs() > 1e-9 {
        return Err(Error::usage(format!(
            "emission and absorption waveforms use different sample periods ({} vs {} ns)",
            s_to_ns(emit.dt),
            s_to_ns(absorb.dt)
        )));
    }
    // receiver sample index = grid index - offset
    let exact = (absorb.t0 - link.delay - emit.t0) / dt;
    let offset = exact.round();
    let delay_rounding = (offset - exact) * dt;
    let offset = offset as i64;

    let first = offset.min(0);
    let last_a = emit.len() as i64 - 1;
    let last_b = offset + absorb.len() as i64 - 1;
    let kappa_min = nodes.0.kappa.min(nodes.1.kappa);
    let tail = (opts.tail_kappa / kappa_min / dt).ceil() as i64;
    let n_points = (last_a.max(last_b) - first + 1 + tail) as usize;
    let t_start = emit.t0 + dt * first as f64;

    let sys = System {
        a: *nodes.0,
        b: Some(*nodes.1),
        transmission: (1.0 - link.p_loss).sqrt(),
        p_loss: link.p_loss,
    };
    let da = Drive {
        wf: Some(emit),
        offset: first,
        t_start,
        dt,
        rotation: nodes.0.detuning,
    };
    let db = Drive {
        wf: Some(absorb),
        offset: first - offset,
        t_start: absorb.t0 + dt * (first - offset) as f64,
        dt,
        rotation: nodes.1.detuning,
    };
    let mut traj = integrate(&sys, &da, &db, t_start, dt, n_points, opts)?;
    traj.delay_rounding = delay_rounding;
    traj.captured_fraction = emit.captured;
    Ok(traj)
}

/// `min_φ ‖f - e^{iφ} target‖₂` over the trajectory grid, with the target
/// envelope given as a function of time.
pub fn l2_distance_to(fields: &[Complex64], t: &[f64], target: impl Fn(f64) -> f64) -> f64 {
    let dt = if t.len() > 1 { t[1] - t[0] } else { 0.0 };
    let tgt: Vec<f64> = t.iter().map(|&tk| target(tk)).collect();
    let cross: Complex64 = fields.iter().zip(&tgt).map(|(f, g)| f * *g).sum::<Complex64>() * dt;
    let nf: f64 = fields.iter().map(|f| f.norm_sqr()).sum::<f64>() * dt;
    let ng: f64 = tgt.iter().map(|g| g * g).sum::<f64>() * dt;
    (nf + ng - 2.0 * cross.norm()).max(0.0).sqrt()
}

/// Qubit population released by the emitter when the drive is cut at each
/// truncation time, measured after the resonator has emptied.
pub fn emitter_population_sweep(
    mode: &TemporalMode,
    node: &NodeParams,
    settings: &PulseSettings,
    truncations: &[f64],
    opts: &SimOptions,
) -> Result<Vec<f64>> {
    let spec = PulseSpec::emit(mode.clone(), node.kappa).with_settings(*settings);
    let full = pulses::synthesize(&spec)?;
    truncations
        .par_iter()
        .map(|&t_cut| {
            let wf = full.truncated(t_cut, settings.taper);
            let traj = simulate_emitter(&wf, node, opts)?;
            let k = traj.len() - 1;
            Ok(traj.emitted[k] + traj.emitter.beta[k].norm_sqr())
        })
        .collect()
}

/// Released population from the photon-flux model: the photon already in
/// the line plus the one still in the resonator, weighted by qubit decay.
pub fn analytic_population(mode: &TemporalMode, kappa: f64, t: f64, t1_ef: Option<f64>) -> f64 {
    let f = mode.eval(t);
    match t1_ef {
        None => f * f / kappa + mode.cumulative(t),
        Some(t1) => {
            let lo = -mode.half_width();
            let flux = if t <= lo {
                0.0
            } else {
                quad::integrate(
                    |s| {
                        let v = mode.eval(s);
                        v * v * (-s / t1).exp()
                    },
                    lo,
                    t,
                    1e-14,
                    1e-12,
                )
                .value
            };
            f * f / kappa * (-t / t1).exp() + flux
        }
    }
}

/// Intervals of a sampled curve where it rises no faster than `max_slope`.
/// Flat stretches touching either end of the grid are excluded.
pub fn plateaus(t: &[f64], p: &[f64], max_slope: f64) -> Vec<(f64, f64)> {
    let n = t.len().min(p.len());
    if n < 3 {
        return Vec::new();
    }
    let slope = |k: usize| (p[k + 1] - p[k - 1]) / (t[k + 1] - t[k - 1]);
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for k in 1..n - 1 {
        let flat = slope(k) <= max_slope;
        match (flat, open) {
            (true, None) => open = Some(k),
            (false, Some(start)) => {
                if start > 1 {
                    out.push((t[start], t[k - 1]));
                }
                open = None;
            }
            _ => {}
        }
    }
    out
}
