//! Synthesis of the f0-g1 coupling rate `g(t)` that releases (or captures) a
//! photon in a prescribed temporal mode.
//!
//! For emission the rate follows from the resonator's input-output balance:
//!
//! ```text
//! g(t) = (f'(t) + κ f(t)/2) / √(κ (1 - F(t)) - f(t)²)
//! ```
//!
//! which is real for a real target and exists only while the resonator can
//! keep up with the requested photon flux. Absorption uses the time-reversed
//! emission rate built with the receiver's linewidth.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::TemporalMode;
use crate::specfun::{log1p_exp, one_minus_tanh_half, polylog_neg_exp, sech, PolylogOrder};
use crate::units::{angular_to_mhz, mhz_to_angular, ns_to_s, s_to_ns};

/// Largest allowed `|g|` in units of `Γ`; larger requests are clamped.
pub const RATE_CLAMP: f64 = 20.0;

/// Minimum fraction of the envelope inside the unmodified window.
pub const MIN_CAPTURE: f64 = 0.99;

/// Relative margin in the feasibility bound `κ(1-F) - f² > ε·κ(1-F)`.
const FEASIBILITY_MARGIN: f64 = 1e-12;

pub const WAVEFORM_CSV_HEADER: [&str; 3] = ["t_ns", "re_g_over_2pi_MHz", "im_g_over_2pi_MHz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Emit,
    Absorb,
}

/// Unmodified time window of a pulse. Tapers are added outside of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    /// Symmetric about the mode center, cutting `tail` probability from
    /// each side, rounded out to whole samples.
    Auto,
    /// Explicit `[start, end]` in seconds.
    Explicit { start: f64, end: f64 },
}

/// Discretization parameters shared by every pulse in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSettings {
    /// Sample period (s).
    pub dt: f64,
    /// Linear taper length (s).
    pub taper: f64,
    /// Probability left out on each side by [`Window::Auto`].
    pub tail: f64,
}

impl Default for PulseSettings {
    fn default() -> Self {
        PulseSettings { dt: 0.1e-9, taper: 3e-9, tail: 0.005 }
    }
}

/// Everything needed to build one coupling waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub mode: TemporalMode,
    /// Resonator linewidth `κ` (rad/s).
    pub kappa: f64,
    pub direction: Direction,
    /// Carrier detuning `δ` (rad/s); samples pick up `e^{-iδt}`.
    pub detuning: f64,
    pub window: Window,
    pub settings: PulseSettings,
}

impl PulseSpec {
    pub fn new(mode: TemporalMode, kappa: f64, direction: Direction) -> Self {
        PulseSpec {
            mode,
            kappa,
            direction,
            detuning: 0.0,
            window: Window::Auto,
            settings: PulseSettings::default(),
        }
    }

    pub fn emit(mode: TemporalMode, kappa: f64) -> Self {
        Self::new(mode, kappa, Direction::Emit)
    }

    pub fn absorb(mode: TemporalMode, kappa: f64) -> Self {
        Self::new(mode, kappa, Direction::Absorb)
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    pub fn with_settings(mut self, settings: PulseSettings) -> Self {
        self.settings = settings;
        self
    }

    /// The unmodified window `[start, end]` of the emission pulse, on the
    /// sample grid.
    pub fn resolve_window(&self) -> Result<(f64, f64)> {
        let dt = self.settings.dt;
        match self.window {
            Window::Explicit { start, end } => {
                if !(start.is_finite() && end.is_finite() && end > start) {
                    return Err(Error::usage(format!("invalid window [{start}, {end}]")));
                }
                Ok((start, end))
            }
            Window::Auto => {
                let tail = self.settings.tail;
                if !(tail > 0.0 && tail < 0.5) {
                    return Err(Error::usage(format!("window tail {tail} outside (0, 0.5)")));
                }
                let half = tail_time(&self.mode, tail);
                let steps = (half / dt - 1e-9).ceil();
                Ok((-steps * dt, steps * dt))
            }
        }
    }
}

/// Smallest `T >= 0` with `1 - F(T) <= tail` (and, by parity, `F(-T) <= tail`).
fn tail_time(mode: &TemporalMode, tail: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = mode.half_width();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mode.survival(mid) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// A uniformly sampled complex coupling rate (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingWaveform {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<Complex64>,
    /// Synthesis parameters; `None` for imported waveforms without sidecar.
    pub spec: Option<PulseSpec>,
    /// Unmodified window in the waveform's own time axis.
    pub window: (f64, f64),
    /// Envelope probability inside the unmodified window.
    pub captured: f64,
    /// Number of samples clamped at `RATE_CLAMP·Γ`.
    pub clamped: usize,
}

impl CouplingWaveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|k| self.time(k)).collect()
    }

    /// Sample `k` as a signed index; zero outside the waveform.
    pub fn sample(&self, k: i64) -> Complex64 {
        if k < 0 || k as usize >= self.samples.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.samples[k as usize]
        }
    }

    /// The same waveform played `shift` seconds later.
    pub fn delayed(&self, shift: f64) -> Self {
        CouplingWaveform {
            t0: self.t0 + shift,
            window: (self.window.0 + shift, self.window.1 + shift),
            ..self.clone()
        }
    }

    /// Cut the drive off around `t_cut` with a linear ramp of length `taper`
    /// centered on `t_cut`.
    pub fn truncated(&self, t_cut: f64, taper: f64) -> Self {
        let mut out = self.clone();
        for (k, s) in out.samples.iter_mut().enumerate() {
            let t = self.t0 + self.dt * k as f64;
            let factor = if taper > 0.0 {
                ((t_cut + 0.5 * taper - t) / taper).clamp(0.0, 1.0)
            } else if t <= t_cut {
                1.0
            } else {
                0.0
            };
            *s *= factor;
        }
        out
    }

    /// Samples as `(t_ns, g/2π in MHz)` rows.
    pub fn write_csv<W: Write>(&self, writer: W, comment: Option<&str>) -> Result<()> {
        let mut writer = writer;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(writer, "# {line}")?;
            }
        }
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(WAVEFORM_CSV_HEADER)?;
        for (k, g) in self.samples.iter().enumerate() {
            csv.write_record([
                format_num(s_to_ns(self.time(k))),
                format_num(angular_to_mhz(g.re)),
                format_num(angular_to_mhz(g.im)),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), comment)
    }

    /// Reads samples written by [`write_csv`](Self::write_csv). Lines starting
    /// with `#` are ignored.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != WAVEFORM_CSV_HEADER {
            return Err(Error::format(format!(
                "waveform header must be {}, got {}",
                WAVEFORM_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (line, row) in csv.records().enumerate() {
            let row = row?;
            let parse = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(format!("bad number in waveform row {}", line + 1)))
            };
            times.push(ns_to_s(parse(0)?));
            samples.push(Complex64::new(mhz_to_angular(parse(1)?), mhz_to_angular(parse(2)?)));
        }
        if times.len() < 2 {
            return Err(Error::format("waveform needs at least two samples"));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::format("waveform times must increase"));
        }
        for (k, &t) in times.iter().enumerate() {
            if (t - times[0] - dt * k as f64).abs() > 1e-3 * dt {
                return Err(Error::format(format!("waveform grid is not uniform at row {}", k + 1)));
            }
        }
        let t0 = times[0];
        let end = times[times.len() - 1];
        Ok(CouplingWaveform {
            t0,
            dt,
            samples,
            spec: None,
            window: (t0, end),
            captured: f64::NAN,
            clamped: 0,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn metadata(&self) -> WaveformMetadata {
        WaveformMetadata {
            spec: self.spec.as_ref().map(PulseSpecRecord::from),
            t0_ns: s_to_ns(self.t0),
            dt_ns: s_to_ns(self.dt),
            samples: self.samples.len(),
            window_ns: [s_to_ns(self.window.0), s_to_ns(self.window.1)],
            captured_fraction: self.captured,
            clamped_samples: self.clamped,
        }
    }

    /// Restores the fields that a CSV cannot carry from a JSON sidecar.
    pub fn with_metadata(mut self, meta: &WaveformMetadata) -> Result<Self> {
        if meta.samples != self.samples.len() {
            return Err(Error::format(format!(
                "sidecar describes {} samples, CSV has {}",
                meta.samples,
                self.samples.len()
            )));
        }
        self.spec = meta.spec.clone().map(PulseSpec::try_from).transpose()?;
        self.window = (ns_to_s(meta.window_ns[0]), ns_to_s(meta.window_ns[1]));
        self.captured = meta.captured_fraction;
        self.clamped = meta.clamped_samples;
        Ok(self)
    }
}

fn format_num(v: f64) -> String {
    // shortest round-trip representation keeps the output reproducible
    format!("{v:?}")
}

/// JSON sidecar written next to a waveform CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformMetadata {
    pub spec: Option<PulseSpecRecord>,
    pub t0_ns: f64,
    pub dt_ns: f64,
    pub samples: usize,
    pub window_ns: [f64; 2],
    pub captured_fraction: f64,
    pub clamped_samples: usize,
}

/// [`PulseSpec`] in I/O units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpecRecord {
    pub mode: TemporalMode,
    #[serde(rename = "kappa_over_2pi_MHz")]
    pub kappa_over_2pi_mhz: f64,
    pub direction: Direction,
    #[serde(rename = "detuning_over_2pi_MHz")]
    pub detuning_over_2pi_mhz: f64,
    /// `None` for the automatic window.
    pub window_ns: Option<[f64; 2]>,
    pub dt_ns: f64,
    pub taper_ns: f64,
    pub tail: f64,
}

impl From<&PulseSpec> for PulseSpecRecord {
    fn from(spec: &PulseSpec) -> Self {
        PulseSpecRecord {
            mode: spec.mode.clone(),
            kappa_over_2pi_mhz: angular_to_mhz(spec.kappa),
            direction: spec.direction,
            detuning_over_2pi_mhz: angular_to_mhz(spec.detuning),
            window_ns: match spec.window {
                Window::Auto => None,
                Window::Explicit { start, end } => Some([s_to_ns(start), s_to_ns(end)]),
            },
            dt_ns: s_to_ns(spec.settings.dt),
            taper_ns: s_to_ns(spec.settings.taper),
            tail: spec.settings.tail,
        }
    }
}

impl TryFrom<PulseSpecRecord> for PulseSpec {
    type Error = Error;

    fn try_from(r: PulseSpecRecord) -> Result<Self> {
        Ok(PulseSpec {
            mode: r.mode,
            kappa: mhz_to_angular(r.kappa_over_2pi_mhz),
            direction: r.direction,
            detuning: mhz_to_angular(r.detuning_over_2pi_mhz),
            window: match r.window_ns {
                None => Window::Auto,
                Some([a, b]) => Window::Explicit { start: ns_to_s(a), end: ns_to_s(b) },
            },
            settings: PulseSettings {
                dt: ns_to_s(r.dt_ns),
                taper: ns_to_s(r.taper_ns),
                tail: r.tail,
            },
        })
    }
}

/// Emission rate from the generic formula, or `None` where the square root
/// argument falls below the feasibility margin.
pub fn generic_rate(mode: &TemporalMode, kappa: f64, t: f64) -> Option<f64> {
    let f = mode.eval(t);
    let df = mode.eval_derivative(t);
    let room = kappa * mode.survival(t);
    let arg = room - f * f;
    if !(arg > FEASIBILITY_MARGIN * room) {
        return None;
    }
    Some((df + 0.5 * kappa * f) / arg.sqrt())
}

/// Builds the coupling waveform for `spec`.
pub fn synthesize(spec: &PulseSpec) -> Result<CouplingWaveform> {
    let mode = &spec.mode;
    let gamma = mode.gamma();
    let kappa = spec.kappa;
    let PulseSettings { dt, taper, .. } = spec.settings;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::usage(format!("resonator linewidth must be positive, got {kappa}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::usage(format!("sample period must be positive, got {dt}")));
    }
    let dt_max = 1.0 / (50.0 * gamma.max(kappa));
    if dt > dt_max * (1.0 + 1e-9) {
        return Err(Error::usage(format!(
            "sample period {:.4} ns too coarse, at most {:.4} ns resolves the pulse",
            s_to_ns(dt),
            s_to_ns(dt_max)
        )));
    }
    if !(taper >= 0.0 && taper.is_finite()) {
        return Err(Error::usage(format!("taper length must be non-negative, got {taper}")));
    }
    if !spec.detuning.is_finite() {
        return Err(Error::usage("carrier detuning must be finite"));
    }
    // the ratio f²/(κ(1-F)) tends to Γ/κ for every member of the family
    let asymptotic_ratio = gamma / kappa;

    let (start, end) = spec.resolve_window()?;
    let captured = mode.cumulative(end) - mode.cumulative(start);
    if captured < MIN_CAPTURE {
        return Err(Error::Window { captured });
    }
    if asymptotic_ratio >= 1.0 {
        return Err(Error::Infeasible { time: end, asymptotic_ratio });
    }

    let n_window = ((end - start) / dt).round() as usize;
    let n_taper = (taper / dt).round() as usize;
    let t0 = start - n_taper as f64 * dt;
    let len = n_window + 2 * n_taper + 1;
    let limit = RATE_CLAMP * gamma;
    let mut clamped = 0;
    let mut samples = Vec::with_capacity(len);
    for k in 0..len {
        let t = t0 + dt * k as f64;
        let g = generic_rate(mode, kappa, t)
            .ok_or(Error::Infeasible { time: t, asymptotic_ratio })?;
        let g = if g.abs() > limit {
            clamped += 1;
            limit.copysign(g)
        } else {
            g
        };
        let ramp = if k < n_taper {
            k as f64 / n_taper as f64
        } else if k + n_taper >= len {
            (len - 1 - k) as f64 / n_taper as f64
        } else {
            1.0
        };
        samples.push(g * ramp);
    }

    let (t0, window) = match spec.direction {
        Direction::Emit => (t0, (start, end)),
        Direction::Absorb => {
            samples.reverse();
            let t_last = t0 + dt * (len - 1) as f64;
            (-t_last, (-end, -start))
        }
    };
    let samples = samples
        .into_iter()
        .enumerate()
        .map(|(k, g)| {
            let t = t0 + dt * k as f64;
            Complex64::from_polar(g, -spec.detuning * t)
        })
        .collect();
    Ok(CouplingWaveform {
        t0,
        dt,
        samples,
        spec: Some(spec.clone()),
        window,
        captured,
        clamped,
    })
}

/// Closed-form emission rate for the modes `n = 0, 1, 2`, written in
/// `x = Γt` with every term evaluated without overflow.
pub fn closed_form_rate(n: usize, gamma: f64, kappa: f64, t: f64) -> Result<f64> {
    if !(gamma > 0.0 && kappa > 0.0) {
        return Err(Error::usage("bandwidth and linewidth must be positive"));
    }
    if gamma >= kappa {
        return Err(Error::Infeasible { time: f64::INFINITY, asymptotic_ratio: gamma / kappa });
    }
    if !t.is_finite() {
        return Err(Error::usage("time must be finite"));
    }
    let x = gamma * t;
    let th = (x / 2.0).tanh();
    match n {
        0 => {
            let num = gamma.sqrt() * (kappa - gamma * th);
            Ok(if x >= 0.0 {
                num / (2.0 * (kappa * (-x).exp() + kappa - gamma).sqrt())
            } else {
                num * (x / 2.0).exp() / (2.0 * (kappa + x.exp() * (kappa - gamma)).sqrt())
            })
        }
        1 | 2 => {
            let s = sech(x / 2.0);
            let s2 = s * s;
            let omt = one_minus_tanh_half(x);
            let l = log1p_exp(x);
            let li2 = polylog_neg_exp(PolylogOrder::TWO, x)?;
            let pre = 0.5 * gamma * gamma.sqrt() * s;
            if n == 1 {
                let bracket = x * x * (2.0 * kappa * omt - gamma * s2) + 8.0 * kappa * x * l
                    - 8.0 * kappa * li2;
                Ok(pre * (2.0 + kappa * t - x * th) / bracket.sqrt())
            } else {
                let li3 = polylog_neg_exp(PolylogOrder::THREE, x)?;
                let li4 = polylog_neg_exp(PolylogOrder::FOUR, x)?;
                let a = 3.0 * x * x - PI * PI;
                let bracket = a * a * (2.0 * kappa * omt - gamma * s2)
                    + 48.0 * kappa * x * a * l
                    + 48.0 * kappa * (PI * PI - 9.0 * x * x) * li2
                    - 864.0 * kappa * (x * li3 + li4);
                Ok(pre * (12.0 * x - a * th + kappa * a / gamma) / bracket.sqrt())
            }
        }
        _ => Err(Error::usage(format!("closed-form rates exist for n = 0, 1, 2, got {n}"))),
    }
}

/// Number of strict sign changes in a sampled curve, ignoring exact zeros.
pub fn count_sign_changes(values: &[f64]) -> usize {
    let mut last = 0.0f64;
    let mut changes = 0;
    for &v in values {
        if v == 0.0 {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            changes += 1;
        }
        last = v;
    }
    changes
}

/// The three closed-form emission rates on one common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiProfile {
    pub gamma: f64,
    pub kappa: f64,
    pub t: Vec<f64>,
    /// `rates[n][k]` is `g_n(t_k)` in rad/s.
    pub rates: [Vec<f64>; 3],
}

impl RabiProfile {
    /// Samples `g_0, g_1, g_2` over the widest of their automatic windows.
    pub fn new(gamma: f64, kappa: f64, settings: &PulseSettings) -> Result<Self> {
        let mut half: f64 = 0.0;
        for n in 0..3 {
            let spec = PulseSpec::emit(TemporalMode::closed_form(n, gamma)?, kappa)
                .with_settings(*settings);
            half = half.max(spec.resolve_window()?.1);
        }
        let steps = (half / settings.dt).round() as i64;
        let t: Vec<f64> = (-steps..=steps).map(|k| k as f64 * settings.dt).collect();
        let mut rates: [Vec<f64>; 3] = Default::default();
        for (n, curve) in rates.iter_mut().enumerate() {
            *curve = t
                .iter()
                .map(|&tk| closed_form_rate(n, gamma, kappa, tk))
                .collect::<Result<_>>()?;
        }
        Ok(RabiProfile { gamma, kappa, t, rates })
    }

    pub fn interior_zeros(&self, n: usize) -> usize {
        count_sign_changes(&self.rates[n])
    }

    pub fn write_csv<W: Write>(&self, writer: W, comment: Option<&str>) -> Result<()> {
        let mut writer = writer;
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(writer, "# {line}")?;
            }
        }
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["t_ns", "g0_over_2pi_MHz", "g1_over_2pi_MHz", "g2_over_2pi_MHz"])?;
        for (k, &t) in self.t.iter().enumerate() {
            csv.write_record([
                format_num(s_to_ns(t)),
                format_num(angular_to_mhz(self.rates[0][k])),
                format_num(angular_to_mhz(self.rates[1][k])),
                format_num(angular_to_mhz(self.rates[2][k])),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}
