//! The orthonormal sech-weighted temporal mode family.
//!
//! Every mode has the form `f_n(t) = √Γ · P_n(Γt) · sech(Γt/2)` with `P_n` a
//! real polynomial of degree `n`, orthonormal under the weight
//! `sech²(x/2)`. The first three members have closed forms (including their
//! cumulative probabilities, expressed with polylogarithms); higher orders
//! come from a Gram–Schmidt construction on exact weight moments.

use std::borrow::Cow;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::specfun::{self, log1p_exp, one_minus_tanh_half, polylog_neg_exp, sech, PolylogOrder};
use crate::units;

/// Minimal half-width of the integration window, in units of `1/Γ`.
pub const DEFAULT_HALF_WIDTH: f64 = 30.0;

/// Trapezoid spacing for mode overlaps, in units of `1/Γ`. The integrands are
/// analytic in the strip `|Im Γt| < π`, so the rule is exact to machine
/// precision well before this spacing.
const OVERLAP_STEP: f64 = 0.2;

/// Largest orthogonality defect tolerated from the Gram–Schmidt construction.
const GS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum ModeKind {
    /// `f_0`, `f_1`, `f_2` from their published closed forms.
    ClosedForm,
    /// Coefficients of `P_n(x)` in powers of `x = Γt`, lowest order first.
    GramSchmidt { coeffs: Vec<f64> },
}

/// A normalized photon envelope `f_n(t)` with bandwidth `Γ` (rad/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModeRecord", try_from = "ModeRecord")]
pub struct TemporalMode {
    order: usize,
    gamma: f64,
    kind: ModeKind,
}

impl TemporalMode {
    /// Closed-form mode of order 0, 1 or 2.
    pub fn closed_form(order: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if order > 2 {
            return Err(Error::usage(format!(
                "closed forms exist for orders 0..=2 only, got {order}"
            )));
        }
        Ok(TemporalMode { order, gamma, kind: ModeKind::ClosedForm })
    }

    /// Mode of any order: closed form up to 2, Gram–Schmidt above.
    pub fn new(order: usize, gamma: f64) -> Result<Self> {
        if order <= 2 {
            Self::closed_form(order, gamma)
        } else {
            let mut family = ModeFamily::gram_schmidt(gamma, order)?;
            Ok(family.modes.pop().expect("family has order + 1 members"))
        }
    }

    fn from_coeffs(order: usize, gamma: f64, coeffs: Vec<f64>) -> Result<Self> {
        check_gamma(gamma)?;
        if coeffs.len() != order + 1 {
            return Err(Error::format(format!(
                "mode of order {order} needs {} polynomial coefficients, got {}",
                order + 1,
                coeffs.len()
            )));
        }
        Ok(TemporalMode { order, gamma, kind: ModeKind::GramSchmidt { coeffs } })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Bandwidth `Γ` in rad/s.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kind(&self) -> &ModeKind {
        &self.kind
    }

    /// Same envelope at a different bandwidth.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(TemporalMode { gamma, ..self.clone() })
    }

    /// Coefficients of `P_n(x)`, `x = Γt`, lowest order first.
    pub fn poly_coeffs(&self) -> Cow<'_, [f64]> {
        match &self.kind {
            ModeKind::GramSchmidt { coeffs } => Cow::Borrowed(coeffs),
            ModeKind::ClosedForm => Cow::Owned(match self.order {
                0 => vec![0.5],
                1 => vec![0.0, 3f64.sqrt() / (2.0 * PI)],
                _ => {
                    let c = 5f64.sqrt() / (8.0 * PI * PI);
                    vec![-c * PI * PI, 0.0, 3.0 * c]
                }
            }),
        }
    }

    /// `f_n(t)` in s^(-1/2).
    pub fn eval(&self, t: f64) -> f64 {
        let g = self.gamma;
        let x = g * t;
        let s = sech(x / 2.0);
        match &self.kind {
            ModeKind::ClosedForm => match self.order {
                0 => g.sqrt() / 2.0 * s,
                1 => (3.0 * g).sqrt() / (2.0 * PI) * x * s,
                _ => (5.0 * g).sqrt() / (8.0 * PI * PI) * (3.0 * x * x - PI * PI) * s,
            },
            ModeKind::GramSchmidt { coeffs } => g.sqrt() * horner(coeffs, x) * s,
        }
    }

    /// `df_n/dt` in s^(-3/2).
    pub fn eval_derivative(&self, t: f64) -> f64 {
        let g = self.gamma;
        let x = g * t;
        let s = sech(x / 2.0);
        let th = (x / 2.0).tanh();
        let g32 = g * g.sqrt();
        match &self.kind {
            ModeKind::ClosedForm => match self.order {
                0 => -g32 / 4.0 * s * th,
                1 => 3f64.sqrt() * g32 / (4.0 * PI) * s * (2.0 - x * th),
                _ => {
                    5f64.sqrt() * g32 / (16.0 * PI * PI)
                        * s
                        * (12.0 * x + (PI * PI - 3.0 * x * x) * th)
                }
            },
            ModeKind::GramSchmidt { coeffs } => {
                let p = horner(coeffs, x);
                let dp = horner_derivative(coeffs, x);
                g32 * (dp - 0.5 * p * th) * s
            }
        }
    }

    /// `F_n(t) = ∫_{-∞}^t f_n² dτ`.
    pub fn cumulative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.lower_tail(t)
        } else {
            1.0 - self.lower_tail(-t)
        }
    }

    /// `1 - F_n(t)`, accurate when it is tiny.
    pub fn survival(&self, t: f64) -> f64 {
        if t >= 0.0 {
            self.lower_tail(-t)
        } else {
            1.0 - self.lower_tail(t)
        }
    }

    /// `F_n(t)` for `t <= 0`; by parity of `f_n²` this is also `1 - F_n(-t)`.
    fn lower_tail(&self, t: f64) -> f64 {
        debug_assert!(t <= 0.0);
        match &self.kind {
            ModeKind::ClosedForm => closed_form_survival(self.order, -self.gamma * t),
            ModeKind::GramSchmidt { .. } => {
                let lo = -self.half_width();
                if t <= lo {
                    return 0.0;
                }
                let f2 = |s: f64| {
                    let v = self.eval(s);
                    v * v
                };
                quad::integrate(f2, lo, t, 1e-16, 1e-14).value
            }
        }
    }

    /// Half-width (s) beyond which `f_n²` carries less than ~1e-20 probability.
    pub fn half_width(&self) -> f64 {
        let coeffs = self.poly_coeffs();
        let mut x = DEFAULT_HALF_WIDTH;
        loop {
            let p = horner(&coeffs, x).abs().max(horner(&coeffs, -x).abs());
            // ∫_X^∞ P² sech² ≈ 4 P(X)² e^{-X}
            if 4.0 * p * p * (-x).exp() < 1e-20 || x > 2000.0 {
                return x / self.gamma;
            }
            x += 2.0;
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::usage(format!("bandwidth must be positive and finite, got {gamma}")))
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn horner_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
}

fn li(n: PolylogOrder, x: f64) -> f64 {
    polylog_neg_exp(n, x).expect("finite argument")
}

/// `1 - F_n` at `x = Γt >= 0`, rearranged from the polylogarithm closed forms
/// so every term is small and no cancellation against 1 occurs.
fn closed_form_survival(order: usize, x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    let pi2 = PI * PI;
    let omt = one_minus_tanh_half(x);
    match order {
        0 => {
            let e = (-x).exp();
            e / (1.0 + e)
        }
        1 => {
            let l = log1p_exp(x);
            (3.0 * x * x * omt + 12.0 * x * l - 12.0 * li(PolylogOrder::TWO, x)) / (2.0 * pi2)
        }
        _ => {
            let l = log1p_exp(x);
            let a = pi2 - 3.0 * x * x;
            let num = 5.0 * a * a * omt - 120.0 * x * a * l
                - 2160.0 * (x * li(PolylogOrder::THREE, x) + li(PolylogOrder::FOUR, x))
                + 120.0 * (pi2 - 9.0 * x * x) * li(PolylogOrder::TWO, x);
            num / (32.0 * pi2 * pi2)
        }
    }
}

/// Serialized form of a [`TemporalMode`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeRecord {
    pub n: usize,
    #[serde(rename = "gamma_over_2pi_MHz")]
    pub gamma_over_2pi_mhz: f64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly_coeffs: Option<Vec<f64>>,
}

impl From<TemporalMode> for ModeRecord {
    fn from(mode: TemporalMode) -> Self {
        let gamma_over_2pi_mhz = units::angular_to_mhz(mode.gamma);
        match mode.kind {
            ModeKind::ClosedForm => ModeRecord {
                n: mode.order,
                gamma_over_2pi_mhz,
                kind: "closed_form".into(),
                poly_coeffs: None,
            },
            ModeKind::GramSchmidt { coeffs } => ModeRecord {
                n: mode.order,
                gamma_over_2pi_mhz,
                kind: "gram_schmidt".into(),
                poly_coeffs: Some(coeffs),
            },
        }
    }
}

impl TryFrom<ModeRecord> for TemporalMode {
    type Error = Error;

    fn try_from(rec: ModeRecord) -> Result<Self> {
        let gamma = units::mhz_to_angular(rec.gamma_over_2pi_mhz);
        match (rec.kind.as_str(), rec.poly_coeffs) {
            ("closed_form", _) => TemporalMode::closed_form(rec.n, gamma),
            ("gram_schmidt", Some(coeffs)) => TemporalMode::from_coeffs(rec.n, gamma, coeffs),
            ("gram_schmidt", None) => TemporalMode::new(rec.n, gamma),
            (other, _) => Err(Error::format(format!("unknown mode kind '{other}'"))),
        }
    }
}

/// Modes `f_0 ..= f_N` sharing one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFamily {
    gamma: f64,
    modes: Vec<TemporalMode>,
}

impl ModeFamily {
    /// Gram–Schmidt orthonormalization of `1, x, x², …` under the weight
    /// `sech²(x/2)`, using exact moments of the weight.
    ///
    /// Working in `v = x/π`, the moments are
    /// `μ_{2m} = ∫ v^{2m} sech²(πv/2) π dv = 8 (2m)! η(2m) / π^{2m}` and vanish
    /// for odd powers. Leading coefficients are positive.
    pub fn gram_schmidt(gamma: f64, max_order: usize) -> Result<Self> {
        check_gamma(gamma)?;
        let size = max_order + 1;
        let moments: Vec<f64> = (0..=2 * max_order)
            .map(|j| {
                if j % 2 == 1 {
                    0.0
                } else {
                    let fact: f64 = (1..=j).map(|k| k as f64).product();
                    8.0 * fact * specfun::dirichlet_eta(j as u32) / PI.powi(j as i32)
                }
            })
            .collect();
        let inner = |p: &[f64], q: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                for (j, &qj) in q.iter().enumerate() {
                    acc += pi * qj * moments[i + j];
                }
            }
            acc
        };

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(size);
        for n in 0..size {
            let mut p = vec![0.0; size];
            p[n] = 1.0;
            let start_norm = inner(&p, &p);
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for q in &basis {
                    let c = inner(q, &p);
                    for (pk, qk) in p.iter_mut().zip(q) {
                        *pk -= c * qk;
                    }
                }
            }
            let norm2 = inner(&p, &p);
            if !(norm2 > 1e-24 * start_norm) {
                return Err(Error::Computation(format!(
                    "Gram-Schmidt lost linear independence at order {n}; \
                     higher-precision moments are needed"
                )));
            }
            let norm = norm2.sqrt();
            p.iter_mut().for_each(|c| *c /= norm);
            basis.push(p);
        }

        let mut defect: f64 = 0.0;
        for (i, p) in basis.iter().enumerate() {
            for (j, q) in basis.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((inner(p, q) - target).abs());
            }
        }
        if defect > GS_TOLERANCE {
            return Err(Error::Computation(format!(
                "Gram-Schmidt orthogonality defect {defect:.2e} exceeds {GS_TOLERANCE:.0e} \
                 at max order {max_order}; higher-precision moments are needed"
            )));
        }

        let modes = basis
            .into_iter()
            .enumerate()
            .map(|(n, q)| {
                // P(x) = Q(x/π)
                let coeffs: Vec<f64> = q
                    .iter()
                    .take(n + 1)
                    .enumerate()
                    .map(|(k, &c)| c / PI.powi(k as i32))
                    .collect();
                TemporalMode { order: n, gamma, kind: ModeKind::GramSchmidt { coeffs } }
            })
            .collect();
        Ok(ModeFamily { gamma, modes })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn max_order(&self) -> usize {
        self.modes.len() - 1
    }

    pub fn get(&self, n: usize) -> Option<&TemporalMode> {
        self.modes.get(n)
    }

    pub fn modes(&self) -> &[TemporalMode] {
        &self.modes
    }

    /// `max |(f_n|f_m) - δ_nm|` over all pairs, by numerical quadrature.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.modes.iter().enumerate() {
            for b in &self.modes[..=i] {
                let target = if a.order == b.order { 1.0 } else { 0.0 };
                let o = mode_overlap(a, b, 0.0);
                worst = worst.max((o - target).abs());
            }
        }
        worst
    }
}

/// A complex envelope sampled on a uniform grid `t0 + k·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEnvelope {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<Complex64>,
}

impl SampledEnvelope {
    pub fn new(t0: f64, dt: f64, values: Vec<Complex64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite() && t0.is_finite()) {
            return Err(Error::usage("sampled envelope needs finite t0 and positive dt"));
        }
        Ok(SampledEnvelope { t0, dt, values })
    }

    /// Samples a mode on the given grid.
    pub fn from_mode(mode: &TemporalMode, t0: f64, dt: f64, len: usize) -> Self {
        let values = (0..len)
            .map(|k| Complex64::new(mode.eval(t0 + dt * k as f64), 0.0))
            .collect();
        SampledEnvelope { t0, dt, values }
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + self.dt * k as f64
    }

    pub fn norm_squared(&self) -> f64 {
        let w: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        quad::trapezoid(&w, self.dt)
    }
}

/// Either side of an overlap integral.
#[derive(Debug, Clone, Copy)]
pub enum Envelope<'a> {
    Mode(&'a TemporalMode),
    Sampled(&'a SampledEnvelope),
}

impl<'a> From<&'a TemporalMode> for Envelope<'a> {
    fn from(m: &'a TemporalMode) -> Self {
        Envelope::Mode(m)
    }
}

impl<'a> From<&'a SampledEnvelope> for Envelope<'a> {
    fn from(s: &'a SampledEnvelope) -> Self {
        Envelope::Sampled(s)
    }
}

/// Shifted inner product `∫ a*(t - shift) b(t) dt`.
pub fn overlap<'a>(
    a: impl Into<Envelope<'a>>,
    b: impl Into<Envelope<'a>>,
    shift: f64,
) -> Result<Complex64> {
    match (a.into(), b.into()) {
        (Envelope::Mode(a), Envelope::Mode(b)) => Ok(Complex64::new(mode_overlap(a, b, shift), 0.0)),
        (Envelope::Mode(a), Envelope::Sampled(b)) => {
            let w: Vec<Complex64> = (0..b.values.len())
                .map(|k| a.eval(b.time(k) - shift) * b.values[k])
                .collect();
            Ok(trapezoid_complex(&w, b.dt))
        }
        (Envelope::Sampled(a), Envelope::Mode(b)) => {
            let w: Vec<Complex64> = (0..a.values.len())
                .map(|k| a.values[k].conj() * b.eval(a.time(k) + shift))
                .collect();
            Ok(trapezoid_complex(&w, a.dt))
        }
        (Envelope::Sampled(a), Envelope::Sampled(b)) => sampled_overlap(a, b, shift),
    }
}

fn sampled_overlap(a: &SampledEnvelope, b: &SampledEnvelope, shift: f64) -> Result<Complex64> {
    let dt = a.dt;
    if ((a.dt - b.dt) / dt).abs() > 1e-9 || ((a.t0 - b.t0) / dt).abs() > 1e-6 {
        return Err(Error::usage(format!(
            "sampled envelopes are on different grids (t0 {} vs {}, dt {} vs {})",
            a.t0, b.t0, a.dt, b.dt
        )));
    }
    let steps = shift / dt;
    let offset = steps.round();
    if (steps - offset).abs() > 1e-6 {
        return Err(Error::usage(format!(
            "shift {shift} s is not a whole number of samples (dt = {dt} s)"
        )));
    }
    let offset = offset as i64;
    // a*(t_k - shift) pairs a[k - offset] with b[k]
    let w: Vec<Complex64> = (0..b.values.len() as i64)
        .map(|k| {
            let j = k - offset;
            if j < 0 || j >= a.values.len() as i64 {
                Complex64::new(0.0, 0.0)
            } else {
                a.values[j as usize].conj() * b.values[k as usize]
            }
        })
        .collect();
    Ok(trapezoid_complex(&w, dt))
}

fn trapezoid_complex(w: &[Complex64], dt: f64) -> Complex64 {
    match w.len() {
        0 | 1 => Complex64::new(0.0, 0.0),
        n => {
            let inner: Complex64 = w[1..n - 1].iter().sum();
            (inner + 0.5 * (w[0] + w[n - 1])) * dt
        }
    }
}

/// `∫ a(t - shift) b(t) dt` for two real modes.
pub fn mode_overlap(a: &TemporalMode, b: &TemporalMode, shift: f64) -> f64 {
    shifted_integral(a, b, shift, |t| a.eval(t))
}

/// `d/dshift ∫ a(t - shift) b(t) dt = -∫ ȧ(t - shift) b(t) dt`.
pub fn mode_overlap_derivative(a: &TemporalMode, b: &TemporalMode, shift: f64) -> f64 {
    -shifted_integral(a, b, shift, |t| a.eval_derivative(t))
}

fn shifted_integral(
    a: &TemporalMode,
    b: &TemporalMode,
    shift: f64,
    fa: impl Fn(f64) -> f64,
) -> f64 {
    let wa = a.half_width();
    let wb = b.half_width();
    let lo = (shift - wa).max(-wb);
    let hi = (shift + wa).min(wb);
    if hi <= lo {
        return 0.0;
    }
    let h = OVERLAP_STEP / a.gamma.max(b.gamma);
    let n = ((hi - lo) / h).ceil().max(2.0) as usize;
    quad::trapezoid_fn(|t| fa(t - shift) * b.eval(t), lo, hi, n)
}
