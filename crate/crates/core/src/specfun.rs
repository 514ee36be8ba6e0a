//! Special functions used by the closed-form mode cumulatives and rates.
//!
//! Everything here is real-valued and evaluated on the negative real axis
//! `z = -e^{-x}` only, which is all the sech mode family needs.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Number of terms of the accelerated alternating series. The error bound of
/// the acceleration is `2 / (3 + √8)^n`, far below 1e-16 for 32 terms.
const ACCEL_TERMS: usize = 32;

/// Above this `x` the plain series in `z = -e^{-x}` converges in ~20 terms.
const DIRECT_SERIES_MIN_X: f64 = 2.0;

const DIRECT_SERIES_MAX_TERMS: usize = 400;

/// Order of a polylogarithm supported by [`polylog_neg_exp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolylogOrder(u32);

impl PolylogOrder {
    pub const TWO: PolylogOrder = PolylogOrder(2);
    pub const THREE: PolylogOrder = PolylogOrder(3);
    pub const FOUR: PolylogOrder = PolylogOrder(4);

    pub fn new(order: u32) -> Result<Self> {
        match order {
            2..=4 => Ok(PolylogOrder(order)),
            _ => Err(Error::Domain(format!(
                "polylogarithm order {order} not supported (expected 2, 3 or 4)"
            ))),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl TryFrom<u32> for PolylogOrder {
    type Error = Error;

    fn try_from(order: u32) -> Result<Self> {
        PolylogOrder::new(order)
    }
}

/// `Li_n(-e^{-x})` for `n ∈ {2, 3, 4}` and any finite real `x`.
///
/// For `x >= 0` the defining series is summed, accelerated near `x = 0`
/// where `|z| -> 1`. Negative `x` is mapped back onto `|z| <= 1` with the
/// inversion identity relating `Li_n(-e^{y})` and `Li_n(-e^{-y})`.
pub fn polylog_neg_exp(order: PolylogOrder, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("polylog argument x = {x} is not finite")));
    }
    if x >= 0.0 {
        return Ok(polylog_neg_exp_nonneg(order.0, x));
    }
    let y = -x;
    let inner = polylog_neg_exp_nonneg(order.0, y);
    let value = match order.0 {
        2 => -PI * PI / 6.0 - y * y / 2.0 - inner,
        3 => inner - PI * PI * y / 6.0 - y * y * y / 6.0,
        4 => {
            let y2 = y * y;
            -7.0 * PI.powi(4) / 360.0 - PI * PI * y2 / 12.0 - y2 * y2 / 24.0 - inner
        }
        _ => unreachable!("order validated by PolylogOrder"),
    };
    Ok(value)
}

fn polylog_neg_exp_nonneg(n: u32, x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x >= DIRECT_SERIES_MIN_X {
        let z = -(-x).exp();
        let mut zk = 1.0;
        let mut sum = 0.0;
        for k in 1..=DIRECT_SERIES_MAX_TERMS {
            zk *= z;
            let term = zk / (k as f64).powi(n as i32);
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() || zk == 0.0 {
                break;
            }
        }
        sum
    } else {
        // Li_n(-q) = -Σ_{k≥0} (-1)^k q^{k+1} / (k+1)^n with q = e^{-x}
        let q = (-x).exp();
        -alternating_sum(|k| {
            let m = (k + 1) as f64;
            q.powi(k as i32 + 1) / m.powi(n as i32)
        })
    }
}

/// `Σ_{k≥0} (-1)^k a_k` for a totally monotone sequence `a_k` (moments of a
/// positive measure on `[0, 1]`), using the Cohen–Rodriguez Villegas–Zagier
/// acceleration.
pub(crate) fn alternating_sum(a: impl Fn(usize) -> f64) -> f64 {
    let n = ACCEL_TERMS;
    let mut d = (3.0 + 8f64.sqrt()).powi(n as i32);
    d = (d + 1.0 / d) / 2.0;
    let mut b = -1.0;
    let mut c = -d;
    let mut s = 0.0;
    for k in 0..n {
        c = b - c;
        s += c * a(k);
        let kf = k as f64;
        let nf = n as f64;
        b *= (kf + nf) * (kf - nf) / ((kf + 0.5) * (kf + 1.0));
    }
    s / d
}

/// Dirichlet eta function `η(s) = Σ_{k≥1} (-1)^{k-1} k^{-s}` at a
/// non-negative integer, `η(0) = 1/2` in the Abel sense.
pub fn dirichlet_eta(s: u32) -> f64 {
    alternating_sum(|k| ((k + 1) as f64).powi(-(s as i32)))
}

/// Hyperbolic secant, `2 / (e^x + e^{-x})`, without overflow.
pub fn sech(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// `ln(1 + e^{-x})` without overflow for large negative `x`.
pub fn log1p_exp(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `1 - tanh(x/2) = 2 / (1 + e^x)`, accurate when the result is tiny.
pub fn one_minus_tanh_half(x: f64) -> f64 {
    if x >= 0.0 {
        let e = (-x).exp();
        2.0 * e / (1.0 + e)
    } else {
        2.0 / (1.0 + x.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn li(n: u32, x: f64) -> f64 {
        polylog_neg_exp(PolylogOrder::new(n).unwrap(), x).unwrap()
    }

    #[test]
    fn values_at_minus_one() {
        assert!((li(2, 0.0) + PI * PI / 12.0).abs() < 1e-14);
        assert!((li(4, 0.0) + 7.0 * PI.powi(4) / 720.0).abs() < 1e-14);
        // Li_3(-1) = -3/4 ζ(3)
        let zeta3 = 1.202_056_903_159_594_3;
        assert!((li(3, 0.0) + 0.75 * zeta3).abs() < 1e-14);
    }

    #[test]
    fn brute_force_series_at_five() {
        let z = -(-5.0f64).exp();
        let mut sum = 0.0;
        let mut zk = 1.0;
        for k in 1..=1_000_000u32 {
            zk *= z;
            if zk == 0.0 {
                break;
            }
            sum += zk / (k as f64).powi(3);
        }
        assert!((li(3, 5.0) - sum).abs() < 1e-13);
    }

    #[test]
    fn reference_values() {
        // mpmath: polylog(3, -exp(-5)), polylog(2, -exp(1.7)) etc.
        assert!((li(3, 5.0) - -0.006_732_283_305_485_88).abs() < 1e-15);
        let cases = [
            (2, -1.7, -2.914_978_827_086_434_5),
            (2, 0.3, -0.635_900_399_715_204_7),
            (3, -2.5, -6.797_764_392_735_056),
            (4, 1.2, -0.295_832_991_942_614_9),
        ];
        for (n, x, want) in cases {
            let got = li(n, x);
            assert!((got - want).abs() < 1e-12, "Li_{n}(-e^-{x}) = {got}, want {want}");
        }
    }

    #[test]
    fn both_branches_agree_at_switch_point() {
        let x = DIRECT_SERIES_MIN_X;
        let q = (-x).exp();
        for n in 2..=4 {
            let accelerated = -alternating_sum(|k| q.powi(k as i32 + 1) / ((k + 1) as f64).powi(n));
            assert!((accelerated - li(n as u32, x)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PolylogOrder::new(1).is_err());
        assert!(PolylogOrder::new(5).is_err());
        assert!(polylog_neg_exp(PolylogOrder::TWO, f64::NAN).is_err());
        assert!(polylog_neg_exp(PolylogOrder::TWO, f64::INFINITY).is_err());
    }

    #[test]
    fn decays_for_large_x() {
        for n in 2..=4 {
            assert!(li(n, 40.0).abs() < 1e-17);
            assert_eq!(li(n, 800.0), 0.0);
        }
    }

    #[test]
    fn eta_values() {
        assert!((dirichlet_eta(0) - 0.5).abs() < 1e-15);
        assert!((dirichlet_eta(1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((dirichlet_eta(2) - PI * PI / 12.0).abs() < 1e-15);
        assert!((dirichlet_eta(4) - 7.0 * PI.powi(4) / 720.0).abs() < 1e-15);
    }

    #[test]
    fn sech_and_log1p_exp() {
        assert_eq!(sech(0.0), 1.0);
        let big = sech(100.0);
        assert!(big > 0.0 && (big / (2.0 * (-100f64).exp()) - 1.0).abs() < 1e-14);
        assert_eq!(sech(-3.3), sech(3.3));
        assert_eq!(sech(1e4), 0.0);

        assert!((log1p_exp(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!(log1p_exp(700.0) >= 0.0 && log1p_exp(700.0) < 1e-300);
        assert!((log1p_exp(-700.0) - 700.0).abs() < 1e-12);
    }

    #[test]
    fn one_minus_tanh_matches_direct() {
        for &x in &[-8.0, -1.0, 0.0, 0.4, 3.0] {
            let direct = 1.0 - (x / 2.0f64).tanh();
            assert!((one_minus_tanh_half(x) - direct).abs() < 1e-15);
        }
        assert!(one_minus_tanh_half(60.0) > 0.0);
    }
}
