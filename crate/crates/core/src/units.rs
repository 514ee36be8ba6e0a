//! Conversions between the internal SI representation and the I/O units.

use std::f64::consts::TAU;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// `ω/2π` in MHz to angular frequency in rad/s.
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    f_mhz * 1e6 * TAU
}

/// Angular frequency in rad/s to `ω/2π` in MHz.
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (1e6 * TAU)
}

pub fn ns_to_s(t_ns: f64) -> f64 {
    t_ns * 1e-9
}

pub fn s_to_ns(t: f64) -> f64 {
    t * 1e9
}

pub fn us_to_s(t_us: f64) -> f64 {
    t_us * 1e-6
}
