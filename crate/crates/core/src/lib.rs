//! Orthogonal temporal modes of single microwave photons.
//!
//! The crate covers the full chain of a two-node photon link:
//!
//! * [`specfun`]: sech, `ln(1 + e^-x)` and the polylogarithms `Li_n(-e^-x)`
//!   for `n = 2, 3, 4` that appear in the closed-form cumulative
//!   probabilities and coupling rates.
//! * [`modes`]: the sech-weighted orthonormal mode family `f_n(t)`, its
//!   derivatives, cumulative probabilities, overlaps and a Gram-Schmidt
//!   constructor for arbitrary order.
//! * [`pulses`]: synthesis of the f0-g1 coupling rate `g(t)` that emits or
//!   absorbs a given mode, with windowing, linear tapers and carrier detuning.
//! * [`dynamics`]: single-excitation simulation of emitter, lossy delayed
//!   channel and receiver.
//! * [`transfer`]: the delay-overlap absorption model, delay sweeps, the
//!   transfer matrix with its selectivity ratio, the two-parameter global fit
//!   and the detuning calibration sweep.
//!
//! Time is in seconds and rates are angular frequencies (rad/s) throughout
//! the library. File formats use ns and MHz (`ω/2π`); see [`units`].

pub mod dynamics;
pub mod error;
pub mod lm;
pub mod modes;
pub mod pulses;
pub mod quad;
pub mod specfun;
pub mod transfer;
pub mod units;

pub use dynamics::{LinkParams, NodeParams, Trajectory};
pub use error::{Error, Result};
pub use modes::{ModeFamily, TemporalMode};
pub use pulses::{CouplingWaveform, Direction, PulseSettings, PulseSpec, Window};
pub use transfer::{DelaySweep, FitResult, Selectivity, TransferMatrix};

pub use num_complex::Complex64;
