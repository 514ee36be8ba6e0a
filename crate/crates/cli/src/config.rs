//! Run configuration: a JSON document, then command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Where `transfer` takes its delay sweeps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepSource {
    Model,
    Sim,
    File,
}

/// Everything a run depends on. Frequencies are `x/2π` in MHz, times in ns.
/// Fields left at `None` take command-specific defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub modes: Vec<usize>,
    pub gamma_mhz: Option<f64>,
    pub kappa_a_mhz: f64,
    pub kappa_b_mhz: f64,
    pub delta_ab_mhz: f64,
    pub delta_a_mhz: Option<f64>,
    pub delta_b_mhz: Option<f64>,
    pub p_loss: f64,
    /// Link delay; computed from `length_m` and `v_fraction` when absent.
    pub tau_ns: Option<f64>,
    pub length_m: Option<f64>,
    pub v_fraction: Option<f64>,
    pub t1_us: Option<f64>,
    pub dt_ns: f64,
    pub taper_ns: f64,
    pub tail: f64,
    pub window_ns: Option<[f64; 2]>,
    pub substeps: usize,
    pub truncation_points: usize,
    pub tau_half_width_ns: f64,
    pub tau_points: usize,
    pub detuning_step_mhz: f64,
    pub detuning_points: usize,
    pub source: SweepSource,
    pub input: Option<PathBuf>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            modes: vec![0, 1, 2],
            gamma_mhz: None,
            kappa_a_mhz: 26.7,
            kappa_b_mhz: 30.7,
            delta_ab_mhz: 2.0,
            delta_a_mhz: None,
            delta_b_mhz: None,
            p_loss: 0.17,
            tau_ns: None,
            length_m: None,
            v_fraction: None,
            t1_us: None,
            dt_ns: 0.1,
            taper_ns: 3.0,
            tail: 0.005,
            window_ns: None,
            substeps: 1,
            truncation_points: 401,
            tau_half_width_ns: 40.0,
            tau_points: 41,
            detuning_step_mhz: 0.3,
            detuning_points: 21,
            source: SweepSource::Model,
            input: None,
            noise_sigma: 0.0,
            seed: 2024,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Flags mirroring [`RunConfig`]; any flag given wins over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mode orders, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub modes: Option<Vec<usize>>,
    /// Single mode order; shorthand for `--modes n`.
    #[arg(long, global = true, conflicts_with = "modes")]
    pub mode: Option<usize>,
    /// Mode bandwidth Γ/2π in MHz.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Emitter linewidth κ_A/2π in MHz.
    #[arg(long, global = true)]
    pub kappa_a: Option<f64>,
    /// Receiver linewidth κ_B/2π in MHz.
    #[arg(long, global = true)]
    pub kappa_b: Option<f64>,
    /// Receiver resonator detuning Δ_AB/2π in MHz.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta_ab: Option<f64>,
    /// Emission carrier detuning δ_A/2π in MHz.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta_a: Option<f64>,
    /// Absorption carrier detuning δ_B/2π in MHz.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta_b: Option<f64>,
    #[arg(long, global = true)]
    pub p_loss: Option<f64>,
    /// Link delay in ns.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Line length in m, used with --v-fraction when --tau is not given.
    #[arg(long, global = true)]
    pub length: Option<f64>,
    #[arg(long, global = true)]
    pub v_fraction: Option<f64>,
    /// Qubit e-f lifetime in µs.
    #[arg(long, global = true)]
    pub t1: Option<f64>,
    /// Sample period in ns.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Taper length in ns.
    #[arg(long, global = true)]
    pub taper: Option<f64>,
    /// Envelope mass left outside the automatic window.
    #[arg(long, global = true)]
    pub tail: Option<f64>,
    /// Explicit pulse window `start,end` in ns.
    #[arg(long, global = true, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    pub window: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub substeps: Option<usize>,
    #[arg(long, global = true)]
    pub truncation_points: Option<usize>,
    #[arg(long, global = true)]
    pub tau_half_width: Option<f64>,
    #[arg(long, global = true)]
    pub tau_points: Option<usize>,
    #[arg(long, global = true)]
    pub detuning_step: Option<f64>,
    #[arg(long, global = true)]
    pub detuning_points: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub source: Option<SweepSource>,
    /// Measured sweeps (`tau_ns,nA,nB,Pf`).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Gaussian noise added to model sweeps.
    #[arg(long, global = true)]
    pub noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $ov:ident, $($flag:ident => $field:ident),+ $(,)?) => {
        $(if let Some(v) = $ov.$flag.clone() { $cfg.$field = v; })+
    };
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn resolve(ov: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &ov.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        apply!(cfg, ov,
            modes => modes,
            kappa_a => kappa_a_mhz,
            kappa_b => kappa_b_mhz,
            delta_ab => delta_ab_mhz,
            p_loss => p_loss,
            dt => dt_ns,
            taper => taper_ns,
            tail => tail,
            substeps => substeps,
            truncation_points => truncation_points,
            tau_half_width => tau_half_width_ns,
            tau_points => tau_points,
            detuning_step => detuning_step_mhz,
            detuning_points => detuning_points,
            source => source,
            noise_sigma => noise_sigma,
            seed => seed,
            out => output_dir,
        );
        if let Some(n) = ov.mode {
            cfg.modes = vec![n];
        }
        let optional = [
            (ov.gamma, &mut cfg.gamma_mhz),
            (ov.delta_a, &mut cfg.delta_a_mhz),
            (ov.delta_b, &mut cfg.delta_b_mhz),
            (ov.tau, &mut cfg.tau_ns),
            (ov.length, &mut cfg.length_m),
            (ov.v_fraction, &mut cfg.v_fraction),
            (ov.t1, &mut cfg.t1_us),
        ];
        for (flag, field) in optional {
            if flag.is_some() {
                *field = flag;
            }
        }
        if let Some(w) = &ov.window {
            cfg.window_ns = Some([w[0], w[1]]);
        }
        if ov.input.is_some() {
            cfg.input = ov.input.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("kappa_a_mhz", self.kappa_a_mhz),
            ("kappa_b_mhz", self.kappa_b_mhz),
            ("dt_ns", self.dt_ns),
            ("detuning_step_mhz", self.detuning_step_mhz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(g) = self.gamma_mhz {
            if !(g > 0.0 && g.is_finite()) {
                return Err(CliError::config(format!("gamma_mhz must be positive, got {g}")));
            }
        }
        if !(0.0..1.0).contains(&self.p_loss) {
            return Err(CliError::config(format!("p_loss must lie in [0, 1), got {}", self.p_loss)));
        }
        if self.modes.is_empty() {
            return Err(CliError::config("at least one mode order is required"));
        }
        if !(self.taper_ns >= 0.0 && self.tail > 0.0 && self.tail < 1.0) {
            return Err(CliError::config("taper_ns must be >= 0 and tail in (0, 1)"));
        }
        if self.substeps == 0 || self.tau_points < 2 || self.truncation_points < 3 {
            return Err(CliError::config(
                "substeps must be >= 1, tau_points >= 2 and truncation_points >= 3",
            ));
        }
        if self.detuning_points < 3 || !(self.noise_sigma >= 0.0) {
            return Err(CliError::config("detuning_points must be >= 3 and noise_sigma >= 0"));
        }
        if let Some(t1) = self.t1_us {
            if !(t1 > 0.0) {
                return Err(CliError::config(format!("t1_us must be positive, got {t1}")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
