//! Run configuration: species constants, per-site atomic response, servo
//! protocol and simulation parameters.
//!
//! A [`Config`] is plain data as read from TOML. [`validate_config`] checks
//! every invariant at once and seals it into a [`ValidatedConfig`], which is
//! immutable and cheap to share.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lo::NoiseSpec;
use crate::physics::{rabi_lineshape_fwhm_product, ATOMIC_MASS_UNIT, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesParams {
    pub mass_kg: f64,
    pub clock_wavelength_m: f64,
    /// Filled in from the wavelength during validation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_frequency_hz: Option<f64>,
    /// Axial secular frequency, Hz.
    pub secular_frequency_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteModel {
    /// 1-based; position 0 is the loading site.
    pub site_id: usize,
    pub contrast: f64,
    /// Carrier Rabi frequency of the flop characterization, rad/s.
    pub rabi_freq_rad_s: f64,
    pub nbar: f64,
    pub bias: f64,
    /// True clock shift of an ion at this site, Hz.
    #[serde(default)]
    pub site_offset_hz: f64,
    pub bright_rate_cps: f64,
    pub dark_rate_cps: f64,
    /// Scales the ion lifetime at this site.
    #[serde(default = "one")]
    pub lifetime_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoConfig {
    pub gain1: f64,
    pub gain2: f64,
    pub fwhm_hz: f64,
    pub probe_time_s: f64,
    /// Cooling, state preparation, probe and detection of one side.
    pub side_time_s: f64,
    pub detect_time_s: f64,
    /// Clock cycles per report.
    pub report_period: u32,
    /// Side-pairs in the presence rolling average.
    pub presence_window: usize,
    pub presence_threshold: f64,
    #[serde(default = "default_detection_threshold")]
    pub detection_threshold: u32,
    /// Probability that state preparation leaves the ion in the wrong state.
    #[serde(default)]
    pub state_prep_error: f64,
    #[serde(default = "default_pulse_area")]
    pub probe_pulse_area_rad: f64,
    /// Name of the side schedule, see [`crate::servo::schedule_registry`].
    #[serde(default = "default_side_order")]
    pub side_order: String,
    /// Fold a cooling-fluorescence read into the presence indicator.
    #[serde(default = "yes")]
    pub presence_uses_cooling: bool,
    /// Abort if no site is occupied for this long, s.
    #[serde(default = "default_interlock")]
    pub interlock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub duration_s: f64,
    /// Mean ion lifetime in a clock well, s.
    pub ion_lifetime_s: f64,
    pub dark_event_rate_hz: f64,
    pub dark_recovery_rate_hz: f64,
    pub load_latency_mean_s: f64,
    pub shuttle_step_time_s: f64,
    #[serde(default)]
    pub lo_noise: NoiseSpec,
    pub n_sites: usize,
    #[serde(default = "yes")]
    pub loss_enabled: bool,
    #[serde(default = "yes")]
    pub loader_enabled: bool,
    /// Lifetime of the buffer ion relative to `ion_lifetime_s`; the buffer
    /// is only cooled, never probed.
    #[serde(default = "one")]
    pub buffer_lifetime_multiplier: f64,
    /// Clock sites holding an ion at t = 0; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_sites: Option<Vec<usize>>,
    #[serde(default = "yes")]
    pub initial_buffer: bool,
}

/// Whole configuration as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub species: SpeciesParams,
    pub servo: ServoConfig,
    pub simulation: SimulationConfig,
    pub sites: Vec<SiteModel>,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_detection_threshold() -> u32 {
    2
}
fn default_pulse_area() -> f64 {
    PI
}
fn default_side_order() -> String {
    "r1l1r2l2".to_owned()
}
fn default_interlock() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct InvariantViolation {
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{}", ViolationList(.0))]
    Invalid(Vec<InvariantViolation>),
}

struct ViolationList<'a>(&'a [InvariantViolation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invariant violation(s)", self.0.len())?;
        for v in self.0 {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

/// A configuration that passed every invariant. Only constructed by
/// [`validate_config`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedConfig {
    inner: Config,
}

impl ValidatedConfig {
    pub fn config(&self) -> &Config {
        &self.inner
    }

    pub fn into_config(self) -> Config {
        self.inner
    }

    pub fn species(&self) -> &SpeciesParams {
        &self.inner.species
    }

    pub fn servo(&self) -> &ServoConfig {
        &self.inner.servo
    }

    pub fn simulation(&self) -> &SimulationConfig {
        &self.inner.simulation
    }

    pub fn sites(&self) -> &[SiteModel] {
        &self.inner.sites
    }

    /// Clock frequency, Hz.
    pub fn nu(&self) -> f64 {
        self.inner
            .species
            .clock_frequency_hz
            .expect("validated species carries a clock frequency")
    }

    /// Four side interrogations.
    pub fn cycle_time(&self) -> f64 {
        4.0 * self.inner.servo.side_time_s
    }

    pub fn report_time(&self) -> f64 {
        self.cycle_time() * self.inner.servo.report_period as f64
    }

    /// Returns a re-validated copy after `edit` has modified the plain config.
    pub fn modified(&self, edit: impl FnOnce(&mut Config)) -> Result<Self, ConfigError> {
        let mut c = self.inner.clone();
        edit(&mut c);
        validate_config(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.inner).expect("config serializes to toml")
    }
}

/// Checks every invariant and fills derived fields. Validating the config of
/// an already validated value returns an equal value.
pub fn validate_config(mut config: Config) -> Result<ValidatedConfig, ConfigError> {
    let mut errs = Vec::new();
    let mut bad = |field: &str, reason: String| {
        errs.push(InvariantViolation {
            field: field.to_owned(),
            reason,
        })
    };

    let sp = &mut config.species;
    if !(sp.mass_kg > 0.0) {
        bad("species.mass_kg", format!("must be > 0, got {}", sp.mass_kg));
    }
    if !(sp.clock_wavelength_m > 0.0) {
        bad(
            "species.clock_wavelength_m",
            format!("must be > 0, got {}", sp.clock_wavelength_m),
        );
    }
    if !(sp.secular_frequency_hz > 0.0) {
        bad(
            "species.secular_frequency_hz",
            format!("must be > 0, got {}", sp.secular_frequency_hz),
        );
    }
    if sp.clock_wavelength_m > 0.0 {
        let nu = SPEED_OF_LIGHT / sp.clock_wavelength_m;
        match sp.clock_frequency_hz {
            None => sp.clock_frequency_hz = Some(nu),
            Some(f) if !((f - nu).abs() <= 0.01 * nu) => bad(
                "species.clock_frequency_hz",
                format!("{f} Hz differs from c/lambda = {nu} Hz by more than 1%"),
            ),
            Some(_) => {}
        }
    }

    let sv = &config.servo;
    if !(sv.gain1 > 0.0 && sv.gain1 < 1.0) {
        bad("servo.gain1", format!("must lie in (0, 1), got {}", sv.gain1));
    }
    if !(sv.gain2 > 0.0 && sv.gain2 < sv.gain1) {
        bad(
            "servo.gain2",
            format!("must lie in (0, gain1), got {}", sv.gain2),
        );
    }
    if !(sv.fwhm_hz > 0.0) {
        bad("servo.fwhm_hz", format!("must be > 0, got {}", sv.fwhm_hz));
    }
    if !(sv.probe_time_s > 0.0) {
        bad(
            "servo.probe_time_s",
            format!("must be > 0, got {}", sv.probe_time_s),
        );
    }
    if !(sv.detect_time_s > 0.0) {
        bad(
            "servo.detect_time_s",
            format!("must be > 0, got {}", sv.detect_time_s),
        );
    }
    if !(sv.side_time_s >= sv.probe_time_s + sv.detect_time_s) {
        bad(
            "servo.side_time_s",
            format!(
                "must be >= probe_time + detect_time = {}, got {}",
                sv.probe_time_s + sv.detect_time_s,
                sv.side_time_s
            ),
        );
    }
    if sv.report_period < 1 {
        bad("servo.report_period", "must be >= 1".to_owned());
    }
    if sv.presence_window < 1 {
        bad("servo.presence_window", "must be >= 1".to_owned());
    }
    if !(sv.presence_threshold > 0.0 && sv.presence_threshold < 1.0) {
        bad(
            "servo.presence_threshold",
            format!("must lie in (0, 1), got {}", sv.presence_threshold),
        );
    }
    if sv.detection_threshold < 1 {
        bad("servo.detection_threshold", "must be >= 1".to_owned());
    }
    if !(0.0..0.5).contains(&sv.state_prep_error) {
        bad(
            "servo.state_prep_error",
            format!("must lie in [0, 0.5), got {}", sv.state_prep_error),
        );
    }
    if !(sv.probe_pulse_area_rad > 0.0) {
        bad(
            "servo.probe_pulse_area_rad",
            format!("must be > 0, got {}", sv.probe_pulse_area_rad),
        );
    }
    if crate::servo::schedule_registry().get(&sv.side_order).is_none() {
        bad(
            "servo.side_order",
            format!(
                "unknown schedule {:?}; available: {}",
                sv.side_order,
                crate::servo::schedule_registry().names().join(", ")
            ),
        );
    }
    if !(sv.interlock_s > 0.0) {
        bad(
            "servo.interlock_s",
            format!("must be > 0, got {}", sv.interlock_s),
        );
    }

    let sim = &config.simulation;
    for (name, v) in [
        ("simulation.duration_s", sim.duration_s),
        ("simulation.dark_event_rate_hz", sim.dark_event_rate_hz),
        ("simulation.dark_recovery_rate_hz", sim.dark_recovery_rate_hz),
        ("simulation.load_latency_mean_s", sim.load_latency_mean_s),
        ("simulation.shuttle_step_time_s", sim.shuttle_step_time_s),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            bad(name, format!("must be finite and >= 0, got {v}"));
        }
    }
    if !(sim.ion_lifetime_s > 0.0) {
        bad(
            "simulation.ion_lifetime_s",
            format!("must be > 0, got {}", sim.ion_lifetime_s),
        );
    }
    if !(sim.buffer_lifetime_multiplier > 0.0) {
        bad(
            "simulation.buffer_lifetime_multiplier",
            format!("must be > 0, got {}", sim.buffer_lifetime_multiplier),
        );
    }
    let n = &sim.lo_noise;
    if !(n.white_fm >= 0.0) {
        bad("simulation.lo_noise.white_fm", "must be >= 0".to_owned());
    }
    if !(n.random_walk_fm >= 0.0) {
        bad("simulation.lo_noise.random_walk_fm", "must be >= 0".to_owned());
    }
    if sim.n_sites < 1 {
        bad("simulation.n_sites", "must be >= 1".to_owned());
    }
    if let Some(init) = &sim.initial_sites {
        let mut seen = vec![false; sim.n_sites + 1];
        for &k in init {
            if k == 0 || k > sim.n_sites {
                bad(
                    "simulation.initial_sites",
                    format!("site {k} outside 1..={}", sim.n_sites),
                );
            } else if std::mem::replace(&mut seen[k], true) {
                bad("simulation.initial_sites", format!("site {k} listed twice"));
            }
        }
    }
    if config.sites.len() != sim.n_sites {
        bad(
            "sites",
            format!(
                "{} entries for n_sites = {}",
                config.sites.len(),
                sim.n_sites
            ),
        );
    }

    for (i, s) in config.sites.iter().enumerate() {
        let f = |name: &str| format!("sites[{i}].{name}");
        if s.site_id != i + 1 {
            bad(
                &f("site_id"),
                format!("expected {} (sites are listed in order), got {}", i + 1, s.site_id),
            );
        }
        if !(s.contrast > 0.0 && s.contrast <= 1.0) {
            bad(&f("contrast"), format!("must lie in (0, 1], got {}", s.contrast));
        }
        if !(s.bias >= 0.0 && s.bias < 1.0) {
            bad(&f("bias"), format!("must lie in [0, 1), got {}", s.bias));
        }
        if !(s.bias + s.contrast <= 1.0 + 1e-12) {
            bad(
                &f("bias"),
                format!("bias + contrast = {} exceeds 1", s.bias + s.contrast),
            );
        }
        if !(s.rabi_freq_rad_s > 0.0) {
            bad(&f("rabi_freq_rad_s"), "must be > 0".to_owned());
        }
        if !(s.nbar >= 0.0) {
            bad(&f("nbar"), format!("must be >= 0, got {}", s.nbar));
        }
        if !(s.dark_rate_cps >= 0.0) {
            bad(&f("dark_rate_cps"), "must be >= 0".to_owned());
        }
        if !(s.bright_rate_cps > s.dark_rate_cps) {
            bad(
                &f("bright_rate_cps"),
                format!(
                    "must exceed dark_rate_cps ({} <= {})",
                    s.bright_rate_cps, s.dark_rate_cps
                ),
            );
        }
        if !(s.lifetime_multiplier > 0.0) {
            bad(&f("lifetime_multiplier"), "must be > 0".to_owned());
        }
    }

    if errs.is_empty() {
        Ok(ValidatedConfig { inner: config })
    } else {
        Err(ConfigError::Invalid(errs))
    }
}

pub fn parse_config(text: &str) -> Result<ValidatedConfig, ConfigError> {
    validate_config(toml::from_str(text)?)
}

pub fn load_config(path: &Path) -> Result<ValidatedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Projection-noise level the preset is calibrated against, at 1 s.
pub const PRESET_QPN_AT_1S: f64 = 2.30e-14;
/// Contrast used in the projection-noise calibration.
pub const PRESET_QPN_CONTRAST: f64 = 0.8;
/// Frequency step of one first-order integrator count, Hz.
pub const PRESET_SERVO_ERROR_HZ: f64 = 1.75;

/// The four-site Yb+ configuration.
///
/// Probe time and linewidth are not quoted directly, so they are derived:
///
/// * one side interrogation takes 5.875 ms, so a cycle of four sides is
///   `T_cycle = 23.5 ms` and 20 cycles report every 0.47 s;
/// * inverting `sigma = sqrt(T_cycle / (N tau)) / (2 pi nu C T_probe)` at
///   `sigma(1 s) = 2.30e-14`, `N = 4`, `C = 0.8` gives `T_probe ~ 0.963 ms`;
/// * a pi pulse of that length has `FWHM = 0.7987 / T_probe ~ 829 Hz`;
/// * `gain1` is set so that one integrator count moves the LO by 1.75 Hz.
///
/// Probe Rabi frequencies keep the measured site-to-site ratios but are
/// scaled so the mean site sees a pi pulse. The load latency is tuned so
/// that all four sites are filled about 45% of the time.
pub fn default_preset() -> ValidatedConfig {
    let species = SpeciesParams {
        mass_kg: 170.936_331_5 * ATOMIC_MASS_UNIT,
        clock_wavelength_m: 435.5e-9,
        clock_frequency_hz: None,
        secular_frequency_hz: 1.02e6,
    };
    let nu = SPEED_OF_LIGHT / species.clock_wavelength_m;
    let n_sites = 4usize;
    let side_time = 5.875e-3;
    let t_cycle = 4.0 * side_time;
    let probe_time = (t_cycle / n_sites as f64).sqrt()
        / (TAU * nu * PRESET_QPN_CONTRAST * PRESET_QPN_AT_1S);
    let fwhm = rabi_lineshape_fwhm_product() / probe_time;

    // (contrast, Rabi frequency in Hz, nbar, bias) per site.
    let table = [
        (0.80, 5002.0, 28.0, 0.09),
        (0.78, 4920.0, 25.0, 0.09),
        (0.85, 5005.0, 37.0, 0.10),
        (0.86, 4689.0, 31.0, 0.08),
    ];
    let sites = table
        .iter()
        .enumerate()
        .map(|(i, &(a, f, nbar, c))| SiteModel {
            site_id: i + 1,
            contrast: a,
            rabi_freq_rad_s: TAU * f,
            nbar,
            bias: c,
            site_offset_hz: 0.0,
            bright_rate_cps: 2500.0,
            dark_rate_cps: 100.0,
            lifetime_multiplier: 1.0,
        })
        .collect();

    let config = Config {
        species,
        servo: ServoConfig {
            gain1: PRESET_SERVO_ERROR_HZ / fwhm,
            gain2: 1e-6,
            fwhm_hz: fwhm,
            probe_time_s: probe_time,
            side_time_s: side_time,
            detect_time_s: 3e-3,
            report_period: 20,
            presence_window: 8,
            presence_threshold: 0.25,
            detection_threshold: 2,
            state_prep_error: 0.0,
            probe_pulse_area_rad: PI,
            side_order: default_side_order(),
            presence_uses_cooling: true,
            interlock_s: 120.0,
        },
        simulation: SimulationConfig {
            seed: 1,
            duration_s: 7200.0,
            ion_lifetime_s: 60.0,
            dark_event_rate_hz: 1.0 / 300.0,
            dark_recovery_rate_hz: 1.0 / 5.0,
            load_latency_mean_s: PRESET_LOAD_LATENCY_S,
            shuttle_step_time_s: 0.5,
            lo_noise: NoiseSpec::quiet(),
            n_sites,
            loss_enabled: true,
            loader_enabled: true,
            buffer_lifetime_multiplier: PRESET_BUFFER_LIFETIME_MULTIPLIER,
            initial_sites: None,
            initial_buffer: true,
        },
        sites,
    };
    validate_config(config).expect("preset is valid")
}

/// Buffer-well ion lifetime relative to a clock site.
pub const PRESET_BUFFER_LIFETIME_MULTIPLIER: f64 = 1.0;
/// Mean loading time. Four ions lost at about one per 50 s each (loss plus
/// unrecovered dark events) must be resupplied one at a time, so this sets
/// how often all sites are filled; 13 s gives about 45%.
pub const PRESET_LOAD_LATENCY_S: f64 = 13.0;
