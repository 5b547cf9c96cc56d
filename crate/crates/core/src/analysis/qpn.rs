use std::f64::consts::TAU;

use crate::config::ValidatedConfig;
use crate::servo::ProbeModel;

/// Projection-noise limited fractional instability of one integrator,
/// `sqrt(T_cycle / (N tau)) / (2 pi nu C T_probe)`.
pub fn qpn(nu: f64, contrast: f64, t_probe: f64, t_cycle: f64, n_ions: usize, tau: f64) -> f64 {
    (t_cycle / (n_ions as f64 * tau)).sqrt() / (TAU * nu * contrast * t_probe)
}

/// Contrast that an ideal two-level atom would need to give the same
/// discriminator slope as the configured sites, averaged over sites.
///
/// The Rabi lineshape of a pi pulse has slope `1.8971 T` (per Hz, in units of
/// the contrast) at half maximum; dividing each site's simulated slope of
/// the read-bright probability by that gives its effective contrast.
pub fn effective_contrast(config: &ValidatedConfig, probe: &ProbeModel) -> f64 {
    let servo = config.servo();
    let half = 0.5 * servo.fwhm_hz;
    let h = 0.5;
    let ideal_slope = ideal_half_max_slope() * servo.probe_time_s;
    let n = config.sites().len();
    (0..n)
        .map(|s| {
            let p = |d: f64| probe.bright_probability(s, d, servo.state_prep_error);
            let slope = (p(half + h) - p(half - h)) / (2.0 * h);
            slope / ideal_slope
        })
        .sum::<f64>()
        / n as f64
}

/// `|dp/du|` of `sin^2(pi/2 sqrt(1+4u^2)) / (1+4u^2)` at its half maximum.
fn ideal_half_max_slope() -> f64 {
    let u = 0.5 * crate::physics::rabi_lineshape_fwhm_product();
    let p = |u: f64| {
        let x2 = 4.0 * u * u;
        let s = (0.5 * std::f64::consts::PI * (1.0 + x2).sqrt()).sin();
        s * s / (1.0 + x2)
    };
    let h = 1e-6;
    (p(u - h) - p(u + h)) / (2.0 * h)
}
