use std::f64::consts::PI;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{levenberg_marquardt, LmOptions};
use crate::config::ValidatedConfig;
use crate::physics::{
    lamb_dicke, rabi_lineshape_fwhm_product, shelving_probability, ProbeContext, ThermalState,
};
use crate::rng::{substream, SimRng, Substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrescanResult {
    pub fwhm_hz: f64,
    pub center_hz: f64,
    /// Fitted peak height above the baseline.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrescanError {
    #[error("peak height {amplitude:.4} below five times the shot noise {noise:.4}")]
    FitFailure { amplitude: f64, noise: f64 },
}

fn rabi_peak(u: f64) -> f64 {
    let x2 = 4.0 * u * u;
    let s = (0.5 * PI * (1.0 + x2).sqrt()).sin();
    s * s / (1.0 + x2)
}

/// Scans the probe over `+-3 / probe_time` in `points` steps with `shots`
/// projective measurements each, then fits a pi-pulse Rabi lineshape
/// `b + a R((delta - delta0) T_eff)` and reports its full width.
#[allow(clippy::too_many_arguments)]
pub fn prescan_fwhm(
    thermal: &ThermalState,
    contrast: f64,
    bias: f64,
    probe_time: f64,
    rabi_freq: f64,
    points: usize,
    shots: u32,
    rng: &mut SimRng,
) -> Result<PrescanResult, PrescanError> {
    let span = 3.0 / probe_time;
    let scan: Vec<(f64, f64)> = (0..points)
        .map(|k| {
            let d = -span + 2.0 * span * k as f64 / (points - 1) as f64;
            let ctx = ProbeContext {
                detuning: d,
                duration: probe_time,
                rabi_freq,
            };
            let p = shelving_probability(&ctx, thermal, contrast, bias);
            let hits = Binomial::new(shots as u64, p).expect("valid probability").sample(rng);
            (d, hits as f64 / shots as f64)
        })
        .collect();
    let n = shots as f64;
    let sigma: Vec<f64> = scan
        .iter()
        .map(|&(_, p)| {
            let p = p.clamp(0.5 / n, 1.0 - 0.5 / n);
            (p * (1.0 - p) / n).sqrt()
        })
        .collect();
    let residuals = |x: &[f64]| -> Vec<f64> {
        scan.iter()
            .zip(&sigma)
            .map(|(&(d, p), s)| (x[1] + x[0] * rabi_peak((d - x[2]) * x[3]) - p) / s)
            .collect()
    };
    let lo = scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let (peak_d, hi) = scan
        .iter()
        .copied()
        .fold((0.0, f64::NEG_INFINITY), |acc, s| if s.1 > acc.1 { s } else { acc });
    let x0 = [hi - lo, lo, peak_d, probe_time];
    let res = levenberg_marquardt(
        &residuals,
        &x0,
        &[0.0, 0.0, -span, 0.05 * probe_time],
        &[1.0, 1.0, span, 20.0 * probe_time],
        LmOptions::default(),
    );
    let amplitude = res.params[0];
    let noise = (0.25 / n).sqrt();
    if amplitude < 5.0 * noise {
        return Err(PrescanError::FitFailure { amplitude, noise });
    }
    Ok(PrescanResult {
        fwhm_hz: rabi_lineshape_fwhm_product() / res.params[3],
        center_hz: res.params[2],
        amplitude,
    })
}

/// Prescan of one configured site (0-based) with its probe Rabi frequency.
pub fn prescan_site(config: &ValidatedConfig, site: usize) -> Result<PrescanResult, PrescanError> {
    let probe = super::ProbeModel::new(config);
    let s = &config.sites()[site];
    let thermal = ThermalState::new(s.nbar, lamb_dicke(config.species()));
    let mut rng = substream(config.simulation().seed, Substream::Prescan);
    prescan_fwhm(
        &thermal,
        s.contrast,
        s.bias,
        config.servo().probe_time_s,
        probe.probe_rabi[site],
        121,
        400,
        &mut rng,
    )
}
