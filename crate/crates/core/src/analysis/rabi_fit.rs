use std::f64::consts::TAU;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::physics::closed_form_onres;
use crate::rng::SimRng;

use super::lm::{levenberg_marquardt, LmOptions};

/// One point of a Rabi flop: pulse length, shelved fraction, shots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiPoint {
    pub t_s: f64,
    pub p_hat: f64,
    pub n_trials: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiFitResult {
    pub contrast: f64,
    pub contrast_err: f64,
    /// rad/s.
    pub rabi_freq: f64,
    pub rabi_freq_err: f64,
    pub nbar: f64,
    pub nbar_err: f64,
    pub bias: f64,
    pub bias_err: f64,
    pub chi2_dof: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("fit pinned {param} at its bound {value}")]
    BoundsHit { param: &'static str, value: f64 },
}

const NAMES: [&str; 4] = ["contrast", "rabi_freq", "nbar", "bias"];
const NBAR_MAX: f64 = 1000.0;
const MIN_POINTS: usize = 20;

fn model(p: &[f64], t: f64, eta: f64) -> f64 {
    closed_form_onres(t, p[0], p[1], p[2], p[3], eta)
}

/// Dominant angular frequencies of the data's discrete spectrum, strongest
/// first.
fn spectral_peaks(data: &[RabiPoint], count: usize) -> Vec<f64> {
    let mean = data.iter().map(|d| d.p_hat).sum::<f64>() / data.len() as f64;
    let t0 = data.iter().map(|d| d.t_s).fold(f64::INFINITY, f64::min);
    let t1 = data.iter().map(|d| d.t_s).fold(f64::NEG_INFINITY, f64::max);
    let span = t1 - t0;
    if span <= 0.0 {
        return Vec::new();
    }
    let f_max = 0.5 * data.len() as f64 / span;
    let f_min = 0.5 / span;
    let n_grid = 4000;
    let power: Vec<(f64, f64)> = (0..n_grid)
        .map(|k| {
            let f = f_min + (f_max - f_min) * k as f64 / (n_grid - 1) as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for d in data {
                let ph = TAU * f * d.t_s;
                re += (d.p_hat - mean) * ph.cos();
                im += (d.p_hat - mean) * ph.sin();
            }
            (f, re * re + im * im)
        })
        .collect();
    let mut peaks: Vec<(f64, f64)> = power
        .windows(3)
        .filter(|w| w[1].1 > w[0].1 && w[1].1 >= w[2].1)
        .map(|w| w[1])
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks.into_iter().take(count).map(|(f, _)| TAU * f).collect()
}

/// Weighted fit of the thermal Rabi-flop model with `eta` held fixed.
///
/// Residuals are weighted by the binomial variance `p(1-p)/n`, with `p`
/// kept at least `1/(2n)` away from 0 and 1. Starting points come from the
/// strongest peaks of the data's discrete spectrum; the best of several
/// local fits is returned. Uncertainties are the square roots of the
/// diagonal of `(J^T W J)^-1`.
pub fn fit_rabi(data: &[RabiPoint], eta: f64) -> Result<RabiFitResult, FitError> {
    if data.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints {
            need: MIN_POINTS,
            got: data.len(),
        });
    }
    let sigma: Vec<f64> = data
        .iter()
        .map(|d| {
            let n = d.n_trials.max(1) as f64;
            let floor = 0.5 / n;
            let p = d.p_hat.clamp(floor, 1.0 - floor);
            (p * (1.0 - p) / n).sqrt()
        })
        .collect();
    let residuals = |p: &[f64]| -> Vec<f64> {
        data.iter()
            .zip(&sigma)
            .map(|(d, s)| (model(p, d.t_s, eta) - d.p_hat) / s)
            .collect()
    };
    let lo = data.iter().map(|d| d.p_hat).fold(f64::INFINITY, f64::min);
    let hi = data.iter().map(|d| d.p_hat).fold(f64::NEG_INFINITY, f64::max);
    let peaks = spectral_peaks(data, 3);
    if peaks.is_empty() {
        return Err(FitError::FitFailure("no spread in pulse times".into()));
    }
    let lower = [0.0, 1e-6, 0.0, 0.0];
    let upper = [1.0, 1e12, NBAR_MAX, 1.0];
    let mut best: Option<super::lm::LmResult> = None;
    for &w in &peaks {
        for w0 in [w, w * 1.1] {
            for nbar0 in [5.0, 30.0] {
                let x0 = [(hi - lo).clamp(0.05, 1.0), w0, nbar0, lo.clamp(0.0, 1.0)];
                let res = levenberg_marquardt(&residuals, &x0, &lower, &upper, LmOptions::default());
                if best.as_ref().is_none_or(|b| res.cost < b.cost) {
                    best = Some(res);
                }
            }
        }
    }
    let res = best.expect("at least one start");
    if !res.converged {
        return Err(FitError::FitFailure(format!(
            "no convergence after {} iterations",
            res.iterations
        )));
    }
    let p = &res.params;
    for k in [0, 2, 3] {
        let at_lower = p[k] <= lower[k] + 1e-9;
        let at_upper = p[k] >= upper[k] - 1e-9;
        // nbar = 0 is a legitimate ground-state fit.
        if (at_lower && k != 2) || at_upper {
            return Err(FitError::BoundsHit {
                param: NAMES[k],
                value: p[k],
            });
        }
    }
    let cov = res
        .covariance
        .ok_or_else(|| FitError::FitFailure("singular curvature matrix".into()))?;
    let err: Vec<f64> = (0..4).map(|k| cov[k][k].max(0.0).sqrt()).collect();
    if !(p[0] > 3.0 * err[0]) {
        return Err(FitError::FitFailure(format!(
            "contrast {:.3} not resolved (sigma {:.3})",
            p[0], err[0]
        )));
    }
    Ok(RabiFitResult {
        contrast: p[0],
        contrast_err: err[0],
        rabi_freq: p[1],
        rabi_freq_err: err[1],
        nbar: p[2],
        nbar_err: err[2],
        bias: p[3],
        bias_err: err[3],
        chi2_dof: res.cost / (data.len() - 4) as f64,
        eta,
    })
}

#[allow(clippy::too_many_arguments)]
/// Simulated flop data: `n_trials` Bernoulli shots per pulse length; with
/// `rng = None` the exact probabilities are returned.
pub fn synthetic_flops(
    contrast: f64,
    rabi_freq: f64,
    nbar: f64,
    bias: f64,
    eta: f64,
    times: &[f64],
    n_trials: u32,
    mut rng: Option<&mut SimRng>,
) -> Vec<RabiPoint> {
    times
        .iter()
        .map(|&t| {
            let p = closed_form_onres(t, contrast, rabi_freq, nbar, bias, eta);
            let p_hat = match rng.as_deref_mut() {
                Some(r) => {
                    Binomial::new(n_trials as u64, p).expect("valid probability").sample(r) as f64
                        / n_trials as f64
                }
                None => p,
            };
            RabiPoint {
                t_s: t,
                p_hat,
                n_trials,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Substream};

    fn times() -> Vec<f64> {
        (0..40).map(|k| k as f64 * 25e-6).collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let rows = [
            (0.80, 5002.0, 28.0, 0.09),
            (0.78, 4920.0, 25.0, 0.09),
            (0.85, 5005.0, 37.0, 0.10),
            (0.86, 4689.0, 31.0, 0.08),
        ];
        for (a, f, nbar, c) in rows {
            let data = synthetic_flops(a, TAU * f, nbar, c, 0.0777, &times(), 200, None);
            let fit = fit_rabi(&data, 0.0777).unwrap();
            let rel = |got: f64, want: f64| ((got - want) / want).abs();
            assert!(rel(fit.contrast, a) < 1e-4, "{fit:?}");
            assert!(rel(fit.rabi_freq, TAU * f) < 1e-4, "{fit:?}");
            assert!(rel(fit.nbar, nbar) < 1e-4, "{fit:?}");
            assert!(rel(fit.bias, c) < 1e-4, "{fit:?}");
        }
    }

    #[test]
    fn flat_data_never_yields_an_oscillation() {
        let data: Vec<RabiPoint> = times()
            .into_iter()
            .map(|t| RabiPoint {
                t_s: t,
                p_hat: 0.09,
                n_trials: 200,
            })
            .collect();
        match fit_rabi(&data, 0.0777) {
            Err(FitError::BoundsHit { .. }) | Err(FitError::FitFailure(_)) => {}
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn sampled_data_within_uncertainty() {
        let mut rng = substream(4, Substream::Synthetic);
        let data = synthetic_flops(0.86, TAU * 4689.0, 31.0, 0.08, 0.0777, &times(), 200, Some(&mut rng));
        let fit = fit_rabi(&data, 0.0777).unwrap();
        assert!((fit.contrast - 0.86).abs() < 2.0 * 0.03);
        assert!((fit.rabi_freq / TAU - 4689.0).abs() < 2.0 * 46.0);
        assert!((fit.nbar - 31.0).abs() < 2.0 * 3.0);
        assert!((fit.bias - 0.08).abs() < 2.0 * 0.02);
        assert!(fit.chi2_dof < 3.0);
    }

    #[test]
    fn rejects_short_input() {
        let data = synthetic_flops(0.8, TAU * 5000.0, 28.0, 0.09, 0.0777, &times()[..10], 200, None);
        assert!(matches!(fit_rabi(&data, 0.0777), Err(FitError::TooFewPoints { .. })));
    }
}
