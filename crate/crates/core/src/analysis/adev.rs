use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::registry::{Named, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdevPoint {
    pub tau: f64,
    pub sigma: f64,
    pub sigma_err: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdevCurve {
    pub points: Vec<AdevPoint>,
    /// Requested taus with too little data.
    pub dropped: Vec<f64>,
}

impl AdevCurve {
    pub fn scaled(mut self, k: f64) -> Self {
        for p in &mut self.points {
            p.sigma *= k;
            p.sigma_err *= k;
        }
        self
    }
}

/// One Allan-variance estimator.
pub trait AdevEstimator: Named + Send + Sync {
    /// Deviation at averaging factor `m`, number of terms, and equivalent
    /// degrees of freedom for white FM; `None` when `y` is too short.
    fn estimate(&self, y: &[f64], m: usize) -> Option<(f64, usize, f64)>;
}

/// Prefix sums of `y - y[0]`. The offset cancels in every Allan term, and
/// removing it keeps the sums small, so a constant input gives exactly zero.
fn prefix_sums(y: &[f64]) -> Vec<f64> {
    let y0 = y.first().copied().unwrap_or(0.0);
    let mut s = Vec::with_capacity(y.len() + 1);
    s.push(0.0);
    let mut acc = 0.0;
    for &v in y {
        acc += v - y0;
        s.push(acc);
    }
    s
}

struct Overlapping;

impl Named for Overlapping {
    fn name(&self) -> &'static str {
        "overlapping"
    }
}

impl AdevEstimator for Overlapping {
    fn estimate(&self, y: &[f64], m: usize) -> Option<(f64, usize, f64)> {
        let n = y.len();
        if m == 0 || n < 2 * m {
            return None;
        }
        let s = prefix_sums(y);
        let terms = n - 2 * m + 1;
        let mut acc = 0.0;
        for j in 0..terms {
            let d = (s[j + 2 * m] - 2.0 * s[j + m] + s[j]) / m as f64;
            acc += d * d;
        }
        let var = acc / (2.0 * terms as f64);
        let (nf, mf) = (n as f64, m as f64);
        // White-FM degrees of freedom for the overlapping estimator.
        let edf = (3.0 * (nf - 1.0) / (2.0 * mf) - 2.0 * (nf - 2.0) / nf) * 4.0 * mf * mf
            / (4.0 * mf * mf + 5.0);
        Some((var.sqrt(), terms, edf.max(1.0)))
    }
}

struct NonOverlapping;

impl Named for NonOverlapping {
    fn name(&self) -> &'static str {
        "non-overlapping"
    }
}

impl AdevEstimator for NonOverlapping {
    fn estimate(&self, y: &[f64], m: usize) -> Option<(f64, usize, f64)> {
        if m == 0 {
            return None;
        }
        let blocks: Vec<f64> = y.chunks_exact(m).map(|c| c.iter().sum::<f64>() / m as f64).collect();
        if blocks.len() < 2 {
            return None;
        }
        let terms = blocks.len() - 1;
        let acc: f64 = blocks.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        Some(((acc / (2.0 * terms as f64)).sqrt(), terms, terms as f64))
    }
}

pub fn adev_registry() -> &'static Registry<dyn AdevEstimator> {
    static REG: OnceLock<Registry<dyn AdevEstimator>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn AdevEstimator> = Registry::new();
        r.register(Arc::new(Overlapping));
        r.register(Arc::new(NonOverlapping));
        r
    })
}

/// Allan deviation of fractional-frequency samples `y` spaced by
/// `sample_period`, at each tau (rounded to a whole number of samples).
pub fn adev(estimator: &dyn AdevEstimator, y: &[f64], sample_period: f64, taus: &[f64]) -> AdevCurve {
    let mut curve = AdevCurve::default();
    let mut last_m = 0;
    for &tau in taus {
        let m = (tau / sample_period).round() as usize;
        if m == 0 || m == last_m {
            continue;
        }
        match estimator.estimate(y, m) {
            Some((sigma, n_pairs, edf)) => {
                last_m = m;
                curve.points.push(AdevPoint {
                    tau: m as f64 * sample_period,
                    sigma,
                    sigma_err: sigma / (2.0 * edf).sqrt(),
                    n_pairs,
                });
            }
            None => curve.dropped.push(tau),
        }
    }
    curve
}

pub fn overlapping_adev(y: &[f64], sample_period: f64, taus: &[f64]) -> AdevCurve {
    adev(&Overlapping, y, sample_period, taus)
}

/// `per_decade` log-spaced taus from `tau_min` to `tau_max` inclusive.
pub fn log_spaced_taus(tau_min: f64, tau_max: f64, per_decade: usize) -> Vec<f64> {
    let decades = (tau_max / tau_min).log10();
    let steps = (decades * per_decade as f64).round() as usize;
    (0..=steps)
        .map(|k| tau_min * 10f64.powf(k as f64 / per_decade as f64))
        .collect()
}

/// `sigma(tau) = a / sqrt(tau)` fitted in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteFmFit {
    pub a: f64,
    pub points_used: usize,
}

/// Fits `a` over points inside `[tau_min, tau_max]` with at least
/// `min_pairs` terms and non-zero sigma.
pub fn fit_white_fm(curve: &AdevCurve, tau_min: f64, tau_max: f64, min_pairs: usize) -> Option<WhiteFmFit> {
    let logs: Vec<f64> = curve
        .points
        .iter()
        .filter(|p| p.tau >= tau_min && p.tau <= tau_max && p.n_pairs >= min_pairs && p.sigma > 0.0)
        .map(|p| p.sigma.ln() + 0.5 * p.tau.ln())
        .collect();
    if logs.is_empty() {
        return None;
    }
    Some(WhiteFmFit {
        a: (logs.iter().sum::<f64>() / logs.len() as f64).exp(),
        points_used: logs.len(),
    })
}
