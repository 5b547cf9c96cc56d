use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::SiteModel;
use crate::rng::SimRng;

/// Photon counts from one detection window and their classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSample {
    pub counts: u64,
    pub classified_bright: bool,
}

/// Count rates and discrimination threshold for one site.
#[derive(Debug, Clone)]
pub struct DetectionModel {
    pub bright_rate: f64,
    pub dark_rate: f64,
    pub detect_time: f64,
    pub threshold: u32,
    bright: Option<Poisson<f64>>,
    dark: Option<Poisson<f64>>,
}

impl DetectionModel {
    pub fn new(site: &SiteModel, detect_time: f64, threshold: u32) -> Self {
        assert!(detect_time > 0.0, "detect_time must be positive");
        let dist = |mean: f64| (mean > 0.0).then(|| Poisson::new(mean).expect("finite positive mean"));
        Self {
            bright_rate: site.bright_rate_cps,
            dark_rate: site.dark_rate_cps,
            detect_time,
            threshold,
            bright: dist((site.bright_rate_cps + site.dark_rate_cps) * detect_time),
            dark: dist(site.dark_rate_cps * detect_time),
        }
    }

    pub fn mean_counts(&self, is_bright: bool) -> f64 {
        let rate = if is_bright {
            self.bright_rate + self.dark_rate
        } else {
            self.dark_rate
        };
        rate * self.detect_time
    }

    pub fn sample(&self, is_bright: bool, rng: &mut SimRng) -> DetectionSample {
        let dist = if is_bright { &self.bright } else { &self.dark };
        let counts = dist.as_ref().map_or(0, |d| d.sample(rng) as u64);
        DetectionSample {
            counts,
            classified_bright: counts >= self.threshold as u64,
        }
    }

    /// Probability that a bright ion reads dark.
    pub fn p_bright_as_dark(&self) -> f64 {
        misread_bright_as_dark(self.mean_counts(true), self.threshold)
    }

    /// Probability that a dark ion reads bright.
    pub fn p_dark_as_bright(&self) -> f64 {
        misread_dark_as_bright(self.mean_counts(false), self.threshold)
    }
}

/// Samples one detection window with the site's rates.
pub fn simulate_detection(
    is_bright: bool,
    site: &SiteModel,
    detect_time: f64,
    threshold: u32,
    rng: &mut SimRng,
) -> DetectionSample {
    DetectionModel::new(site, detect_time, threshold).sample(is_bright, rng)
}

/// `P(X <= k)` for `X ~ Poisson(mean)`.
pub fn poisson_cdf(k: u64, mean: f64) -> f64 {
    let mut term = (-mean).exp();
    let mut sum = term;
    for i in 1..=k {
        term *= mean / i as f64;
        sum += term;
    }
    sum.min(1.0)
}

pub fn misread_dark_as_bright(dark_mean: f64, threshold: u32) -> f64 {
    if threshold == 0 {
        return 1.0;
    }
    1.0 - poisson_cdf(threshold as u64 - 1, dark_mean)
}

pub fn misread_bright_as_dark(bright_mean: f64, threshold: u32) -> f64 {
    if threshold == 0 {
        return 0.0;
    }
    poisson_cdf(threshold as u64 - 1, bright_mean)
}

/// Flips a shelving outcome with the state-preparation error probability.
pub(crate) fn apply_prep_error(shelved: bool, error: f64, rng: &mut SimRng) -> bool {
    if error > 0.0 && rng.random::<f64>() < error {
        !shelved
    } else {
        shelved
    }
}
