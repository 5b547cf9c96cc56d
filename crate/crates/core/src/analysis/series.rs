use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::servo::FrequencySample;

use super::adev::{adev, AdevCurve, AdevEstimator};

/// The two servo frequency traces on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySeries {
    pub sample_period: f64,
    pub df1: Vec<f64>,
    pub df2: Vec<f64>,
    /// Clock frequency used to convert Hz to fractional units.
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("traces differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two samples")]
    TooShort,
    #[error("samples are not evenly spaced near index {0}")]
    Uneven(usize),
    #[error("sample period must be positive")]
    BadPeriod,
}

impl FrequencySeries {
    pub fn new(sample_period: f64, df1: Vec<f64>, df2: Vec<f64>, nu: f64) -> Result<Self, SeriesError> {
        if df1.len() != df2.len() {
            return Err(SeriesError::LengthMismatch(df1.len(), df2.len()));
        }
        if !(sample_period > 0.0) {
            return Err(SeriesError::BadPeriod);
        }
        Ok(Self {
            sample_period,
            df1,
            df2,
            nu,
        })
    }

    /// Builds a series from per-cycle samples, checking the spacing.
    pub fn from_samples(samples: &[FrequencySample], nu: f64) -> Result<Self, SeriesError> {
        if samples.len() < 2 {
            return Err(SeriesError::TooShort);
        }
        let dt = (samples[samples.len() - 1].t_s - samples[0].t_s) / (samples.len() - 1) as f64;
        for (i, w) in samples.windows(2).enumerate() {
            if ((w[1].t_s - w[0].t_s) - dt).abs() > 1e-6 * dt.max(1e-9) + 1e-9 {
                return Err(SeriesError::Uneven(i));
            }
        }
        Self::new(
            dt,
            samples.iter().map(|s| s.df1_hz).collect(),
            samples.iter().map(|s| s.df2_hz).collect(),
            nu,
        )
    }

    pub fn len(&self) -> usize {
        self.df1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.df1.is_empty()
    }

    /// `(df1 - df2) / nu`.
    pub fn fractional_difference(&self) -> Vec<f64> {
        self.df1
            .iter()
            .zip(&self.df2)
            .map(|(a, b)| (a - b) / self.nu)
            .collect()
    }
}

/// Allan deviation of one integrator, inferred from the interleaved
/// difference: the two integrators are independent and equally noisy, so
/// the difference carries twice the variance of either.
pub fn single_integrator_instability(
    series: &FrequencySeries,
    taus: &[f64],
    estimator: &dyn AdevEstimator,
) -> AdevCurve {
    let y = series.fractional_difference();
    adev(estimator, &y, series.sample_period, taus).scaled(std::f64::consts::FRAC_1_SQRT_2)
}
