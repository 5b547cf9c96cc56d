//! Statistics on simulator output: Allan deviation, projection-noise
//! limits, Rabi-flop fits and per-site frequency-shift diagnostics.

mod adev;
mod lm;
mod qpn;
mod rabi_fit;
mod series;
mod shifts;

pub use adev::{
    adev, adev_registry, fit_white_fm, log_spaced_taus, overlapping_adev, AdevCurve,
    AdevEstimator, AdevPoint, WhiteFmFit,
};
pub use lm::{levenberg_marquardt, LmOptions, LmResult};
pub use qpn::{effective_contrast, qpn};
pub use rabi_fit::{fit_rabi, synthetic_flops, FitError, RabiFitResult, RabiPoint};
pub use series::{single_integrator_instability, FrequencySeries, SeriesError};
pub use shifts::{
    first_order_shifts, shift_registry, ShiftGroup, ShiftReport, ShiftRestriction, ShiftSample,
};
