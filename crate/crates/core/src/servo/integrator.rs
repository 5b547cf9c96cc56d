use serde::{Deserialize, Serialize};

use crate::config::ServoConfig;

/// First- and second-order integrators of one interleaved servo. Both are
/// exact integers; the second order accrues the first order's value before
/// the first order takes the new imbalance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntegratorState {
    pub i1: i64,
    pub i2: i64,
}

impl IntegratorState {
    pub fn update(self, imbalance: i64) -> Self {
        Self {
            i1: self.i1 + imbalance,
            i2: self.i2 + self.i1,
        }
    }
}

pub fn update_integrator(state: IntegratorState, imbalance: i64) -> IntegratorState {
    state.update(imbalance)
}

/// Total frequency displacement `(g1 I1 + g2 I2) FWHM`, Hz.
pub fn frequency_displacement(state: IntegratorState, servo: &ServoConfig) -> f64 {
    displacement(state, servo.gain1, servo.gain2, servo.fwhm_hz)
}

pub fn displacement(state: IntegratorState, gain1: f64, gain2: f64, fwhm: f64) -> f64 {
    (gain1 * state.i1 as f64 + gain2 * state.i2 as f64) * fwhm
}
