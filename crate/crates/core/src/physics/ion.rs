use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::rng::SimRng;

/// Whether an ion scatters cooling light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IonState {
    /// In the cooling cycle.
    Bright,
    /// Trapped but knocked out of the cooling cycle by a collision.
    Dark,
    Lost,
}

/// Rates of the three processes acting on an ion, 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonRates {
    pub loss: f64,
    pub dark_event: f64,
    pub recovery: f64,
}

impl IonRates {
    /// `lifetime_multiplier` stretches the mean lifetime at a given position.
    pub fn from_sim(sim: &SimulationConfig, lifetime_multiplier: f64) -> Self {
        let loss = if sim.loss_enabled {
            1.0 / (sim.ion_lifetime_s * lifetime_multiplier)
        } else {
            0.0
        };
        Self {
            loss,
            dark_event: if sim.loss_enabled { sim.dark_event_rate_hz } else { 0.0 },
            recovery: sim.dark_recovery_rate_hz,
        }
    }

    pub fn none() -> Self {
        Self {
            loss: 0.0,
            dark_event: 0.0,
            recovery: 0.0,
        }
    }
}

/// Advances an ion by `dt`, sampling the competing exponential processes
/// exactly (several transitions may occur within one step).
pub fn evolve_ion(mut state: IonState, dt: f64, rates: &IonRates, rng: &mut SimRng) -> IonState {
    assert!(dt >= 0.0, "dt must be non-negative");
    let mut left = dt;
    while left > 0.0 {
        let (leave, to_other) = match state {
            IonState::Lost => return IonState::Lost,
            IonState::Bright => (rates.dark_event, IonState::Dark),
            IonState::Dark => (rates.recovery, IonState::Bright),
        };
        let total = rates.loss + leave;
        if total <= 0.0 {
            return state;
        }
        let wait = -(1.0 - rng.random::<f64>()).ln() / total;
        if wait >= left {
            return state;
        }
        left -= wait;
        state = if rng.random::<f64>() * total < rates.loss {
            IonState::Lost
        } else {
            to_other
        };
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Substream};

    fn rates(loss: f64) -> IonRates {
        IonRates {
            loss,
            dark_event: 1.0 / 300.0,
            recovery: 0.2,
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let mut rng = substream(1, Substream::Loss);
        for s in [IonState::Bright, IonState::Dark, IonState::Lost] {
            assert_eq!(evolve_ion(s, 0.0, &rates(1.0), &mut rng), s);
        }
    }

    #[test]
    fn lost_is_absorbing() {
        let mut rng = substream(2, Substream::Loss);
        for dt in [0.1, 10.0, 1e6] {
            assert_eq!(evolve_ion(IonState::Lost, dt, &rates(1.0), &mut rng), IonState::Lost);
        }
    }

    #[test]
    fn survival_follows_exponential_law() {
        let mut rng = substream(3, Substream::Loss);
        let n = 50_000;
        let alive = (0..n)
            .filter(|_| evolve_ion(IonState::Bright, 60.0, &rates(1.0 / 60.0), &mut rng) != IonState::Lost)
            .count();
        let frac = alive as f64 / n as f64;
        assert!((frac - (-1.0f64).exp()).abs() < 0.02, "{frac}");
    }

    #[test]
    fn many_small_steps_match_one_large_step() {
        let mut rng = substream(4, Substream::Loss);
        let n = 20_000;
        let alive = (0..n)
            .filter(|_| {
                let mut s = IonState::Bright;
                for _ in 0..600 {
                    s = evolve_ion(s, 0.1, &rates(1.0 / 60.0), &mut rng);
                }
                s != IonState::Lost
            })
            .count();
        assert!((alive as f64 / n as f64 - (-1.0f64).exp()).abs() < 0.02);
    }

    #[test]
    fn dark_fraction_reaches_equilibrium() {
        let r = rates(0.0);
        let mut rng = substream(5, Substream::Loss);
        let n = 20_000;
        let dark = (0..n)
            .filter(|_| evolve_ion(IonState::Bright, 500.0, &r, &mut rng) == IonState::Dark)
            .count();
        let expect = r.dark_event / (r.dark_event + r.recovery);
        assert!((dark as f64 / n as f64 - expect).abs() < 0.005);
    }
}
