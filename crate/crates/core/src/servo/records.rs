use serde::{Deserialize, Serialize};

use super::integrator::IntegratorState;
use super::schedule::Side;

/// One side interrogation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideRecord {
    pub cycle: u64,
    pub timestamp_s: f64,
    /// 1 or 2.
    pub integrator: u8,
    pub side: Side,
    /// Per clock site: 1 if read bright, 0 if dark, null if not probed.
    pub n: Vec<Option<u8>>,
    /// Probe frequency relative to the LO, Hz.
    pub applied_detuning_hz: f64,
}

/// Side sums of one site over a reporting period, per integrator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteSums {
    pub r: [u32; 2],
    pub l: [u32; 2],
}

impl SiteSums {
    pub fn imbalance(&self, integrator: usize) -> i64 {
        self.r[integrator] as i64 - self.l[integrator] as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub period: u64,
    pub timestamp_s: f64,
    /// Indexed by clock site (site 1 first).
    pub sums: Vec<SiteSums>,
    /// Probed on every side of the period and not flagged lost.
    pub present: Vec<bool>,
    /// Clock sites (1-based) reported lost to the ensemble manager.
    pub lost: Vec<usize>,
    pub df1_hz: f64,
    pub df2_hz: f64,
    pub integrators: [IntegratorState; 2],
}

/// Servo frequency displacements after a clock cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySample {
    pub t_s: f64,
    pub df1_hz: f64,
    pub df2_hz: f64,
}

/// Replays the integrator recurrence from a side log. A site contributes to
/// a cycle's imbalance only if both of its sides were probed.
pub fn refold_integrators<'a>(sides: impl IntoIterator<Item = &'a SideRecord>) -> [IntegratorState; 2] {
    let mut states = [IntegratorState::default(); 2];
    let mut current: Option<u64> = None;
    let mut pending: Vec<&SideRecord> = Vec::new();
    let flush = |pending: &mut Vec<&SideRecord>, states: &mut [IntegratorState; 2]| {
        if pending.is_empty() {
            return;
        }
        for (k, state) in states.iter_mut().enumerate() {
            let pick = |side: Side| {
                pending
                    .iter()
                    .find(|r| r.integrator as usize == k + 1 && r.side == side)
                    .map(|r| r.n.as_slice())
            };
            let imbalance = match (pick(Side::Right), pick(Side::Left)) {
                (Some(r), Some(l)) => pair_imbalance(r, l),
                _ => 0,
            };
            *state = state.update(imbalance);
        }
        pending.clear();
    };
    for rec in sides {
        if current != Some(rec.cycle) {
            flush(&mut pending, &mut states);
            current = Some(rec.cycle);
        }
        pending.push(rec);
    }
    flush(&mut pending, &mut states);
    states
}

pub(crate) fn pair_imbalance(r: &[Option<u8>], l: &[Option<u8>]) -> i64 {
    r.iter()
        .zip(l)
        .filter_map(|(a, b)| Some(a.as_ref()?.to_owned() as i64 - b.as_ref()?.to_owned() as i64))
        .sum()
}
