use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::registry::{Named, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "R")]
    Right,
    #[serde(rename = "L")]
    Left,
}

impl Side {
    /// +1 for the probe above the inferred center, -1 below.
    pub fn sign(self) -> f64 {
        match self {
            Side::Right => 1.0,
            Side::Left => -1.0,
        }
    }
}

/// One side interrogation slot within a clock cycle; integrators are 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub integrator: usize,
    pub side: Side,
}

/// Order of the four side interrogations within a clock cycle.
pub trait SideSchedule: Named + Send + Sync {
    fn slots(&self) -> [Slot; 4];
}

const fn slot(integrator: usize, side: Side) -> Slot {
    Slot { integrator, side }
}

/// R1 L1 R2 L2.
struct Interleaved;

impl Named for Interleaved {
    fn name(&self) -> &'static str {
        "r1l1r2l2"
    }
}

impl SideSchedule for Interleaved {
    fn slots(&self) -> [Slot; 4] {
        [
            slot(0, Side::Right),
            slot(0, Side::Left),
            slot(1, Side::Right),
            slot(1, Side::Left),
        ]
    }
}

/// R1 R2 L1 L2.
struct SideMajor;

impl Named for SideMajor {
    fn name(&self) -> &'static str {
        "r1r2l1l2"
    }
}

impl SideSchedule for SideMajor {
    fn slots(&self) -> [Slot; 4] {
        [
            slot(0, Side::Right),
            slot(1, Side::Right),
            slot(0, Side::Left),
            slot(1, Side::Left),
        ]
    }
}

/// R1 L1 L2 R2: the second integrator mirrors the first, which cancels a
/// linear drift within the cycle between them.
struct Mirrored;

impl Named for Mirrored {
    fn name(&self) -> &'static str {
        "r1l1l2r2"
    }
}

impl SideSchedule for Mirrored {
    fn slots(&self) -> [Slot; 4] {
        [
            slot(0, Side::Right),
            slot(0, Side::Left),
            slot(1, Side::Left),
            slot(1, Side::Right),
        ]
    }
}

pub fn schedule_registry() -> &'static Registry<dyn SideSchedule> {
    static REG: OnceLock<Registry<dyn SideSchedule>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn SideSchedule> = Registry::new();
        r.register(Arc::new(Interleaved));
        r.register(Arc::new(SideMajor));
        r.register(Arc::new(Mirrored));
        r
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_schedule_probes_each_side_once() {
        for name in schedule_registry().names() {
            let s = schedule_registry().get(name).unwrap().slots();
            for i in 0..2 {
                for side in [Side::Right, Side::Left] {
                    assert_eq!(s.iter().filter(|x| x.integrator == i && x.side == side).count(), 1);
                }
            }
        }
    }

    #[test]
    fn default_order() {
        let s = schedule_registry().get("r1l1r2l2").unwrap().slots();
        assert_eq!(s[0], slot(0, Side::Right));
        assert_eq!(s[3], slot(1, Side::Left));
    }
}
