//! Refill planning on a linear chain of wells.
//!
//! Position 0 is the loading well, which holds the buffer ion; positions
//! `1..=n` are clock sites. Ions can only move outward (away from the loading
//! well) and can never pass each other or cross a resting ion.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Move {
    pub from: usize,
    pub to: usize,
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// Groups of simultaneous moves, executed in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovePlan {
    pub groups: Vec<Vec<Move>>,
}

impl MovePlan {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn move_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

impl fmt::Display for MovePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{{")?;
            for (j, m) in g.iter().enumerate() {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{m}")?;
            }
            write!(f, "}}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanViolation {
    #[error("group {group}: {mv} starts from an empty well")]
    EmptySource { group: usize, mv: Move },
    #[error("group {group}: {mv} does not move outward")]
    NotOutward { group: usize, mv: Move },
    #[error("group {group}: {mv} lands outside the chain")]
    OutOfRange { group: usize, mv: Move },
    #[error("group {group}: {mv} ends on an occupied well")]
    OccupiedDestination { group: usize, mv: Move },
    #[error("group {group}: {mv} crosses the resting ion at {at}")]
    Crossing { group: usize, mv: Move, at: usize },
    #[error("group {group}: ions reorder")]
    Reorder { group: usize },
    #[error("group {group}: {count} moves exceed the cap of {cap}")]
    CapExceeded { group: usize, count: usize, cap: usize },
    #[error("group {group}: well {at} is moved twice")]
    DuplicateSource { group: usize, at: usize },
    #[error("group {group} is empty")]
    EmptyGroup { group: usize },
}

/// Largest number of ions that may move together: half the trapped ions,
/// rounded up.
pub fn group_cap(occupied: usize) -> usize {
    occupied.div_ceil(2).max(1)
}

/// Plans the refill of `occupied` (indexed by position, 0 = loading well).
///
/// The target arrangement packs every ion, including the buffer, against the
/// far end of the chain in its current order, which fills the farthest
/// vacancies first. Each ion then needs exactly one move. Groups are filled
/// from the far end inward up to [`group_cap`] moves each, which reaches the
/// minimum number of groups because an ion is only held back by the one
/// beyond it.
pub fn plan_refill(occupied: &[bool]) -> MovePlan {
    let n_pos = occupied.len();
    let ions: Vec<usize> = (0..n_pos).filter(|&p| occupied[p]).collect();
    if ions.is_empty() {
        return MovePlan::default();
    }
    let first_target = n_pos - ions.len();
    // (current, target) for ions still to move, farthest first.
    let mut pending: Vec<Move> = ions
        .iter()
        .enumerate()
        .map(|(k, &p)| Move {
            from: p,
            to: first_target + k,
        })
        .filter(|m| m.to != m.from)
        .rev()
        .collect();
    let cap = group_cap(ions.len());
    let mut groups = Vec::new();
    let mut pos: Vec<bool> = occupied.to_vec();
    while !pending.is_empty() {
        let mut group: Vec<Move> = Vec::new();
        let mut rest = Vec::new();
        for m in pending {
            let clear = group.len() < cap
                && rest.is_empty()
                && (m.from + 1..=m.to).all(|q| !pos[q] || group.iter().any(|g| g.from == q));
            if clear {
                group.push(m);
            } else {
                rest.push(m);
            }
        }
        debug_assert!(!group.is_empty(), "planner stalled");
        for m in &group {
            pos[m.from] = false;
        }
        for m in &group {
            pos[m.to] = true;
        }
        groups.push(group);
        pending = rest;
    }
    MovePlan { groups }
}

/// Checks a plan against an occupancy, replaying it group by group.
pub fn validate_plan(occupied: &[bool], plan: &MovePlan) -> Result<Vec<bool>, PlanViolation> {
    let mut pos = occupied.to_vec();
    for (gi, group) in plan.groups.iter().enumerate() {
        if group.is_empty() {
            return Err(PlanViolation::EmptyGroup { group: gi });
        }
        let cap = group_cap(pos.iter().filter(|&&o| o).count());
        if group.len() > cap {
            return Err(PlanViolation::CapExceeded {
                group: gi,
                count: group.len(),
                cap,
            });
        }
        let mut moving = vec![false; pos.len()];
        for &mv in group {
            if mv.to >= pos.len() {
                return Err(PlanViolation::OutOfRange { group: gi, mv });
            }
            if mv.to <= mv.from {
                return Err(PlanViolation::NotOutward { group: gi, mv });
            }
            if !pos[mv.from] {
                return Err(PlanViolation::EmptySource { group: gi, mv });
            }
            if std::mem::replace(&mut moving[mv.from], true) {
                return Err(PlanViolation::DuplicateSource {
                    group: gi,
                    at: mv.from,
                });
            }
        }
        for &mv in group {
            for q in mv.from + 1..=mv.to {
                if pos[q] && !moving[q] {
                    return Err(if q == mv.to {
                        PlanViolation::OccupiedDestination { group: gi, mv }
                    } else {
                        PlanViolation::Crossing { group: gi, mv, at: q }
                    });
                }
            }
        }
        // Order is preserved iff sorting by source also sorts destinations,
        // and no two moves share a destination.
        let mut sorted = group.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0].to >= w[1].to) {
            return Err(PlanViolation::Reorder { group: gi });
        }
        for &mv in group {
            pos[mv.from] = false;
        }
        for &mv in group {
            if pos[mv.to] {
                return Err(PlanViolation::OccupiedDestination { group: gi, mv });
            }
            pos[mv.to] = true;
        }
    }
    Ok(pos)
}

/// A loss pattern and the plan that repairs it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub lost_sites: Vec<usize>,
    pub plan: MovePlan,
}

/// Repair plans for the loss of any single clock site with the buffer
/// loaded. Multi-site losses are handled by planning again on the result.
pub fn scenario_catalog(n_sites: usize) -> Vec<Scenario> {
    (1..=n_sites)
        .map(|lost| {
            let occ: Vec<bool> = (0..=n_sites).map(|p| p != lost).collect();
            Scenario {
                lost_sites: vec![lost],
                plan: plan_refill(&occ),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{HashMap, VecDeque};

    fn mv(from: usize, to: usize) -> Move {
        Move { from, to }
    }

    fn occ(bits: &[usize], n_pos: usize) -> Vec<bool> {
        (0..n_pos).map(|p| bits.contains(&p)).collect()
    }

    /// Every legal group from `pos`: any subset of ions moving outward by any
    /// amount, under the plan rules.
    fn legal_groups(pos: &[bool]) -> Vec<Vec<Move>> {
        let ions: Vec<usize> = (0..pos.len()).filter(|&p| pos[p]).collect();
        let mut out = Vec::new();
        let mut choice = vec![0usize; ions.len()];
        // choice[k] = displacement of ion k (0 = stays).
        loop {
            let group: Vec<Move> = ions
                .iter()
                .zip(&choice)
                .filter(|(_, &d)| d > 0)
                .map(|(&p, &d)| mv(p, p + d))
                .collect();
            if !group.is_empty() {
                let plan = MovePlan {
                    groups: vec![group.clone()],
                };
                if validate_plan(pos, &plan).is_ok() {
                    out.push(group);
                }
            }
            let mut k = 0;
            loop {
                if k == ions.len() {
                    return out;
                }
                choice[k] += 1;
                if ions[k] + choice[k] < pos.len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }

    /// Occupied clock sites, farthest first, as a comparison key: the
    /// lexicographically largest key fills the farthest vacancies.
    fn fill_key(pos: &[bool]) -> Vec<bool> {
        (1..pos.len()).rev().map(|p| pos[p]).collect()
    }

    /// Exhaustive breadth-first search: best reachable final arrangement, and
    /// the fewest groups that reach it.
    fn oracle(start: &[bool]) -> (Vec<bool>, usize) {
        let mut dist: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        dist.insert(start.to_vec(), 0);
        queue.push_back(start.to_vec());
        while let Some(s) = queue.pop_front() {
            let d = dist[&s];
            for g in legal_groups(&s) {
                let next = validate_plan(&s, &MovePlan { groups: vec![g] }).unwrap();
                if !dist.contains_key(&next) {
                    dist.insert(next.clone(), d + 1);
                    queue.push_back(next);
                }
            }
        }
        let best = dist.keys().max_by_key(|s| fill_key(s)).unwrap().clone();
        let d = dist[&best];
        (best, d)
    }

    #[test]
    fn single_hole_choreography() {
        let plan = plan_refill(&occ(&[0, 1, 2, 4], 5));
        assert_eq!(
            plan.groups,
            vec![vec![mv(2, 3), mv(1, 2)], vec![mv(0, 1)]]
        );
    }

    #[test]
    fn full_chain_needs_nothing() {
        assert!(plan_refill(&occ(&[0, 1, 2, 3, 4], 5)).is_empty());
        assert!(plan_refill(&occ(&[1, 2, 3, 4], 5)).is_empty());
        assert!(plan_refill(&occ(&[], 5)).is_empty());
    }

    #[test]
    fn two_vacancies_fill_far_one_first() {
        let start = occ(&[0, 1, 3], 5);
        let plan = plan_refill(&start);
        let end = validate_plan(&start, &plan).unwrap();
        assert_eq!(end, occ(&[2, 3, 4], 5));
        assert_eq!(plan.groups[0][0], mv(3, 4));
        let (best, groups) = oracle(&start);
        assert_eq!(end, best);
        assert_eq!(plan.groups.len(), groups);
    }

    #[test]
    fn matches_exhaustive_search_on_every_pattern() {
        for n_pos in 2..=5 {
            for mask in 0u32..(1 << n_pos) {
                let start: Vec<bool> = (0..n_pos).map(|p| mask >> p & 1 == 1).collect();
                let plan = plan_refill(&start);
                let end = validate_plan(&start, &plan)
                    .unwrap_or_else(|e| panic!("{start:?}: {e}"));
                let (best, groups) = oracle(&start);
                assert_eq!(end, best, "{start:?}");
                assert_eq!(plan.groups.len(), groups, "{start:?} plan {plan}");
            }
        }
    }

    #[test]
    fn catalog_covers_single_losses() {
        let cat = scenario_catalog(4);
        assert_eq!(cat.len(), 4);
        assert_eq!(cat[3].lost_sites, vec![4]);
        assert_eq!(cat[3].plan.groups[0], vec![mv(3, 4), mv(2, 3)]);
        for s in &cat {
            let start: Vec<bool> = (0..5).map(|p| !s.lost_sites.contains(&p)).collect();
            let end = validate_plan(&start, &s.plan).unwrap();
            assert_eq!(end, occ(&[1, 2, 3, 4], 5));
        }
    }

    #[test]
    fn validator_rejects_crossing_and_cap() {
        let start = occ(&[0, 1, 2, 3], 5);
        let crossing = MovePlan {
            groups: vec![vec![mv(1, 4)]],
        };
        assert!(matches!(
            validate_plan(&start, &crossing),
            Err(PlanViolation::Crossing { at: 2, .. })
        ));
        let too_many = MovePlan {
            groups: vec![vec![mv(3, 4), mv(2, 3), mv(1, 2)]],
        };
        assert!(matches!(
            validate_plan(&start, &too_many),
            Err(PlanViolation::CapExceeded { .. })
        ));
    }

    proptest! {
        #[test]
        fn plans_are_legal_and_conserve_ions(bits in proptest::collection::vec(any::<bool>(), 1..9)) {
            let plan = plan_refill(&bits);
            let end = validate_plan(&bits, &plan).unwrap();
            prop_assert_eq!(
                end.iter().filter(|&&b| b).count(),
                bits.iter().filter(|&&b| b).count()
            );
            // Packed against the far end.
            let k = end.iter().filter(|&&b| b).count();
            prop_assert!(end[end.len() - k..].iter().all(|&b| b));
        }
    }
}
