use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ValidatedConfig;
use crate::physics::{evolve_ion, IonRates, IonState};
use crate::rng::{substream, SimRng, Substream};

use super::planner::{plan_refill, validate_plan, Move, MovePlan};

pub type IonId = u64;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ion {
    id: IonId,
    state: IonState,
}

/// Contents of one well as the controller sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Slot {
    Empty,
    Occupied { ion: IonId },
    /// Reserved for an ion on its way here from `from`.
    InTransit { ion: IonId, from: usize, arrival_s: f64 },
}

/// What the servo may probe at one clock site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteView {
    pub ion: IonId,
    /// Physical state; the servo only learns it through fluorescence.
    pub state: IonState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuttleEventKind {
    Loss,
    LoadStart,
    LoadDone,
    MoveStart,
    MoveDone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuttleEvent {
    pub timestamp_s: f64,
    pub event: ShuttleEventKind,
    pub positions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ion_id: Option<IonId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Loader {
    Idle,
    Loading { done_at: f64 },
}

#[derive(Debug, Clone)]
struct ActivePlan {
    plan: MovePlan,
    next_group: usize,
    /// Arrival time of the group in flight.
    busy_until: Option<f64>,
}

/// Loading and shuttling state machine.
///
/// Position 0 holds the buffer ion, positions `1..=n` are clock sites. The
/// manager owns both the physical ions (which may go dark or be lost at any
/// time) and the controller's view of which wells are occupied, which only
/// changes when ions are moved, loaded, or reported lost by the servo. A
/// lost buffer ion is noticed immediately since the loading well is imaged
/// continuously.
#[derive(Debug, Clone)]
pub struct EnsembleManager {
    wells: Vec<Option<Ion>>,
    in_transit: Vec<(Ion, Move, f64)>,
    rates: Vec<IonRates>,
    shuttle_step: f64,
    load_latency_mean: f64,
    loader_enabled: bool,
    loader: Loader,
    plan: Option<ActivePlan>,
    next_id: IonId,
    now: f64,
    loss_rng: SimRng,
    loader_rng: SimRng,
    /// Time spent with k clock sites holding a trapped ion at rest.
    occupancy_time: Vec<f64>,
    events: Vec<ShuttleEvent>,
}

impl EnsembleManager {
    pub fn new(config: &ValidatedConfig) -> Self {
        let sim = config.simulation();
        let n = sim.n_sites;
        let mut rates = Vec::with_capacity(n + 1);
        rates.push(IonRates::from_sim(sim, sim.buffer_lifetime_multiplier));
        for site in config.sites() {
            rates.push(IonRates::from_sim(sim, site.lifetime_multiplier));
        }
        let mut wells = vec![None; n + 1];
        let mut next_id = 1;
        let mut place = |p: usize, wells: &mut Vec<Option<Ion>>| {
            wells[p] = Some(Ion {
                id: next_id,
                state: IonState::Bright,
            });
            next_id += 1;
        };
        match &sim.initial_sites {
            Some(list) => {
                let mut list = list.clone();
                list.sort_unstable();
                for p in list {
                    place(p, &mut wells);
                }
            }
            None => (1..=n).for_each(|p| place(p, &mut wells)),
        }
        if sim.initial_buffer {
            place(0, &mut wells);
        }
        let mut m = Self {
            wells,
            in_transit: Vec::new(),
            rates,
            shuttle_step: sim.shuttle_step_time_s,
            load_latency_mean: sim.load_latency_mean_s,
            loader_enabled: sim.loader_enabled,
            loader: Loader::Idle,
            plan: None,
            next_id,
            now: 0.0,
            loss_rng: substream(sim.seed, Substream::Loss),
            loader_rng: substream(sim.seed, Substream::Loader),
            occupancy_time: vec![0.0; n + 1],
            events: Vec::new(),
        };
        m.maybe_start_load();
        m.maybe_plan();
        m
    }

    pub fn n_sites(&self) -> usize {
        self.wells.len() - 1
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Controller view of every well.
    pub fn occupancy(&self) -> Vec<Slot> {
        let mut slots: Vec<Slot> = self
            .wells
            .iter()
            .map(|w| match w {
                Some(ion) => Slot::Occupied { ion: ion.id },
                None => Slot::Empty,
            })
            .collect();
        for (ion, mv, arrival) in &self.in_transit {
            slots[mv.to] = Slot::InTransit {
                ion: ion.id,
                from: mv.from,
                arrival_s: *arrival,
            };
        }
        slots
    }

    /// Ion at clock site `site` (1-based) if it is at rest there.
    pub fn site(&self, site: usize) -> Option<SiteView> {
        self.wells[site].map(|ion| SiteView {
            ion: ion.id,
            state: ion.state,
        })
    }

    pub fn buffer_present(&self) -> bool {
        self.wells[0].is_some()
    }

    pub fn is_loading(&self) -> bool {
        matches!(self.loader, Loader::Loading { .. })
    }

    pub fn is_shuttling(&self) -> bool {
        self.plan.is_some()
    }

    /// Clock sites holding a trapped (not lost) ion at rest.
    pub fn trapped_at_rest(&self) -> usize {
        self.wells[1..]
            .iter()
            .filter(|w| matches!(w, Some(ion) if ion.state != IonState::Lost))
            .count()
    }

    /// Seconds spent with exactly k clock sites holding a trapped ion at rest.
    pub fn occupancy_time(&self) -> &[f64] {
        &self.occupancy_time
    }

    /// Drains the shuttle events logged since the last call.
    pub fn take_events(&mut self) -> Vec<ShuttleEvent> {
        std::mem::take(&mut self.events)
    }

    /// Advances physical ion dynamics and pending loads and moves to `t`.
    pub fn advance_to(&mut self, t: f64) {
        while self.now < t {
            let next = self.next_event_time().filter(|&e| e <= t).unwrap_or(t);
            self.evolve(next);
            self.fire_due();
        }
        self.fire_due();
    }

    /// Applies the servo's lost-site report: the flagged ions are discarded
    /// and refilling starts if nothing is moving.
    pub fn report_lost(&mut self, lost_sites: &[usize]) {
        for &site in lost_sites {
            if let Some(ion) = self.wells[site].take() {
                self.log(ShuttleEventKind::Loss, vec![site], Some(ion.id));
            }
        }
        self.maybe_plan();
    }

    fn next_event_time(&self) -> Option<f64> {
        let load = match self.loader {
            Loader::Loading { done_at } => Some(done_at),
            Loader::Idle => None,
        };
        let moves = self.plan.as_ref().and_then(|p| p.busy_until);
        match (load, moves) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn evolve(&mut self, t: f64) {
        let dt = t - self.now;
        if dt <= 0.0 {
            return;
        }
        let k = self.trapped_at_rest();
        self.occupancy_time[k] += dt;
        for (p, well) in self.wells.iter_mut().enumerate() {
            if let Some(ion) = well {
                ion.state = evolve_ion(ion.state, dt, &self.rates[p], &mut self.loss_rng);
            }
        }
        self.now = t;
        if matches!(self.wells[0], Some(ion) if ion.state == IonState::Lost) {
            let ion = self.wells[0].take().expect("checked above");
            self.log(ShuttleEventKind::Loss, vec![0], Some(ion.id));
            self.maybe_start_load();
        }
    }

    fn fire_due(&mut self) {
        if let Loader::Loading { done_at } = self.loader {
            if done_at <= self.now {
                self.loader = Loader::Idle;
                let ion = Ion {
                    id: self.next_id,
                    state: IonState::Bright,
                };
                self.next_id += 1;
                debug_assert!(self.wells[0].is_none());
                self.wells[0] = Some(ion);
                self.log(ShuttleEventKind::LoadDone, vec![0], Some(ion.id));
                if self.plan.is_none() {
                    self.maybe_plan();
                }
            }
        }
        if let Some(until) = self.plan.as_ref().and_then(|p| p.busy_until) {
            if until <= self.now {
                let landed = std::mem::take(&mut self.in_transit);
                for (ion, mv, _) in landed {
                    self.wells[mv.to] = Some(ion);
                    self.log(ShuttleEventKind::MoveDone, vec![mv.from, mv.to], Some(ion.id));
                }
                if let Some(p) = self.plan.as_mut() {
                    p.busy_until = None;
                }
                self.start_next_group();
            }
        }
    }

    fn maybe_start_load(&mut self) {
        if self.loader_enabled && self.loader == Loader::Idle && self.wells[0].is_none() {
            let u: f64 = self.loader_rng.random();
            let latency = -(1.0 - u).ln() * self.load_latency_mean;
            self.loader = Loader::Loading {
                done_at: self.now + latency,
            };
            self.log(ShuttleEventKind::LoadStart, vec![0], None);
        }
    }

    fn occupied_mask(&self) -> Vec<bool> {
        self.wells.iter().map(Option::is_some).collect()
    }

    fn maybe_plan(&mut self) {
        if self.plan.is_some() {
            return;
        }
        let plan = plan_refill(&self.occupied_mask());
        if plan.is_empty() {
            return;
        }
        self.plan = Some(ActivePlan {
            plan,
            next_group: 0,
            busy_until: None,
        });
        self.start_next_group();
    }

    fn start_next_group(&mut self) {
        let Some(active) = self.plan.as_ref() else {
            return;
        };
        let Some(group) = active.plan.groups.get(active.next_group).cloned() else {
            self.plan = None;
            self.maybe_plan();
            return;
        };
        // Losses reported since planning may have emptied a source well.
        let single = MovePlan {
            groups: vec![group.clone()],
        };
        if validate_plan(&self.occupied_mask(), &single).is_err() {
            self.plan = None;
            self.maybe_plan();
            return;
        }
        let arrival = self.now + self.shuttle_step;
        let active = self.plan.as_mut().expect("checked above");
        active.next_group += 1;
        active.busy_until = Some(arrival);
        for mv in group {
            let ion = self.wells[mv.from].take().expect("validated source");
            self.in_transit.push((ion, mv, arrival));
            self.log(ShuttleEventKind::MoveStart, vec![mv.from, mv.to], Some(ion.id));
        }
        self.maybe_start_load();
    }

    fn log(&mut self, event: ShuttleEventKind, positions: Vec<usize>, ion_id: Option<IonId>) {
        self.events.push(ShuttleEvent {
            timestamp_s: self.now,
            event,
            positions,
            ion_id,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_preset;

    fn quiet_preset(edit: impl FnOnce(&mut crate::config::Config)) -> ValidatedConfig {
        default_preset()
            .modified(|c| {
                c.simulation.loss_enabled = false;
                edit(c);
            })
            .unwrap()
    }

    #[test]
    fn starts_full_with_buffer() {
        let m = EnsembleManager::new(&default_preset());
        assert!(m.buffer_present());
        assert!((1..=4).all(|s| m.site(s).is_some()));
        assert!(!m.is_shuttling() && !m.is_loading());
    }

    #[test]
    fn single_loss_refill_timing() {
        let cfg = quiet_preset(|_| {});
        let mut m = EnsembleManager::new(&cfg);
        m.advance_to(1.0);
        m.report_lost(&[3]);
        assert!(m.is_shuttling());
        assert!(!m.is_loading());
        m.advance_to(1.5);
        assert!(m.is_loading());
        m.advance_to(1.0 + 2.0 * 0.5 - 1e-9);
        assert!(m.site(1).is_none());
        m.advance_to(1.0 + 2.0 * 0.5);
        assert!((1..=4).all(|s| m.site(s).is_some()));
        assert!(!m.is_shuttling());
        let moves: Vec<_> = m
            .take_events()
            .into_iter()
            .filter(|e| e.event == ShuttleEventKind::MoveStart)
            .map(|e| (e.timestamp_s, e.positions))
            .collect();
        assert_eq!(
            moves,
            vec![(1.0, vec![2, 3]), (1.0, vec![1, 2]), (1.5, vec![0, 1])]
        );
    }

    #[test]
    fn reload_during_transit_is_visible() {
        let cfg = quiet_preset(|c| c.simulation.load_latency_mean_s = 1e-3);
        let mut m = EnsembleManager::new(&cfg);
        m.advance_to(1.0);
        m.report_lost(&[1]);
        m.advance_to(1.3);
        let slots = m.occupancy();
        assert!(matches!(slots[0], Slot::Occupied { .. }), "{slots:?}");
        assert!(slots.iter().any(|s| matches!(s, Slot::InTransit { from: 0, .. })));
    }

    #[test]
    fn nothing_happens_without_vacancy() {
        let cfg = quiet_preset(|_| {});
        let mut m = EnsembleManager::new(&cfg);
        m.advance_to(10.0);
        m.report_lost(&[]);
        assert!(m.take_events().is_empty());
        assert!(!m.is_loading());
    }

    #[test]
    fn loader_refills_buffer() {
        let cfg = quiet_preset(|c| c.simulation.initial_buffer = false);
        let mut m = EnsembleManager::new(&cfg);
        assert!(m.is_loading());
        m.advance_to(1000.0);
        assert!(m.buffer_present());
        let kinds: Vec<_> = m.take_events().into_iter().map(|e| e.event).collect();
        assert_eq!(kinds, vec![ShuttleEventKind::LoadStart, ShuttleEventKind::LoadDone]);
    }

    #[test]
    fn ids_are_never_duplicated() {
        let cfg = default_preset().modified(|c| c.simulation.ion_lifetime_s = 5.0).unwrap();
        let mut m = EnsembleManager::new(&cfg);
        let mut t = 0.0;
        while t < 600.0 {
            t += 0.47;
            m.advance_to(t);
            let lost: Vec<usize> = (1..=4)
                .filter(|&s| matches!(m.site(s), Some(v) if v.state != IonState::Bright))
                .collect();
            m.report_lost(&lost);
            let mut ids: Vec<IonId> = m
                .occupancy()
                .iter()
                .filter_map(|s| match s {
                    Slot::Occupied { ion } | Slot::InTransit { ion, .. } => Some(*ion),
                    Slot::Empty => None,
                })
                .collect();
            let n = ids.len();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), n);
        }
    }
}
