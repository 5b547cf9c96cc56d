//! Interleaved two-integrator clock servo.
//!
//! Each clock cycle probes every occupied site on the right and left half
//! maxima of the line for each of two independent integrators. After the
//! cycle, each integrator takes the summed imbalance `sum(n_R - n_L)` and the
//! LO correction becomes `(g1 I1 + g2 I2) FWHM`. Every `report_period`
//! cycles the servo publishes side sums and presence flags and hands the
//! lost sites to the ensemble manager.
//!
//! Sign convention: an ion sees the detuning
//! `lo_error + site_offset + s FWHM/2 - df` with `s = +1` on the right side.
//! When `df` lags the true line the right probe sits farther out, scatters
//! more, and the positive imbalance raises `df`.

mod integrator;
mod prescan;
mod presence;
mod records;
mod schedule;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

pub use integrator::{displacement, frequency_displacement, update_integrator, IntegratorState};
pub use prescan::{prescan_fwhm, prescan_site, PrescanError, PrescanResult};
pub use presence::{presence_update, PresenceTracker};
pub use records::{refold_integrators, FrequencySample, ReportRecord, SideRecord, SiteSums};
pub use schedule::{schedule_registry, Side, SideSchedule, Slot};

use crate::config::ValidatedConfig;
use crate::ensemble::{EnsembleManager, IonId, ShuttleEvent};
use crate::lo::LoNoise;
use crate::physics::{
    apply_prep_error, lamb_dicke, DetectionModel, IonState, LineshapeTable, ThermalState,
};
use crate::rng::{substream, SimRng, Substream};

use records::pair_imbalance;

/// Per-site response to the clock probe, precomputed from a config.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub tables: Vec<LineshapeTable>,
    pub detection: Vec<DetectionModel>,
    /// Probe Rabi frequency per site, rad/s.
    pub probe_rabi: Vec<f64>,
    pub eta: f64,
}

impl ProbeModel {
    /// Probe Rabi frequencies keep the site-to-site ratios of the configured
    /// flop Rabi frequencies, scaled so the mean site gets the configured
    /// pulse area in `probe_time`.
    pub fn new(config: &ValidatedConfig) -> Self {
        let servo = config.servo();
        let eta = lamb_dicke(config.species());
        let sites = config.sites();
        let mean_rabi = sites.iter().map(|s| s.rabi_freq_rad_s).sum::<f64>() / sites.len() as f64;
        let scale = servo.probe_pulse_area_rad / (servo.probe_time_s * mean_rabi);
        let span = 4.0 * servo.fwhm_hz;
        let points = (span / 1.0).ceil() as usize + 1;
        let probe_rabi: Vec<f64> = sites.iter().map(|s| s.rabi_freq_rad_s * scale).collect();
        let tables = sites
            .iter()
            .zip(&probe_rabi)
            .map(|(s, &rabi)| {
                LineshapeTable::new(
                    servo.probe_time_s,
                    rabi,
                    ThermalState::new(s.nbar, eta),
                    s.contrast,
                    s.bias,
                    span,
                    points,
                )
            })
            .collect();
        let detection = sites
            .iter()
            .map(|s| DetectionModel::new(s, servo.detect_time_s, servo.detection_threshold))
            .collect();
        Self {
            tables,
            detection,
            probe_rabi,
            eta,
        }
    }

    /// Probability that an ion at `site` (0-based) reads bright when probed at
    /// `detuning`, including state-preparation and detection errors.
    pub fn bright_probability(&self, site: usize, detuning: f64, prep_error: f64) -> f64 {
        let shelved = self.tables[site].probability(detuning);
        let shelved = shelved * (1.0 - prep_error) + (1.0 - shelved) * prep_error;
        let det = &self.detection[site];
        (1.0 - shelved) * (1.0 - det.p_bright_as_dark()) + shelved * det.p_dark_as_bright()
    }
}

/// Receives the run's output streams as they are produced.
pub trait ClockObserver {
    fn side(&mut self, _rec: &SideRecord) {}
    fn cycle(&mut self, _sample: &FrequencySample) {}
    fn report(&mut self, _rec: &ReportRecord) {}
    fn shuttle(&mut self, _event: &ShuttleEvent) {}
}

/// Discards everything.
pub struct NullObserver;

impl ClockObserver for NullObserver {}

/// Keeps only the frequency trace.
#[derive(Debug, Default)]
pub struct FrequencyOnly(pub Vec<FrequencySample>);

impl ClockObserver for FrequencyOnly {
    fn cycle(&mut self, sample: &FrequencySample) {
        self.0.push(*sample);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub cycles: u64,
    pub end_time_s: f64,
    pub integrators: [IntegratorState; 2],
    /// Seconds with exactly k clock sites holding a trapped ion at rest.
    pub occupancy_time: Vec<f64>,
}

impl RunSummary {
    /// Fraction of the run with every clock site filled.
    pub fn full_occupancy_fraction(&self) -> f64 {
        let total: f64 = self.occupancy_time.iter().sum();
        if total > 0.0 {
            self.occupancy_time.last().copied().unwrap_or(0.0) / total
        } else {
            0.0
        }
    }
}

/// Every stream of a run held in memory.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub sides: Vec<SideRecord>,
    pub frequency: Vec<FrequencySample>,
    pub reports: Vec<ReportRecord>,
    pub shuttle: Vec<ShuttleEvent>,
    pub summary: Option<RunSummary>,
}

impl ClockObserver for RunOutput {
    fn side(&mut self, rec: &SideRecord) {
        self.sides.push(rec.clone());
    }
    fn cycle(&mut self, sample: &FrequencySample) {
        self.frequency.push(*sample);
    }
    fn report(&mut self, rec: &ReportRecord) {
        self.reports.push(rec.clone());
    }
    fn shuttle(&mut self, event: &ShuttleEvent) {
        self.shuttle.push(event.clone());
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("no clock site occupied for {waited_s:.1} s (interlock at t = {t_s:.3} s)")]
    AllIonsLostTimeout { t_s: f64, waited_s: f64 },
}

/// Number of whole clock cycles in `duration`.
pub fn cycles_in(config: &ValidatedConfig, duration: f64) -> u64 {
    (duration / config.cycle_time() + 1e-9).floor().max(0.0) as u64
}

/// One clock run: servo, LO, and ensemble manager on a shared timeline.
pub struct Clock {
    config: ValidatedConfig,
    probe: Arc<ProbeModel>,
    schedule: [Slot; 4],
    manager: EnsembleManager,
    lo: LoNoise,
    rng: SimRng,
    tracker: PresenceTracker,
    tracked_ion: Vec<Option<IonId>>,
    integrators: [IntegratorState; 2],
    cycle: u64,
    period_sums: Vec<SiteSums>,
    period_complete: Vec<bool>,
    last_occupied: f64,
}

impl Clock {
    pub fn new(config: &ValidatedConfig) -> Self {
        Self::with_probe_model(config, Arc::new(ProbeModel::new(config)))
    }

    /// Reuses a probe model, which is the costly part of setup, across runs
    /// that share site and servo parameters.
    pub fn with_probe_model(config: &ValidatedConfig, probe: Arc<ProbeModel>) -> Self {
        let servo = config.servo();
        let sim = config.simulation();
        let n = sim.n_sites;
        let schedule = schedule_registry()
            .get(&servo.side_order)
            .expect("validated schedule name")
            .slots();
        Self {
            config: config.clone(),
            probe,
            schedule,
            manager: EnsembleManager::new(config),
            lo: LoNoise::new(&sim.lo_noise, config.nu(), servo.side_time_s, sim.seed),
            rng: substream(sim.seed, Substream::Detection),
            tracker: PresenceTracker::new(n, servo.presence_window, servo.presence_threshold),
            tracked_ion: vec![None; n],
            integrators: [IntegratorState::default(); 2],
            cycle: 0,
            period_sums: vec![SiteSums::default(); n],
            period_complete: vec![true; n],
            last_occupied: 0.0,
        }
    }

    pub fn manager(&self) -> &EnsembleManager {
        &self.manager
    }

    pub fn integrators(&self) -> [IntegratorState; 2] {
        self.integrators
    }

    pub fn displacements(&self) -> [f64; 2] {
        let s = self.config.servo();
        self.integrators
            .map(|st| displacement(st, s.gain1, s.gain2, s.fwhm_hz))
    }

    /// Runs whole cycles until `duration` of simulated time has elapsed.
    pub fn run(
        &mut self,
        duration: f64,
        observer: &mut dyn ClockObserver,
    ) -> Result<RunSummary, ClockError> {
        let cycles = cycles_in(&self.config, duration);
        for _ in 0..cycles {
            self.step_cycle(observer)?;
        }
        Ok(self.summary())
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            cycles: self.cycle,
            end_time_s: self.cycle as f64 * self.config.cycle_time(),
            integrators: self.integrators,
            occupancy_time: self.manager.occupancy_time().to_vec(),
        }
    }

    fn forward_events(&mut self, observer: &mut dyn ClockObserver) {
        for ev in self.manager.take_events() {
            observer.shuttle(&ev);
        }
    }

    /// One clock cycle of four side interrogations and the integrator update.
    pub fn step_cycle(&mut self, observer: &mut dyn ClockObserver) -> Result<(), ClockError> {
        let servo = self.config.servo().clone();
        let n = self.config.simulation().n_sites;
        let side_time = servo.side_time_s;
        let offsets: Vec<f64> = self.config.sites().iter().map(|s| s.site_offset_hz).collect();
        let df = self.displacements();
        let mut outcomes: [Vec<Option<u8>>; 4] = Default::default();
        let mut cooling = [vec![false; n], vec![false; n]];

        let schedule = self.schedule;
        for (k, slot) in schedule.iter().enumerate() {
            let t = (4 * self.cycle + k as u64) as f64 * side_time;
            self.manager.advance_to(t);
            self.forward_events(observer);
            let lo = self.lo.next_offset();
            let applied = slot.side.sign() * 0.5 * servo.fwhm_hz - df[slot.integrator];
            let first_of_pair = !schedule[..k].iter().any(|s| s.integrator == slot.integrator);
            let mut n_out = vec![None; n];
            let mut any = false;
            for (s, out) in n_out.iter_mut().enumerate() {
                let Some(view) = self.manager.site(s + 1) else {
                    if self.tracked_ion[s].take().is_some() {
                        self.tracker.reset(s);
                    }
                    self.period_complete[s] = false;
                    continue;
                };
                any = true;
                if self.tracked_ion[s] != Some(view.ion) {
                    self.tracked_ion[s] = Some(view.ion);
                    self.tracker.reset(s);
                }
                let fluorescent = view.state == IonState::Bright;
                let emits = fluorescent && {
                    let p = self.probe.tables[s].probability(lo + offsets[s] + applied);
                    let shelved = self.rng.random::<f64>() < p;
                    !apply_prep_error(shelved, servo.state_prep_error, &mut self.rng)
                };
                let det = &self.probe.detection[s];
                let bright = det.sample(emits, &mut self.rng).classified_bright;
                *out = Some(bright as u8);
                let sums = &mut self.period_sums[s];
                if bright {
                    match slot.side {
                        Side::Right => sums.r[slot.integrator] += 1,
                        Side::Left => sums.l[slot.integrator] += 1,
                    }
                }
                if servo.presence_uses_cooling && first_of_pair {
                    cooling[slot.integrator][s] =
                        det.sample(fluorescent, &mut self.rng).classified_bright;
                }
            }
            if any {
                self.last_occupied = t;
            } else if t - self.last_occupied > servo.interlock_s {
                return Err(ClockError::AllIonsLostTimeout {
                    t_s: t,
                    waited_s: t - self.last_occupied,
                });
            }
            let rec = SideRecord {
                cycle: self.cycle,
                timestamp_s: t,
                integrator: slot.integrator as u8 + 1,
                side: slot.side,
                n: n_out,
                applied_detuning_hz: applied,
            };
            observer.side(&rec);
            outcomes[k] = rec.n;
        }

        for i in 0..2 {
            let r = self.index_of(i, Side::Right);
            let l = self.index_of(i, Side::Left);
            let imbalance = pair_imbalance(&outcomes[r], &outcomes[l]);
            self.integrators[i] = self.integrators[i].update(imbalance);
            for s in 0..n {
                if outcomes[r][s].is_some() || outcomes[l][s].is_some() {
                    let lit = outcomes[r][s] == Some(1) || outcomes[l][s] == Some(1) || cooling[i][s];
                    self.tracker.push(s, lit);
                }
            }
        }
        self.cycle += 1;
        let t_end = self.cycle as f64 * self.config.cycle_time();
        let [df1, df2] = self.displacements();
        observer.cycle(&FrequencySample {
            t_s: t_end,
            df1_hz: df1,
            df2_hz: df2,
        });

        if self.cycle.is_multiple_of(servo.report_period as u64) {
            self.manager.advance_to(t_end);
            let lost: Vec<usize> = (0..n)
                .filter(|&s| self.manager.site(s + 1).is_some() && self.tracker.is_lost(s))
                .collect();
            let present: Vec<bool> = (0..n)
                .map(|s| self.period_complete[s] && !lost.contains(&s))
                .collect();
            let rec = ReportRecord {
                period: self.cycle / servo.report_period as u64 - 1,
                timestamp_s: t_end,
                sums: std::mem::replace(&mut self.period_sums, vec![SiteSums::default(); n]),
                present,
                lost: lost.iter().map(|s| s + 1).collect(),
                df1_hz: df1,
                df2_hz: df2,
                integrators: self.integrators,
            };
            self.period_complete = vec![true; n];
            let lost_sites: Vec<usize> = rec.lost.clone();
            for &s in &lost {
                self.tracker.reset(s);
                self.tracked_ion[s] = None;
            }
            self.manager.report_lost(&lost_sites);
            observer.report(&rec);
            self.forward_events(observer);
        }
        Ok(())
    }

    fn index_of(&self, integrator: usize, side: Side) -> usize {
        self.schedule
            .iter()
            .position(|s| s.integrator == integrator && s.side == side)
            .expect("schedule covers both sides of both integrators")
    }
}

/// Runs `config` for `duration` seconds and keeps every output stream.
pub fn run_clock(config: &ValidatedConfig, duration: f64) -> Result<RunOutput, ClockError> {
    let mut out = RunOutput::default();
    let mut clock = Clock::new(config);
    let summary = clock.run(duration, &mut out)?;
    out.summary = Some(summary);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_preset;

    fn quiet() -> ValidatedConfig {
        default_preset()
            .modified(|c| c.simulation.loss_enabled = false)
            .unwrap()
    }

    #[test]
    fn one_report_period() {
        let cfg = quiet();
        let out = run_clock(&cfg, 0.47).unwrap();
        assert_eq!(out.frequency.len(), 20);
        assert_eq!(out.sides.len(), 80);
        assert_eq!(out.reports.len(), 1);
        assert!((out.reports[0].timestamp_s - 0.47).abs() < 1e-3);
    }

    #[test]
    fn no_ions_gives_no_outcomes() {
        let cfg = default_preset()
            .modified(|c| {
                c.simulation.initial_sites = Some(vec![]);
                c.simulation.initial_buffer = false;
                c.simulation.loader_enabled = false;
            })
            .unwrap();
        let out = run_clock(&cfg, 1.0).unwrap();
        assert!(out.sides.iter().all(|r| r.n.iter().all(Option::is_none)));
        assert!(out.frequency.iter().all(|f| f.df1_hz == 0.0 && f.df2_hz == 0.0));
    }

    #[test]
    fn interlock_aborts_empty_trap() {
        let cfg = default_preset()
            .modified(|c| {
                c.simulation.initial_sites = Some(vec![]);
                c.simulation.initial_buffer = false;
                c.simulation.loader_enabled = false;
                c.servo.interlock_s = 2.0;
            })
            .unwrap();
        let err = run_clock(&cfg, 10.0).unwrap_err();
        assert!(matches!(err, ClockError::AllIonsLostTimeout { .. }));
    }

    #[test]
    fn report_sums_match_side_log() {
        let out = run_clock(&default_preset(), 30.0).unwrap();
        for rep in &out.reports {
            let lo = rep.period * 20;
            let mut sums = vec![SiteSums::default(); 4];
            for rec in out.sides.iter().filter(|r| r.cycle >= lo && r.cycle < lo + 20) {
                for (s, v) in rec.n.iter().enumerate() {
                    if *v == Some(1) {
                        let i = rec.integrator as usize - 1;
                        match rec.side {
                            Side::Right => sums[s].r[i] += 1,
                            Side::Left => sums[s].l[i] += 1,
                        }
                    }
                }
            }
            assert_eq!(sums, rep.sums);
        }
    }

    #[test]
    fn refold_reproduces_integrators() {
        let out = run_clock(&default_preset(), 20.0).unwrap();
        assert_eq!(refold_integrators(&out.sides), out.summary.unwrap().integrators);
    }

    #[test]
    fn identical_seeds_replay() {
        let a = run_clock(&default_preset(), 5.0).unwrap();
        let b = run_clock(&default_preset(), 5.0).unwrap();
        assert_eq!(a.sides, b.sides);
        assert_eq!(a.frequency, b.frequency);
    }
}
