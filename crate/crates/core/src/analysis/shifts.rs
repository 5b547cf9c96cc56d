use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::config::ServoConfig;
use crate::registry::{Named, Registry};
use crate::servo::ReportRecord;

/// First-order correction of integrator 1 attributed to one report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSample {
    pub period: u64,
    pub group: String,
    pub df1_shift_hz: f64,
}

/// Which reports and which sites form a shift group.
pub trait ShiftRestriction: Named + Send + Sync {
    /// Samples taken from `rep`, given that presence was unchanged since the
    /// previous report.
    fn samples(&self, rep: &ReportRecord, quantum_hz: f64) -> Vec<ShiftSample>;
}

fn present_sites(rep: &ReportRecord) -> Vec<usize> {
    (0..rep.present.len()).filter(|&s| rep.present[s]).collect()
}

fn site_shift(rep: &ReportRecord, site: usize, quantum_hz: f64) -> f64 {
    quantum_hz * rep.sums[site].imbalance(0) as f64
}

/// Periods with exactly one ion, grouped by its site.
struct SingleIon;

impl Named for SingleIon {
    fn name(&self) -> &'static str {
        "single-ion"
    }
}

impl ShiftRestriction for SingleIon {
    fn samples(&self, rep: &ReportRecord, q: f64) -> Vec<ShiftSample> {
        match present_sites(rep).as_slice() {
            [s] => vec![ShiftSample {
                period: rep.period,
                group: format!("site {}", s + 1),
                df1_shift_hz: site_shift(rep, *s, q),
            }],
            _ => Vec::new(),
        }
    }
}

/// Every present site's own contribution, grouped by site.
struct PerSite;

impl Named for PerSite {
    fn name(&self) -> &'static str {
        "per-site"
    }
}

impl ShiftRestriction for PerSite {
    fn samples(&self, rep: &ReportRecord, q: f64) -> Vec<ShiftSample> {
        present_sites(rep)
            .into_iter()
            .map(|s| ShiftSample {
                period: rep.period,
                group: format!("site {}", s + 1),
                df1_shift_hz: site_shift(rep, s, q),
            })
            .collect()
    }
}

/// The whole report, grouped by which sites were present.
struct PresentSet;

impl Named for PresentSet {
    fn name(&self) -> &'static str {
        "present-set"
    }
}

impl ShiftRestriction for PresentSet {
    fn samples(&self, rep: &ReportRecord, q: f64) -> Vec<ShiftSample> {
        let sites = present_sites(rep);
        if sites.is_empty() {
            return Vec::new();
        }
        let key = sites.iter().map(|s| (s + 1).to_string()).collect::<Vec<_>>().join(",");
        let total: f64 = sites.iter().map(|&s| site_shift(rep, s, q)).sum();
        vec![ShiftSample {
            period: rep.period,
            group: format!("{{{key}}}"),
            df1_shift_hz: total,
        }]
    }
}

pub fn shift_registry() -> &'static Registry<dyn ShiftRestriction> {
    static REG: OnceLock<Registry<dyn ShiftRestriction>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn ShiftRestriction> = Registry::new();
        r.register(Arc::new(SingleIon));
        r.register(Arc::new(PerSite));
        r.register(Arc::new(PresentSet));
        r
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftGroup {
    pub group: String,
    pub count: usize,
    pub mean_hz: f64,
    pub stderr_hz: f64,
    /// Mean over standard error.
    pub z: f64,
    /// `|z| > 3`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub restriction: String,
    /// One integrator count of first-order correction, `g1 FWHM`, Hz.
    pub quantum_hz: f64,
    pub groups: Vec<ShiftGroup>,
    pub skipped_reports: usize,
}

/// Per-report first-order shifts `g1 (s_R - s_L) FWHM` of integrator 1,
/// grouped by `restriction`. Reports whose presence flags differ from the
/// previous report, or that flagged a loss, are skipped.
pub fn first_order_shifts(
    reports: &[ReportRecord],
    servo: &ServoConfig,
    restriction: &dyn ShiftRestriction,
) -> ShiftReport {
    let q = servo.gain1 * servo.fwhm_hz;
    let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut skipped = 0;
    let mut prev: Option<&ReportRecord> = None;
    for rep in reports {
        let stable = prev.is_some_and(|p| p.present == rep.present) && rep.lost.is_empty();
        prev = Some(rep);
        if !stable {
            skipped += 1;
            continue;
        }
        for s in restriction.samples(rep, q) {
            by_group.entry(s.group).or_default().push(s.df1_shift_hz);
        }
    }
    let groups = by_group
        .into_iter()
        .map(|(group, v)| {
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let stderr = (var / n as f64).sqrt();
            let z = if stderr > 0.0 { mean / stderr } else { 0.0 };
            ShiftGroup {
                group,
                count: n,
                mean_hz: mean,
                stderr_hz: stderr,
                z,
                flagged: z.abs() > 3.0,
            }
        })
        .collect();
    ShiftReport {
        restriction: restriction.name().to_owned(),
        quantum_hz: q,
        groups,
        skipped_reports: skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_preset;
    use crate::servo::{IntegratorState, SiteSums};

    fn report(period: u64, sums: Vec<SiteSums>, present: Vec<bool>) -> ReportRecord {
        ReportRecord {
            period,
            timestamp_s: period as f64 * 0.47,
            sums,
            present,
            lost: vec![],
            df1_hz: 0.0,
            df2_hz: 0.0,
            integrators: [IntegratorState::default(); 2],
        }
    }

    #[test]
    fn balanced_sides_give_zero_and_one_count_gives_quantum() {
        let servo = default_preset().servo().clone();
        let single = shift_registry().get("single-ion").unwrap();
        let bal = SiteSums { r: [7, 0], l: [7, 0] };
        let one = SiteSums { r: [8, 0], l: [7, 0] };
        let empty = SiteSums::default();
        let reps = vec![
            report(0, vec![bal, empty], vec![true, false]),
            report(1, vec![bal, empty], vec![true, false]),
            report(2, vec![one, empty], vec![true, false]),
        ];
        let r = first_order_shifts(&reps, &servo, single.as_ref());
        assert_eq!(r.skipped_reports, 1);
        let g = &r.groups[0];
        assert_eq!(g.group, "site 1");
        assert_eq!(g.count, 2);
        assert!((g.mean_hz - 1.75 / 2.0).abs() < 0.01);
        assert!((r.quantum_hz - 1.75).abs() < 0.01);
    }

    #[test]
    fn presence_change_is_skipped() {
        let servo = default_preset().servo().clone();
        let per = shift_registry().get("per-site").unwrap();
        let s = SiteSums { r: [3, 0], l: [1, 0] };
        let reps = vec![
            report(0, vec![s, s], vec![true, true]),
            report(1, vec![s, s], vec![true, false]),
            report(2, vec![s, s], vec![true, false]),
        ];
        let r = first_order_shifts(&reps, &servo, per.as_ref());
        assert_eq!(r.skipped_reports, 2);
        assert_eq!(r.groups.len(), 1);
        assert_eq!(r.groups[0].count, 1);
    }
}
