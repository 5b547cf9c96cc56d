use clocksim_core::analysis::{fit_white_fm, log_spaced_taus, overlapping_adev};
use clocksim_core::config::load_config;
use clocksim_core::lo::{LoNoise, NoiseSpec};
use clocksim_core::output::{read_jsonl, read_manifest_hash, JsonlWriter};
use clocksim_core::physics::DetectionModel;
use clocksim_core::rng::{substream, Substream};
use clocksim_core::servo::{Clock, ClockObserver, ReportRecord, Side, SideRecord};
use clocksim_core::{default_preset, run_clock, ValidatedConfig};
use proptest::prelude::*;

const NU: f64 = 6.883868e14;
const STEP: f64 = 5.875e-3;

fn fractional(series: &[f64]) -> Vec<f64> {
    series.iter().map(|hz| hz / NU).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn white_fm_level_is_recovered(level in 1e-15f64..1e-13, seed in any::<u64>()) {
        let spec = NoiseSpec { white_fm: level, ..NoiseSpec::quiet() };
        let y = fractional(&LoNoise::new(&spec, NU, STEP, seed).take_series(200_000));
        let curve = overlapping_adev(&y, STEP, &log_spaced_taus(0.1, 100.0, 8));
        let a = fit_white_fm(&curve, 0.1, 100.0, 10).unwrap().a;
        prop_assert!((a / level - 1.0).abs() < 0.1, "{a} vs {level}");
    }

    #[test]
    fn random_walk_grows_as_sqrt_tau(level in 1e-16f64..1e-14, seed in any::<u64>()) {
        let spec = NoiseSpec { random_walk_fm: level, ..NoiseSpec::quiet() };
        let y = fractional(&LoNoise::new(&spec, NU, STEP, seed).take_series(400_000));
        let curve = overlapping_adev(&y, STEP, &[0.5, 5.0]);
        let (s1, s2) = (curve.points[0].sigma, curve.points[1].sigma);
        let slope = (s2 / s1).log10();
        prop_assert!((slope - 0.5).abs() < 0.12, "slope {slope}");
        // sigma_y(0.5 s) = level sqrt(0.5)
        prop_assert!((s1 / (level * 0.5f64.sqrt()) - 1.0).abs() < 0.2);
    }

    #[test]
    fn detection_counts_have_poisson_mean(
        bright in 100.0f64..5000.0,
        dark in 0.0f64..500.0,
        seed in any::<u64>(),
    ) {
        let mut site = default_preset().sites()[0];
        site.bright_rate_cps = bright;
        site.dark_rate_cps = dark;
        let model = DetectionModel::new(&site, 3e-3, 2);
        let mut rng = substream(seed, Substream::Detection);
        for is_bright in [true, false] {
            let n = 20_000;
            let total: u64 = (0..n).map(|_| model.sample(is_bright, &mut rng).counts).sum();
            let mean = model.mean_counts(is_bright);
            let got = total as f64 / n as f64;
            let se = (mean / n as f64).sqrt();
            prop_assert!((got - mean).abs() <= 5.0 * se + 1e-12, "{got} vs {mean}");
        }
    }
}

/// Collects the side log only.
#[derive(Default)]
struct Sides(Vec<SideRecord>);

impl ClockObserver for Sides {
    fn side(&mut self, rec: &SideRecord) {
        self.0.push(rec.clone());
    }
}

/// Right-minus-left bright counts with a servo too weak to move, and the
/// binomial standard error of that difference.
fn open_loop_imbalance(offset_hz: f64, seconds: f64) -> (f64, f64) {
    let cfg: ValidatedConfig = default_preset()
        .modified(|c| {
            c.simulation.loss_enabled = false;
            c.simulation.loader_enabled = false;
            c.simulation.lo_noise.deterministic_offset_hz = offset_hz;
            c.servo.gain1 = 1e-12;
            c.servo.gain2 = 1e-15;
        })
        .unwrap();
    let mut obs = Sides::default();
    Clock::new(&cfg).run(seconds, &mut obs).unwrap();
    let (mut r, mut l, mut nr, mut nl) = (0.0, 0.0, 0.0, 0.0);
    for rec in &obs.0 {
        let bright: f64 = rec.n.iter().flatten().map(|&v| v as f64).sum();
        let probes = rec.n.iter().flatten().count() as f64;
        match rec.side {
            Side::Right => (r, nr) = (r + bright, nr + probes),
            Side::Left => (l, nl) = (l + bright, nl + probes),
        }
    }
    let (pr, pl) = (r / nr, l / nl);
    let se = (pr * (1.0 - pr) / nr + pl * (1.0 - pl) / nl).sqrt();
    (pr - pl, se)
}

#[test]
fn perfect_lock_is_balanced() {
    // About 10^4 probes per side.
    let (diff, se) = open_loop_imbalance(0.0, 60.0);
    assert!(diff.abs() <= 3.0 * se, "{diff} +/- {se}");
}

#[test]
fn positive_lo_error_gives_positive_imbalance() {
    let fwhm = default_preset().servo().fwhm_hz;
    let (diff, se) = open_loop_imbalance(fwhm / 4.0, 60.0);
    assert!(diff > 5.0 * se, "{diff} +/- {se}");
}

#[test]
fn servo_tracks_lo_offset_on_average() {
    let cfg = default_preset()
        .modified(|c| {
            c.simulation.loss_enabled = false;
            c.simulation.lo_noise.deterministic_offset_hz = 20.0;
        })
        .unwrap();
    let out = run_clock(&cfg, 600.0).unwrap();
    let tail = &out.frequency[out.frequency.len() / 2..];
    let m1 = tail.iter().map(|s| s.df1_hz).sum::<f64>() / tail.len() as f64;
    let m2 = tail.iter().map(|s| s.df2_hz).sum::<f64>() / tail.len() as f64;
    assert!((m1 - 20.0).abs() < 2.0 && (m2 - 20.0).abs() < 2.0, "{m1} {m2}");
}

#[test]
fn config_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("clocksim-props-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("preset.toml");
    let preset = default_preset();
    std::fs::write(&path, preset.to_toml()).unwrap();
    let loaded = load_config(&path).unwrap();
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(loaded.config(), preset.config());
}

#[test]
fn report_stream_round_trips_through_jsonl() {
    let out = run_clock(&default_preset(), 5.0).unwrap();
    let mut w = JsonlWriter::new(Vec::new(), Some("abc123")).unwrap();
    for r in &out.reports {
        w.write(r).unwrap();
    }
    let bytes = w.into_inner();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(read_manifest_hash(&text).as_deref(), Some("abc123"));
    let back: Vec<ReportRecord> = read_jsonl(bytes.as_slice()).unwrap();
    assert_eq!(back, out.reports);
}
