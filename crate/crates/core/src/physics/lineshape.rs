use std::f64::consts::{PI, TAU};

use crate::config::SpeciesParams;

use super::PLANCK;

/// Lamb-Dicke parameter `(1/lambda) sqrt(h / (2 m f_sec))`.
pub fn lamb_dicke(species: &SpeciesParams) -> f64 {
    (PLANCK / (2.0 * species.mass_kg * species.secular_frequency_hz)).sqrt()
        / species.clock_wavelength_m
}

/// Thermal occupation of the probed motional mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalState {
    pub nbar: f64,
    pub eta: f64,
    pub n_max: usize,
}

impl ThermalState {
    /// Truncates the Fock sum at `max(50 nbar, 200)`.
    pub fn new(nbar: f64, eta: f64) -> Self {
        assert!(nbar >= 0.0, "nbar must be non-negative");
        assert!((0.0..1.0).contains(&eta), "eta must lie in [0, 1)");
        let n_max = ((50.0 * nbar).ceil() as usize).max(200);
        Self { nbar, eta, n_max }
    }

    pub fn with_cutoff(nbar: f64, eta: f64, n_max: usize) -> Self {
        Self { nbar, eta, n_max }
    }

    /// Thermal weights `p_n = nbar^n / (nbar+1)^(n+1)` for `n = 0..=n_max`.
    pub fn weights(&self) -> impl Iterator<Item = f64> {
        let ratio = self.nbar / (self.nbar + 1.0);
        let mut w = 1.0 / (self.nbar + 1.0);
        (0..=self.n_max).map(move |_| {
            let out = w;
            w *= ratio;
            out
        })
    }

    /// Carrier Rabi frequency of Fock state `n`.
    pub fn rabi_n(&self, rabi0: f64, n: usize) -> f64 {
        rabi0 * (1.0 - self.eta * self.eta * (n as f64 + 0.5))
    }
}

/// One probe pulse as seen by the atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeContext {
    /// Probe minus atomic resonance, Hz.
    pub detuning: f64,
    /// Pulse length, s.
    pub duration: f64,
    /// Bare carrier Rabi frequency, rad/s.
    pub rabi_freq: f64,
}

/// Thermally averaged probability that the ion ends shelved.
///
/// Each Fock term uses the generalized Rabi formula with carrier frequency
/// `Omega_n = Omega_0 (1 - eta^2 (n + 1/2))`; on resonance this reduces to
/// the dephasing model fitted to Rabi flops.
pub fn shelving_probability(ctx: &ProbeContext, thermal: &ThermalState, contrast: f64, bias: f64) -> f64 {
    shelving_probability_with_cutoff(ctx, thermal, contrast, bias)
}

/// Same as [`shelving_probability`]; the name makes explicit that the sum
/// runs to `thermal.n_max` and no further.
pub fn shelving_probability_with_cutoff(
    ctx: &ProbeContext,
    thermal: &ThermalState,
    contrast: f64,
    bias: f64,
) -> f64 {
    let delta = TAU * ctx.detuning;
    let delta2 = delta * delta;
    let t = ctx.duration;
    let mut sum = 0.0;
    for (n, w) in thermal.weights().enumerate() {
        let omega_n = thermal.rabi_n(ctx.rabi_freq, n);
        let om2 = omega_n * omega_n;
        let gen2 = om2 + delta2;
        if gen2 > 0.0 {
            sum += w * (om2 / gen2) * (1.0 - (gen2.sqrt() * t).cos());
        }
    }
    (bias + 0.5 * contrast * sum).clamp(0.0, 1.0)
}

/// Geometric-series closed form of the on-resonance thermal sum.
pub fn closed_form_onres(t: f64, contrast: f64, rabi0: f64, nbar: f64, bias: f64, eta: f64) -> f64 {
    let den = (nbar + 1.0) - 2.0 * nbar * (rabi0 * eta * eta * t).cos() + nbar * nbar / (nbar + 1.0);
    closed_form_with_denominator(t, contrast, rabi0, nbar, bias, eta, den)
}

/// The closed form with the denominator's last term written `nbar/(nbar+1)`
/// instead of `nbar^2/(nbar+1)`. Kept only to demonstrate that it fails the
/// `P(0) = bias` limit.
pub fn linear_tail_closed_form_onres(t: f64, contrast: f64, rabi0: f64, nbar: f64, bias: f64, eta: f64) -> f64 {
    let den = (nbar + 1.0) - 2.0 * nbar * (rabi0 * eta * eta * t).cos() + nbar / (nbar + 1.0);
    closed_form_with_denominator(t, contrast, rabi0, nbar, bias, eta, den)
}

fn closed_form_with_denominator(
    t: f64,
    contrast: f64,
    rabi0: f64,
    nbar: f64,
    bias: f64,
    eta: f64,
    den: f64,
) -> f64 {
    let r = nbar / (nbar + 1.0);
    let phi = rabi0 * eta * eta * t;
    let theta = rabi0 * t * (1.0 - 0.5 * eta * eta);
    // Re[(1 - r e^{i phi}) e^{i theta}]
    let re = (1.0 - r * phi.cos()) * theta.cos() + r * phi.sin() * theta.sin();
    (bias + 0.5 * contrast * (1.0 - re / den)).clamp(0.0, 1.0)
}

/// `FWHM * T` of the pi-pulse Rabi lineshape `sin^2(pi/2 sqrt(1+x^2)) / (1+x^2)`
/// with `x = 2 delta T`, found by bisection on the half-maximum.
pub fn rabi_lineshape_fwhm_product() -> f64 {
    let p = |u: f64| {
        let x2 = 4.0 * u * u;
        let s = (0.5 * PI * (1.0 + x2).sqrt()).sin();
        s * s / (1.0 + x2)
    };
    let (mut lo, mut hi) = (0.0_f64, 0.8_f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if p(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + hi
}

/// Shelving probability versus detuning for one site and pulse, tabulated
/// for fast lookup inside the servo loop.
#[derive(Debug, Clone)]
pub struct LineshapeTable {
    step: f64,
    values: Vec<f64>,
    ctx: ProbeContext,
    thermal: ThermalState,
    contrast: f64,
    bias: f64,
}

impl LineshapeTable {
    /// Tabulates `|detuning| <= span` with `points` samples. The lineshape is
    /// even in detuning, so only the non-negative half is stored.
    pub fn new(
        duration: f64,
        rabi_freq: f64,
        thermal: ThermalState,
        contrast: f64,
        bias: f64,
        span: f64,
        points: usize,
    ) -> Self {
        assert!(points >= 2 && span > 0.0);
        let step = span / (points - 1) as f64;
        let ctx = ProbeContext {
            detuning: 0.0,
            duration,
            rabi_freq,
        };
        let values = (0..points)
            .map(|i| {
                let c = ProbeContext {
                    detuning: i as f64 * step,
                    ..ctx
                };
                shelving_probability(&c, &thermal, contrast, bias)
            })
            .collect();
        Self {
            step,
            values,
            ctx,
            thermal,
            contrast,
            bias,
        }
    }

    pub fn span(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// Linear interpolation inside the table, direct evaluation outside.
    pub fn probability(&self, detuning: f64) -> f64 {
        let x = detuning.abs() / self.step;
        let i = x.floor() as usize;
        if i + 1 < self.values.len() {
            let frac = x - i as f64;
            self.values[i] + frac * (self.values[i + 1] - self.values[i])
        } else {
            let c = ProbeContext {
                detuning,
                ..self.ctx
            };
            shelving_probability(&c, &self.thermal, self.contrast, self.bias)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::ATOMIC_MASS_UNIT;
    use proptest::prelude::*;

    fn species(mass: f64, fsec: f64) -> SpeciesParams {
        SpeciesParams {
            mass_kg: mass,
            clock_wavelength_m: 435.5e-9,
            clock_frequency_hz: None,
            secular_frequency_hz: fsec,
        }
    }

    /// Independent oracle: straight sum of Fock terms with explicit powers.
    fn brute_force_onres(t: f64, a: f64, rabi0: f64, nbar: f64, c: f64, eta: f64, n_max: usize) -> f64 {
        let mut s = 0.0;
        for n in 0..=n_max {
            let pn = (n as f64 * (nbar / (nbar + 1.0)).ln()).exp() / (nbar + 1.0);
            let om = rabi0 * (1.0 - eta * eta * (n as f64 + 0.5));
            s += pn * (1.0 - (om * t).cos());
        }
        c + 0.5 * a * s
    }

    #[test]
    fn lamb_dicke_for_yb171() {
        let eta = lamb_dicke(&species(2.8385e-25, 1.02e6));
        assert!((eta - 0.0777).abs() < 5e-4, "eta = {eta}");
        let m = 170.936_331_5 * ATOMIC_MASS_UNIT;
        let base = lamb_dicke(&species(m, 1.02e6));
        assert!((lamb_dicke(&species(m, 4.08e6)) / base - 0.5).abs() < 1e-12);
        assert!((lamb_dicke(&species(4.0 * m, 1.02e6)) / base - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_duration_gives_bias() {
        let th = ThermalState::new(28.0, 0.0777);
        let ctx = ProbeContext {
            detuning: 123.0,
            duration: 0.0,
            rabi_freq: TAU * 5002.0,
        };
        assert_eq!(shelving_probability(&ctx, &th, 0.8, 0.09), 0.09);
        assert!((closed_form_onres(0.0, 0.8, TAU * 5002.0, 28.0, 0.09, 0.0777) - 0.09).abs() < 1e-12);
    }

    #[test]
    fn perfect_pi_pulse() {
        let rabi = TAU * 5000.0;
        let th = ThermalState::new(0.0, 0.0);
        let ctx = ProbeContext {
            detuning: 0.0,
            duration: PI / rabi,
            rabi_freq: rabi,
        };
        assert!((shelving_probability(&ctx, &th, 1.0, 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn site1_matches_brute_force_sum() {
        let (a, rabi, nbar, c, eta) = (0.80, TAU * 5002.0, 28.0, 0.09, 0.0777);
        let th = ThermalState::new(nbar, eta);
        let ctx = ProbeContext {
            detuning: 0.0,
            duration: 500e-6,
            rabi_freq: rabi,
        };
        let expect = brute_force_onres(500e-6, a, rabi, nbar, c, eta, 5000);
        let got = shelving_probability(&ctx, &th, a, c);
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn closed_form_single_fock_term() {
        let (a, rabi, c, eta) = (0.8, TAU * 5000.0, 0.1, 0.08);
        for &t in &[0.0, 37e-6, 150e-6, 1e-3] {
            let expect = c + 0.5 * a * (1.0 - (rabi * (1.0 - eta * eta / 2.0) * t).cos());
            assert!((closed_form_onres(t, a, rabi, 0.0, c, eta) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_site3_matches_oracle() {
        let (a, rabi, nbar, c, eta) = (0.85, TAU * 5005.0, 37.0, 0.10, 0.0777);
        let expect = brute_force_onres(200e-6, a, rabi, nbar, c, eta, 5000);
        assert!((closed_form_onres(200e-6, a, rabi, nbar, c, eta) - expect).abs() < 1e-6);
    }

    #[test]
    fn closed_form_agrees_with_sum_on_grid() {
        let eta = 0.0777;
        for &nbar in &[0.0, 1.0, 28.0, 37.0] {
            let th = ThermalState::new(nbar, eta);
            for k in 0..=200 {
                let t = 2e-3 * k as f64 / 200.0;
                let ctx = ProbeContext {
                    detuning: 0.0,
                    duration: t,
                    rabi_freq: TAU * 5000.0,
                };
                let sum = shelving_probability(&ctx, &th, 0.8, 0.09);
                let closed = closed_form_onres(t, 0.8, TAU * 5000.0, nbar, 0.09, eta);
                assert!((sum - closed).abs() < 1e-6, "nbar={nbar} t={t}");
            }
        }
    }

    #[test]
    fn linear_tail_denominator_breaks_initial_condition() {
        let p0 = linear_tail_closed_form_onres(0.0, 0.8, TAU * 5002.0, 28.0, 0.09, 0.0777);
        assert!((p0 - 0.09).abs() > 1e-3);
    }

    #[test]
    fn far_detuning_returns_bias() {
        let th = ThermalState::new(28.0, 0.0777);
        let ctx = ProbeContext {
            detuning: 1e6,
            duration: 0.96e-3,
            rabi_freq: PI / 0.96e-3,
        };
        assert!((shelving_probability(&ctx, &th, 0.8, 0.09) - 0.09).abs() < 1e-5);
    }

    #[test]
    fn fwhm_product_matches_known_value() {
        assert!((rabi_lineshape_fwhm_product() - 0.79869).abs() < 1e-4);
    }

    #[test]
    fn table_tracks_direct_evaluation() {
        let th = ThermalState::new(31.0, 0.0777);
        let t = 0.963e-3;
        let table = LineshapeTable::new(t, PI / t, th, 0.86, 0.08, 6000.0, 6001);
        for &d in &[0.0, -3.3, 123.4, -414.6, 999.9, 5999.0, -7000.0] {
            let ctx = ProbeContext {
                detuning: d,
                duration: t,
                rabi_freq: PI / t,
            };
            let direct = shelving_probability(&ctx, &th, 0.86, 0.08);
            assert!((table.probability(d) - direct).abs() < 2e-6, "d={d}");
        }
    }

    proptest! {
        #[test]
        fn probability_in_unit_interval(
            det in -5e4f64..5e4,
            dur in 0.0f64..3e-3,
            rabi_hz in 10.0f64..2e4,
            nbar in 0.0f64..40.0,
            eta in 0.0f64..0.2,
            contrast in 0.01f64..1.0,
            bias_frac in 0.0f64..1.0,
        ) {
            let bias = bias_frac * (1.0 - contrast);
            let th = ThermalState::new(nbar, eta);
            let ctx = ProbeContext { detuning: det, duration: dur, rabi_freq: TAU * rabi_hz };
            let p = shelving_probability(&ctx, &th, contrast, bias);
            prop_assert!((0.0..=1.0).contains(&p));
            let mirrored = ProbeContext { detuning: -det, ..ctx };
            prop_assert_eq!(p, shelving_probability(&mirrored, &th, contrast, bias));
        }
    }
}
