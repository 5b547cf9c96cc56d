//! Atomic response of a trapped ion: thermally dephased shelving, photon
//! counting and the loss / dark-state processes.

mod detection;
mod ion;
mod lineshape;

pub use detection::{
    misread_bright_as_dark, misread_dark_as_bright, poisson_cdf, simulate_detection,
    DetectionModel, DetectionSample,
};
pub(crate) use detection::apply_prep_error;
pub use ion::{evolve_ion, IonRates, IonState};
pub use lineshape::{
    closed_form_onres, lamb_dicke, linear_tail_closed_form_onres, rabi_lineshape_fwhm_product,
    shelving_probability, shelving_probability_with_cutoff, LineshapeTable, ProbeContext,
    ThermalState,
};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
