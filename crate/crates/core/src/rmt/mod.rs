//! Limiting squared-singular-value density of products of independent
//! Gaussian matrices, and Monte-Carlo spectra to compare it against.

mod density;
mod spectrum;

pub use density::{
    density, ks_distance, marchenko_pastur_cdf, marchenko_pastur_density, phi_of_x, x_of_phi, FussCatalanDensity,
    PHI_TOL,
};
pub use spectrum::{
    condition_report, sample_product_spectrum, ConditionReport, ConditionRow, ConditionSummary, SpectrumSample,
    LAMBDA_FLOOR,
};
