//! Closed-form limit of the LIME explanation and the oracles that check it.

pub mod alpha;
pub mod beta;
pub mod bounds;
pub mod moments;
pub mod sigma;

pub use alpha::{alpha, alpha_bruteforce, alpha_gen, binomial_half_pmf, AlphaTable, MAX_ENUMERATION_D};
pub use beta::{
    beta_from_moments, beta_from_moments_matrix, beta_infinity, beta_linear, beta_shape_detector,
    shape_detector_moments, Estimator,
};
pub use bounds::{combinatorial_v, min_sample_size};
pub use moments::{all_masks, enumerated_batch, moments_exact, moments_monte_carlo, MomentSource, MomentVector};
pub use sigma::{sigma_inverse, sigma_inverse_from, sigma_matrix, sigma_set, CovarianceMatrix, SigmaSet};
