//! Testing multivariate normality with the Maximum Mean Discrepancy.
//!
//! Given i.i.d. observations Y₁,…,Yₙ in R^d and the Gaussian kernel
//! k(s, t) = exp(−σ‖s−t‖²), the squared MMD between the empirical measure
//! and the fitted Gaussian N(m̂, Σ̂) has a closed form, and n·Δ̂² converges
//! under normality to a weighted sum of chi-squared variables. This crate
//! provides:
//!
//! - the exact statistic ([`statistic::mmd_sq_statistic`]) and kernel-scale
//!   rules (median heuristic, dimension powers),
//! - closed-form first and second moments of the limiting null distribution
//!   ([`null_approx::asymptotic_mean`], [`null_approx::asymptotic_variance`]),
//! - four interchangeable null-quantile engines: the moment-matched c·χ²_r
//!   fit, a Gram-spectrum variant, a weighted chi-squared sampler, and a
//!   parametric-bootstrap Monte Carlo ([`null_approx::normality_test`]),
//! - a simulation harness for accuracy and power studies
//!   ([`simulation::accuracy_experiment`], [`simulation::power_experiment`]).
//!
//! All simulation entry points are deterministic functions of their seed:
//! parallel replications run on per-index ChaCha streams and reduce in index
//! order, so results do not depend on thread count.

pub mod error;
pub mod kernel;
pub mod null_approx;
pub mod rng;
pub mod simulation;
pub mod special;
pub mod statistic;

pub use error::{Error, Result};
pub use kernel::{
    b_matrix, embed_gaussian, embedding_norm_sq, f_inner, gaussian_kernel, EmbeddingContext,
    FInnerContext, GaussianParams, KernelConfig, PreparedPoint, SigmaRule,
};
pub use null_approx::{
    approx_ii_fit, asymptotic_mean, asymptotic_moments, asymptotic_variance, chisq_quantile,
    empirical_p_value, empirical_upper_quantile, fit_chisq, gram_spectrum, monte_carlo_null,
    normality_test, p_value, spec_quantile, ChiSqFit, EngineOptions, MomentPair, SpectralEstimate,
};
pub use simulation::{
    accuracy_experiment, banded_correlation, power_experiment, sample_alternative, sample_mvn,
    AccuracyReport, AlternativeSpec, Correlation, EngineAccuracy, Family, PowerReport,
    ThresholdSource,
};
pub use statistic::{
    bandwidth_dim_power, bandwidth_median, mmd_sq_statistic, sample_moments, Dataset, Engine,
    TestResult,
};
