//! Random generation for the experiments (multivariate normal, standardized
//! uniform/exponential alternatives, banded-correlation designs) and the
//! accuracy / power harnesses.
//!
//! Every experiment is a pure function of (configuration, seed): replications
//! run on deterministic per-index ChaCha streams and results are reduced in
//! index order, so reruns are bit-identical at any thread count.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::GaussianParams;
use crate::null_approx::{
    asymptotic_moments, approx_ii_fit, chisq_quantile, empirical_upper_quantile, fit_chisq,
    gram_spectrum, monte_carlo_null, spec_quantile,
};
use crate::rng::{derive_seed, stream_rng};
use crate::statistic::{mmd_sq_statistic, sample_moments, Dataset, Engine};

/// Alternative distributions of the power study. Population mean is 0 and
/// population covariance is I (independent) or the banded matrix R.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gaussian,
    UniformStd,
    ExponentialStd,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::UniformStd => "uniform",
            Family::ExponentialStd => "exponential",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "uniform" => Ok(Family::UniformStd),
            "exponential" => Ok(Family::ExponentialStd),
            other => Err(Error::invalid(format!(
                "unknown family '{other}' (expected gaussian, uniform, exponential)"
            ))),
        }
    }
}

/// Coordinate dependence of the alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correlation {
    Independent,
    /// R_{ij} = (1/2)^{|i−j|} for |i−j| ≤ 5, else 0.
    BandedGeometric,
}

impl Correlation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Correlation::Independent => "independent",
            Correlation::BandedGeometric => "banded",
        }
    }
}

impl std::str::FromStr for Correlation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Correlation::Independent),
            "banded" | "banded-geometric" => Ok(Correlation::BandedGeometric),
            other => Err(Error::invalid(format!(
                "unknown correlation '{other}' (expected independent, banded)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AlternativeSpec {
    pub family: Family,
    pub d: usize,
    pub correlation: Correlation,
}

impl AlternativeSpec {
    pub fn new(family: Family, d: usize, correlation: Correlation) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(Self { family, d, correlation })
    }
}

/// The banded correlation matrix R_{ij} = (1/2)^{|i−j|}·1_{|i−j|≤5}.
pub fn banded_correlation(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| {
        let gap = i.abs_diff(j);
        if gap <= 5 {
            0.5f64.powi(gap as i32)
        } else {
            0.0
        }
    })
}

/// Symmetric PSD square root of the banded R. The truncated band is PD for
/// the dimensions used here; if an eigenvalue ever dips negative the
/// spectrum is clamped at 0, the diagonal renormalized to 1, and a warning
/// logged before taking the root.
fn banded_sqrt(d: usize) -> DMatrix<f64> {
    let r = banded_correlation(d);
    let eig = SymmetricEigen::new(r);
    let min = eig.eigenvalues.min();
    let mut values = eig.eigenvalues.clone();
    let vectors = eig.eigenvectors;
    if min < 0.0 {
        log::warn!("banded correlation (d = {d}) has negative eigenvalue {min:.3e}; clamping and renormalizing");
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
        let clamped = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
        let mut scale = DVector::zeros(d);
        for i in 0..d {
            scale[i] = 1.0 / clamped[(i, i)].sqrt();
        }
        let renorm = DMatrix::from_fn(d, d, |i, j| clamped[(i, j)] * scale[i] * scale[j]);
        let eig2 = SymmetricEigen::new(renorm);
        let mut v2 = eig2.eigenvalues;
        for v in v2.iter_mut() {
            *v = v.max(0.0).sqrt();
        }
        return &eig2.eigenvectors * DMatrix::from_diagonal(&v2) * eig2.eigenvectors.transpose();
    }
    for v in values.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &vectors * DMatrix::from_diagonal(&values) * vectors.transpose()
}

/// Draw n rows from N(m, Σ) as m + F·z, where F is the Cholesky factor of Σ
/// (symmetric eigen square root with clamped spectrum when Σ is singular).
pub fn sample_mvn<R: Rng>(params: &GaussianParams, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let d = params.dim();
    let factor = match params.cov().clone().cholesky() {
        Some(chol) => chol.l(),
        None => {
            let eig = SymmetricEigen::new(params.cov().clone());
            let mut values = eig.eigenvalues;
            for v in values.iter_mut() {
                *v = v.max(0.0).sqrt();
            }
            &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose()
        }
    };
    let mean = params.mean();
    let mut out = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for i in 0..n {
        for k in 0..d {
            z[k] = rng.sample(StandardNormal);
        }
        let row = mean + &factor * &z;
        out.row_mut(i).copy_from(&row.transpose());
    }
    Dataset::new(out)
}

/// Draw n rows from the alternative: i.i.d. standardized coordinates
/// (uniform: (U−1/2)√12, exponential: E−1, gaussian: standard normal),
/// multiplied by the symmetric square root of R in the banded case so the
/// population covariance is exactly R.
pub fn sample_alternative<R: Rng>(spec: &AlternativeSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let d = spec.d;
    let sqrt12 = 12.0f64.sqrt();
    let mut z = DMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            z[(i, j)] = match spec.family {
                Family::Gaussian => rng.sample(StandardNormal),
                Family::UniformStd => (rng.random::<f64>() - 0.5) * sqrt12,
                Family::ExponentialStd => {
                    let e: f64 = rng.sample(Exp1);
                    e - 1.0
                }
            };
        }
    }
    let values = match spec.correlation {
        Correlation::Independent => z,
        Correlation::BandedGeometric => z * banded_sqrt(d), // root is symmetric
    };
    Dataset::new(values)
}

/// Critical points of every requested engine against the Monte-Carlo
/// reference, with the accuracy metric 𝒟 = Σ_α |t_α(T) − t_α|.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyReport {
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Significance levels, fixed to (0.1, 0.05, 0.01).
    pub alphas: [f64; 3],
    /// Reference quantiles t_α of n·Δ̂² under N(0, I_d).
    pub reference: [f64; 3],
    pub engines: Vec<EngineAccuracy>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EngineAccuracy {
    pub engine: Engine,
    pub quantiles: [f64; 3],
    pub d_metric: f64,
    /// Median wall-clock seconds over 3 runs of the quantile computation.
    /// Not serialized: JSON output is byte-reproducible for a fixed seed,
    /// and wall-clock time is not. Text and CSV renderings include it.
    #[serde(skip_serializing)]
    pub seconds: f64,
}

/// Estimated rejection rate of one alternative at the 5% (or chosen) level.
#[derive(Debug, Clone, Serialize)]
pub struct PowerReport {
    pub family: Family,
    pub correlation: Correlation,
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub rejections: usize,
    pub replications: usize,
    pub power: f64,
    pub threshold: f64,
    pub threshold_source: Engine,
    pub null_iterations: usize,
    pub seed: u64,
}

/// How the power experiment obtains its critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ThresholdSource {
    /// t_α from simulating the statistic under N(0, I_d).
    MonteCarlo { null_iterations: usize },
    /// t_α from the closed-form moment fit. `refit` recomputes the fit from
    /// each replication's own Σ̂; otherwise one pilot dataset fixes it.
    MomentChisq { refit: bool },
    /// A precomputed critical value, e.g. one Monte-Carlo null shared across
    /// several alternatives; `source` records how it was obtained.
    Fixed { value: f64, source: Engine },
}

const ACCURACY_ALPHAS: [f64; 3] = [0.10, 0.05, 0.01];

// Stream labels so sibling draws inside one experiment never collide.
const LABEL_NULL: u64 = 1;
const LABEL_DATASET: u64 = 2;
const LABEL_GRAM_II: u64 = 3;
const LABEL_GRAM_SPEC: u64 = 4;
const LABEL_SPEC_DRAWS: u64 = 5;
const LABEL_REPLICATIONS: u64 = 6;
const LABEL_PILOT: u64 = 7;

/// Reproduce the critical-point comparison: Monte-Carlo reference quantiles
/// of n·Δ̂² under N(0, I_d), then each engine's quantiles computed from one
/// dataset of size n drawn from the same null.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_experiment(
    d: usize,
    n: usize,
    sigma: f64,
    engines: &[Engine],
    iterations: usize,
    l_ii: usize,
    l_spec: usize,
    spec_draws: usize,
    seed: u64,
) -> Result<AccuracyReport> {
    if iterations < 500 {
        return Err(Error::invalid("accuracy experiment needs at least 500 null iterations"));
    }
    let reference_params = GaussianParams::standard(d);
    let sims = monte_carlo_null(&reference_params, n, sigma, iterations, derive_seed(seed, LABEL_NULL))?;
    let reference = ACCURACY_ALPHAS.map(|a| empirical_upper_quantile(&sims, a));

    let mut data_rng = stream_rng(derive_seed(seed, LABEL_DATASET), 0);
    let dataset = sample_mvn(&reference_params, n, &mut data_rng)?;
    let fitted = sample_moments(&dataset)?;

    let mut reports = Vec::with_capacity(engines.len());
    for &engine in engines {
        let mut quantiles = [0.0; 3];
        let mut times = Vec::with_capacity(3);
        for _ in 0..3 {
            let start = Instant::now();
            quantiles = match engine {
                Engine::MomentChisq => {
                    let fit = fit_chisq(&asymptotic_moments(&fitted, sigma)?)?;
                    [
                        chisq_quantile(&fit, ACCURACY_ALPHAS[0])?,
                        chisq_quantile(&fit, ACCURACY_ALPHAS[1])?,
                        chisq_quantile(&fit, ACCURACY_ALPHAS[2])?,
                    ]
                }
                Engine::GramChisq => {
                    let mut rng = stream_rng(derive_seed(seed, LABEL_GRAM_II), 0);
                    let spec = gram_spectrum(&fitted, sigma, l_ii, &mut rng)?;
                    let fit = approx_ii_fit(&spec)?;
                    [
                        chisq_quantile(&fit, ACCURACY_ALPHAS[0])?,
                        chisq_quantile(&fit, ACCURACY_ALPHAS[1])?,
                        chisq_quantile(&fit, ACCURACY_ALPHAS[2])?,
                    ]
                }
                Engine::SpecSum => {
                    let mut rng = stream_rng(derive_seed(seed, LABEL_GRAM_SPEC), 0);
                    let spec = gram_spectrum(&fitted, sigma, l_spec, &mut rng)?;
                    let mut qs = [0.0; 3];
                    for (slot, alpha) in qs.iter_mut().zip(ACCURACY_ALPHAS) {
                        let mut draw_rng = stream_rng(derive_seed(seed, LABEL_SPEC_DRAWS), 0);
                        *slot = spec_quantile(&spec, alpha, spec_draws, &mut draw_rng)?;
                    }
                    qs
                }
                Engine::MonteCarlo => reference,
            };
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_unstable_by(f64::total_cmp);
        let d_metric = quantiles
            .iter()
            .zip(reference.iter())
            .map(|(q, r)| (q - r).abs())
            .sum();
        reports.push(EngineAccuracy { engine, quantiles, d_metric, seconds: times[1] });
    }

    Ok(AccuracyReport {
        d,
        n,
        sigma,
        iterations,
        seed,
        alphas: ACCURACY_ALPHAS,
        reference,
        engines: reports,
    })
}

/// Estimate power: a critical value at `alpha` from the chosen threshold
/// source, then the rejection frequency of n·Δ̂² over replications drawn
/// from the alternative.
pub fn power_experiment(
    spec: &AlternativeSpec,
    n: usize,
    sigma: f64,
    alpha: f64,
    replications: usize,
    threshold: ThresholdSource,
    seed: u64,
) -> Result<PowerReport> {
    if replications < 100 {
        return Err(Error::invalid("power experiment needs at least 100 replications"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let d = spec.d;

    let (fixed_threshold, threshold_source, null_iterations) = match threshold {
        ThresholdSource::MonteCarlo { null_iterations } => {
            let sims = monte_carlo_null(
                &GaussianParams::standard(d),
                n,
                sigma,
                null_iterations,
                derive_seed(seed, LABEL_NULL),
            )?;
            (Some(empirical_upper_quantile(&sims, alpha)), Engine::MonteCarlo, null_iterations)
        }
        ThresholdSource::MomentChisq { refit: false } => {
            let mut rng = stream_rng(derive_seed(seed, LABEL_PILOT), 0);
            let pilot = sample_mvn(&GaussianParams::standard(d), n, &mut rng)?;
            let fit = fit_chisq(&asymptotic_moments(&sample_moments(&pilot)?, sigma)?)?;
            (Some(chisq_quantile(&fit, alpha)?), Engine::MomentChisq, 0)
        }
        ThresholdSource::MomentChisq { refit: true } => (None, Engine::MomentChisq, 0),
        ThresholdSource::Fixed { value, source } => (Some(value), source, 0),
    };

    let rep_seed = derive_seed(seed, LABEL_REPLICATIONS);
    let outcomes = (0..replications as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(rep_seed, i);
            let data = sample_alternative(spec, n, &mut rng)?;
            let stat = n as f64 * mmd_sq_statistic(&data, sigma)?;
            let t = match fixed_threshold {
                Some(t) => t,
                None => {
                    let fit = fit_chisq(&asymptotic_moments(&sample_moments(&data)?, sigma)?)?;
                    chisq_quantile(&fit, alpha)?
                }
            };
            Ok((stat >= t, t))
        })
        .collect::<Result<Vec<(bool, f64)>>>()?;

    let rejections = outcomes.iter().filter(|(r, _)| *r).count();
    let reported_threshold = fixed_threshold.unwrap_or_else(|| outcomes[0].1);

    Ok(PowerReport {
        family: spec.family,
        correlation: spec.correlation,
        d,
        n,
        sigma,
        alpha,
        rejections,
        replications,
        power: rejections as f64 / replications as f64,
        threshold: reported_threshold,
        threshold_source,
        null_iterations,
        seed,
    })
}
