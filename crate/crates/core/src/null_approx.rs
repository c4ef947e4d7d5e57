//! The asymptotic null distribution Z = Σ λ_ℓ Z_ℓ² of n·Δ̂²: closed-form
//! first and second moments, the single scaled chi-squared fit, the
//! Gram-matrix spectral route, Monte-Carlo null quantiles, and p-values.
//!
//! Both moments depend on Σ₀ only through its eigenvalues: every term is a
//! trace of a power of (I + cσΣ₀)^{−1}Σ₀ or a determinant of I + cσΣ₀, so
//! they are evaluated from one symmetric eigendecomposition in log space.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{check_sigma, EmbeddingContext, FInnerContext, GaussianParams};
use crate::rng::stream_rng;
use crate::simulation::sample_mvn;
use crate::statistic::{mmd_sq_statistic, sample_moments, Dataset, Engine, TestResult};
use crate::special::{gamma_p_inv, gamma_q};

/// First two moments of Z: E[Z] = Σλ_ℓ and V[Z] = 2Σλ_ℓ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentPair {
    pub e_z: f64,
    pub v_z: f64,
}

impl MomentPair {
    pub fn new(e_z: f64, v_z: f64) -> Result<Self> {
        if !(e_z > 0.0) || !e_z.is_finite() {
            return Err(Error::invalid(format!("E[Z] must be positive, got {e_z}")));
        }
        if !(v_z > 0.0) || !v_z.is_finite() {
            return Err(Error::invalid(format!("V[Z] must be positive, got {v_z}")));
        }
        Ok(Self { e_z, v_z })
    }
}

/// The fitted c·χ²_r approximation (fractional degrees of freedom allowed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSqFit {
    pub c: f64,
    pub r: f64,
}

/// Eigenvalues of the Gram matrix 𝒢_L plus its trace invariants.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralEstimate {
    /// λ̂₁ ≥ λ̂₂ ≥ …, negatives clamped to 0.
    pub eigenvalues: Vec<f64>,
    /// tr 𝒢_L
    pub gram_trace: f64,
    /// tr 𝒢_L², computed as the squared Frobenius norm, not from eigenvalues.
    pub gram_sq_trace: f64,
    pub l: usize,
}

impl SpectralEstimate {
    /// Synthetic spectrum with trace invariants derived from the eigenvalues.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("spectrum must contain at least one eigenvalue"));
        }
        if eigenvalues.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("eigenvalues must be finite and nonnegative"));
        }
        eigenvalues.sort_unstable_by(|a, b| b.total_cmp(a));
        let gram_trace = eigenvalues.iter().sum();
        let gram_sq_trace = eigenvalues.iter().map(|v| v * v).sum();
        let l = eigenvalues.len();
        Ok(Self { eigenvalues, gram_trace, gram_sq_trace, l })
    }
}

/// Eigenvalues of Σ₀, reused by both moment formulas.
fn cov_eigenvalues(params: &GaussianParams) -> Vec<f64> {
    params.cov().symmetric_eigenvalues().iter().copied().collect()
}

fn e_z_from_eigenvalues(mu: &[f64], sigma: f64) -> f64 {
    // 1 − |2V−I|^{−1/2}{1 + 2σt₁ + 2σ²t₁² + 4σ²t₂},
    // tₖ = tr[((I+4σΣ₀)^{−1}Σ₀)^k] since V + 2σΣ₀ = 2V − I = I + 4σΣ₀.
    let mut logdet = 0.0;
    let mut t1 = 0.0;
    let mut t2 = 0.0;
    for &m in mu {
        let ratio = m / (1.0 + 4.0 * sigma * m);
        logdet += (4.0 * sigma * m).ln_1p();
        t1 += ratio;
        t2 += ratio * ratio;
    }
    1.0 - (-0.5 * logdet).exp()
        * (1.0 + 2.0 * sigma * t1 + 2.0 * sigma * sigma * t1 * t1 + 4.0 * sigma * sigma * t2)
}

fn v_z_from_eigenvalues(mu: &[f64], sigma: f64) -> f64 {
    // Three blocks: 2|I+8σΣ₀|^{−1/2} − 4|V|^{−1/2}|V+4σΣ₀|^{−1/2}{…}
    // + 2|V+2σΣ₀|^{−1}{…}, with V = I+2σΣ₀, V+4σΣ₀ = I+6σΣ₀,
    // V+2σΣ₀ = I+4σΣ₀.
    let (mut ld8, mut ld2, mut ld6, mut ld4) = (0.0, 0.0, 0.0, 0.0);
    let (mut g1, mut g2) = (0.0, 0.0); // tr[(V^{−1}Σ₀)^k]
    let (mut h1, mut h2) = (0.0, 0.0); // tr[((V+4σΣ₀)^{−1}Σ₀)^k]
    let (mut s2, mut s4) = (0.0, 0.0); // tr[((V+2σΣ₀)^{−1}Σ₀)^k]
    for &m in mu {
        ld8 += (8.0 * sigma * m).ln_1p();
        ld2 += (2.0 * sigma * m).ln_1p();
        ld6 += (6.0 * sigma * m).ln_1p();
        ld4 += (4.0 * sigma * m).ln_1p();
        let g = m / (1.0 + 2.0 * sigma * m);
        g1 += g;
        g2 += g * g;
        let h = m / (1.0 + 6.0 * sigma * m);
        h1 += h;
        h2 += h * h;
        let s = m / (1.0 + 4.0 * sigma * m);
        s2 += s * s;
        s4 += s * s * s * s;
    }
    let s_sq = sigma * sigma;
    let s_4 = s_sq * s_sq;
    let block_a = 2.0 * (-0.5 * ld8).exp();
    let block_b = 4.0
        * (-0.5 * (ld2 + ld6)).exp()
        * (1.0 + 0.5 * s_sq * g1 * g1 + s_sq * g2 + 0.5 * s_sq * h1 * h1 + s_sq * h2
            + sigma * g1
            - sigma * h1
            - s_sq * g1 * h1);
    let block_c = 2.0 * (-ld4).exp() * (1.0 + 8.0 * s_sq * s2 + 12.0 * s_4 * s2 * s2 + 24.0 * s_4 * s4);
    block_a - block_b + block_c
}

/// E[Z] = Σλ_ℓ, the first moment of the asymptotic null distribution.
/// Lies in (0, 1); exactly 0 for Σ₀ = 0.
pub fn asymptotic_mean(params: &GaussianParams, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(e_z_from_eigenvalues(&cov_eigenvalues(params), sigma))
}

/// V[Z] = 2Σλ_ℓ², the second central moment of the asymptotic null
/// distribution.
pub fn asymptotic_variance(params: &GaussianParams, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(v_z_from_eigenvalues(&cov_eigenvalues(params), sigma))
}

/// Both moments from a single eigendecomposition of Σ₀.
pub fn asymptotic_moments(params: &GaussianParams, sigma: f64) -> Result<MomentPair> {
    check_sigma(sigma)?;
    let mu = cov_eigenvalues(params);
    let e_z = e_z_from_eigenvalues(&mu, sigma);
    let v_z = v_z_from_eigenvalues(&mu, sigma);
    debug_assert!(
        v_z <= 2.0 * e_z * e_z * (1.0 + 1e-9) || v_z <= 0.0,
        "V[Z] = {v_z} exceeds 2E[Z]^2 = {}",
        2.0 * e_z * e_z
    );
    MomentPair::new(e_z, v_z)
}

/// Cumulant fit: c = V[Z]/(2E[Z]), r = 2E[Z]²/V[Z].
pub fn fit_chisq(moments: &MomentPair) -> Result<ChiSqFit> {
    if !(moments.e_z > 0.0) || !(moments.v_z > 0.0) {
        return Err(Error::invalid("chi-squared fit needs strictly positive moments"));
    }
    Ok(ChiSqFit {
        c: moments.v_z / (2.0 * moments.e_z),
        r: 2.0 * moments.e_z * moments.e_z / moments.v_z,
    })
}

/// Upper-α quantile of c·χ²_r: t with P(cχ²_r ≥ t) = α.
pub fn chisq_quantile(fit: &ChiSqFit, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let y = gamma_p_inv(fit.r / 2.0, 1.0 - alpha)?;
    Ok(2.0 * fit.c * y)
}

/// Upper-tail p-value of the fitted c·χ²_r at `statistic`; a negative
/// statistic is treated as 0 (p = 1).
pub fn p_value(fit: &ChiSqFit, statistic: f64) -> Result<f64> {
    if !statistic.is_finite() {
        return Err(Error::invalid("statistic must be finite"));
    }
    if statistic <= 0.0 {
        return Ok(1.0);
    }
    gamma_q(fit.r / 2.0, statistic / (2.0 * fit.c))
}

/// Draw X₁,…,X_L from the reference and assemble the Gram matrix
/// 𝒢_L = (1/L)[⟨f(Xᵢ), f(Xⱼ)⟩], returning its spectrum and trace invariants.
///
/// Negative eigenvalues from roundoff are clamped to 0; anything below
/// −1e-8·λ̂₁ is reported as a numeric error since 𝒢_L is PSD by construction.
pub fn gram_spectrum<R: Rng>(
    reference: &GaussianParams,
    sigma: f64,
    l: usize,
    rng: &mut R,
) -> Result<SpectralEstimate> {
    check_sigma(sigma)?;
    if l < 2 {
        return Err(Error::invalid("Gram matrix needs at least two sample points"));
    }
    let fctx = FInnerContext::new(EmbeddingContext::new(reference.clone(), sigma)?);
    let draws = sample_mvn(reference, l, rng)?;
    let prepared: Vec<_> = (0..l)
        .map(|i| fctx.prepare(&draws.row_vec(i)))
        .collect::<Result<_>>()?;

    let scale = 1.0 / l as f64;
    let rows: Vec<Vec<f64>> = (0..l)
        .into_par_iter()
        .map(|i| {
            (i..l)
                .map(|j| scale * fctx.eval_prepared(&prepared[i], &prepared[j]))
                .collect()
        })
        .collect();
    let mut gram = DMatrix::zeros(l, l);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }

    let gram_trace = gram.trace();
    let gram_sq_trace = gram.iter().map(|v| v * v).sum::<f64>();

    let mut eigenvalues: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_unstable_by(|a, b| b.total_cmp(a));
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let floor = -1e-8 * top.max(0.0);
    if let Some(&min) = eigenvalues.last() {
        if min < floor {
            return Err(Error::numeric(format!(
                "Gram eigenvalue {min:.3e} below audit floor {floor:.3e}; inner-product kernel is broken"
            )));
        }
    }
    for v in &mut eigenvalues {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let eig_sum: f64 = eigenvalues.iter().sum();
    if (eig_sum - gram_trace).abs() > 1e-9 * gram_trace.abs().max(1.0) {
        return Err(Error::numeric(format!(
            "eigenvalue sum {eig_sum} disagrees with Gram trace {gram_trace}"
        )));
    }
    Ok(SpectralEstimate { eigenvalues, gram_trace, gram_sq_trace, l })
}

/// Chi-squared fit from Gram invariants: Ê[Z] = tr𝒢_L, V̂[Z] = 2tr𝒢_L².
pub fn approx_ii_fit(spec: &SpectralEstimate) -> Result<ChiSqFit> {
    if !(spec.gram_trace > 0.0) {
        return Err(Error::invalid("Gram trace must be positive for the chi-squared fit"));
    }
    fit_chisq(&MomentPair::new(spec.gram_trace, 2.0 * spec.gram_sq_trace)?)
}

/// Empirical upper-α quantile of Σ λ̂_ℓ Z_ℓ² over `draws` simulations.
pub fn spec_quantile<R: Rng>(
    spec: &SpectralEstimate,
    alpha: f64,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if draws < 1000 {
        return Err(Error::invalid("spec quantile needs at least 1000 draws"));
    }
    let active: Vec<f64> = spec.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
    let mut sims: Vec<f64> = (0..draws)
        .map(|_| {
            active
                .iter()
                .map(|&lambda| {
                    let z: f64 = rng.sample(StandardNormal);
                    lambda * z * z
                })
                .sum()
        })
        .collect();
    sims.sort_unstable_by(f64::total_cmp);
    Ok(empirical_upper_quantile(&sims, alpha))
}

/// Parametric-bootstrap null: draw n points from the reference, compute
/// n·Δ̂², repeat; returns the sorted sample of statistics.
///
/// Iteration i uses ChaCha stream (seed, i), so the output is bit-identical
/// for a fixed seed regardless of thread count.
pub fn monte_carlo_null(
    reference: &GaussianParams,
    n: usize,
    sigma: f64,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    if iterations < 100 {
        return Err(Error::invalid("Monte-Carlo null needs at least 100 iterations"));
    }
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut values = (0..iterations as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let data = sample_mvn(reference, n, &mut rng)?;
            Ok(n as f64 * mmd_sq_statistic(&data, sigma)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    values.sort_unstable_by(f64::total_cmp);
    Ok(values)
}

/// Upper-α quantile of a sorted sample: 1-based order statistic ⌈(1−α)·N⌉.
pub fn empirical_upper_quantile(sorted: &[f64], alpha: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    let idx = ((1.0 - alpha) * n as f64).ceil() as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// Plug-in Monte-Carlo p-value (1 + #{sims ≥ stat}) / (N + 1), never 0.
pub fn empirical_p_value(sorted: &[f64], statistic: f64) -> f64 {
    let n = sorted.len();
    let first_ge = sorted.partition_point(|&v| v < statistic);
    (1.0 + (n - first_ge) as f64) / (n as f64 + 1.0)
}

/// Knobs for the quantile engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EngineOptions {
    /// Iterations of the parametric bootstrap (monte-carlo engine).
    pub mc_iterations: usize,
    /// Gram size for the gram-chisq engine.
    pub gram_l: usize,
    /// Gram size for the spec engine.
    pub spec_l: usize,
    /// Simulation draws for the spec engine's quantile.
    pub spec_draws: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { mc_iterations: 2000, gram_l: 1000, spec_l: 500, spec_draws: 100_000 }
    }
}

/// Run the full normality test on one dataset: statistic, critical value at
/// `alpha` from the chosen engine, p-value and reject flag.
pub fn normality_test(
    data: &Dataset,
    sigma: f64,
    engine: Engine,
    alpha: f64,
    options: &EngineOptions,
    seed: u64,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let n = data.n();
    let delta_sq = mmd_sq_statistic(data, sigma)?;
    let statistic = n as f64 * delta_sq;
    let params = sample_moments(data)?;

    // When Σ̂ = 0 (e.g. a single observation) the null distribution is a
    // point mass at 0 and the statistic is exactly 0; no engine can produce
    // a meaningful quantile, and the test never rejects.
    let degenerate = (f64::INFINITY, 1.0);

    let (critical_value, p, used_seed) = match engine {
        Engine::MomentChisq => {
            let e_z = asymptotic_mean(&params, sigma)?;
            let v_z = asymptotic_variance(&params, sigma)?;
            let (t, p) = if e_z > 0.0 && v_z > 0.0 {
                let fit = fit_chisq(&MomentPair::new(e_z, v_z)?)?;
                (chisq_quantile(&fit, alpha)?, p_value(&fit, statistic)?)
            } else {
                degenerate
            };
            (t, p, None)
        }
        Engine::GramChisq => {
            let mut rng = stream_rng(seed, 0);
            let spec = gram_spectrum(&params, sigma, options.gram_l, &mut rng)?;
            let (t, p) = if spec.gram_trace > 0.0 && spec.gram_sq_trace > 0.0 {
                let fit = approx_ii_fit(&spec)?;
                (chisq_quantile(&fit, alpha)?, p_value(&fit, statistic)?)
            } else {
                degenerate
            };
            (t, p, Some(seed))
        }
        Engine::SpecSum => {
            let mut rng = stream_rng(seed, 0);
            let spec = gram_spectrum(&params, sigma, options.spec_l, &mut rng)?;
            let active: Vec<f64> =
                spec.eigenvalues.iter().copied().filter(|&v| v > 0.0).collect();
            let (t, p) = if active.is_empty() {
                degenerate
            } else {
                let mut draw_rng = stream_rng(seed, 1);
                let mut sims: Vec<f64> = Vec::with_capacity(options.spec_draws);
                for _ in 0..options.spec_draws {
                    sims.push(
                        active
                            .iter()
                            .map(|&lambda| {
                                let z: f64 = draw_rng.sample(StandardNormal);
                                lambda * z * z
                            })
                            .sum(),
                    );
                }
                sims.sort_unstable_by(f64::total_cmp);
                (empirical_upper_quantile(&sims, alpha), empirical_p_value(&sims, statistic))
            };
            (t, p, Some(seed))
        }
        Engine::MonteCarlo => {
            let sims = monte_carlo_null(&params, n, sigma, options.mc_iterations, seed)?;
            let (t, p) = if sims.last().copied().unwrap_or(0.0) <= 0.0 {
                degenerate
            } else {
                (empirical_upper_quantile(&sims, alpha), empirical_p_value(&sims, statistic))
            };
            (t, p, Some(seed))
        }
    };

    Ok(TestResult {
        statistic,
        delta_sq,
        n,
        d: data.d(),
        sigma,
        engine,
        critical_value,
        alpha,
        p_value: p,
        reject: statistic >= critical_value,
        seed: used_seed,
    })
}
