//! The test statistic: sample moments, kernel-scale selection rules, and the
//! squared-MMD distance between the empirical measure and the fitted
//! Gaussian N(m̂, Σ̂).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{check_sigma, EmbeddingContext, GaussianParams};

/// An n×d matrix of observations, rows are samples. All entries finite,
/// n ≥ 1, d ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("dataset must have at least one row and one column"));
        }
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite entry at row {}, column {}",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_vec(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }
}

/// Null-quantile engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Closed-form moments fitted to a single scaled chi-squared.
    MomentChisq,
    /// Gram-matrix trace moments fitted to a single scaled chi-squared.
    GramChisq,
    /// Weighted sum of chi-squared draws over the Gram spectrum.
    SpecSum,
    /// Parametric-bootstrap simulation of the statistic.
    MonteCarlo,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::MomentChisq => "moment-chisq",
            Engine::GramChisq => "gram-chisq",
            Engine::SpecSum => "spec",
            Engine::MonteCarlo => "monte-carlo",
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moment-chisq" => Ok(Engine::MomentChisq),
            "gram-chisq" => Ok(Engine::GramChisq),
            "spec" => Ok(Engine::SpecSum),
            "monte-carlo" => Ok(Engine::MonteCarlo),
            other => Err(Error::invalid(format!(
                "unknown engine '{other}' (expected moment-chisq, gram-chisq, spec, monte-carlo)"
            ))),
        }
    }
}

/// Outcome of one normality test.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    /// n·Δ̂²
    pub statistic: f64,
    /// Δ̂² (clamped at 0)
    pub delta_sq: f64,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub engine: Engine,
    pub critical_value: f64,
    pub alpha: f64,
    pub p_value: f64,
    pub reject: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Sample mean and covariance with the 1/n divisor (not 1/(n−1)); the null
/// quantiles of the statistic depend on this exact normalization.
pub fn sample_moments(data: &Dataset) -> Result<GaussianParams> {
    let n = data.n();
    if n == 0 {
        return Err(Error::invalid("cannot estimate moments of an empty dataset"));
    }
    let values = data.values();
    let mean = values.row_mean().transpose();
    let mut centered = values.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / n as f64;
    Ok(GaussianParams::new_unchecked(mean, cov))
}

/// Δ̂² = (1/n²)Σᵢⱼ k(Yᵢ,Yⱼ) − |V|^{−1/2}(2/n)Σᵢ e^{−σ qᵢ} + |I+4σΣ̂|^{−1/2},
/// the squared RKHS distance between the empirical embedding and the
/// embedding of N(m̂, Σ̂). Clamped at 0.
///
/// The pairwise term uses the ‖x−y‖² = ‖x‖² + ‖y‖² − 2x·y expansion (one
/// n×n Gram product) and includes the diagonal, i.e. it is the V-statistic
/// form. Only I + 2σΣ̂ and I + 4σΣ̂ are ever factored, so rank-deficient Σ̂
/// (n ≤ d) is fine.
pub fn mmd_sq_statistic(data: &Dataset, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let params = sample_moments(data)?;
    let ctx = EmbeddingContext::new(params, sigma)?;
    Ok(mmd_sq_with_context(data, &ctx))
}

/// Statistic evaluation against a prebuilt context (must come from this
/// dataset's own sample moments for the test statistic semantics).
pub(crate) fn mmd_sq_with_context(data: &Dataset, ctx: &EmbeddingContext) -> f64 {
    let n = data.n();
    let values = data.values();
    let sigma = ctx.sigma();

    // (1/n²) Σᵢⱼ exp(−σ‖Yᵢ−Yⱼ‖²), diagonal included.
    let gram = values * values.transpose();
    let mut norms = DVector::zeros(n);
    for i in 0..n {
        norms[i] = gram[(i, i)];
    }
    let mut off_sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dist_sq = (norms[i] + norms[j] - 2.0 * gram[(i, j)]).max(0.0);
            off_sum += (-sigma * dist_sq).exp();
        }
    }
    let kernel_mean = (n as f64 + 2.0 * off_sum) / (n as f64 * n as f64);

    // (2/n)|V|^{−1/2} Σᵢ exp(−σ(Yᵢ−m̂)ᵀV^{−1}(Yᵢ−m̂)), batched solve.
    let mean = ctx.params().mean();
    let mut centered_t = values.transpose();
    for mut col in centered_t.column_iter_mut() {
        col -= mean;
    }
    let solved = ctx.chol_v_solve_matrix(&centered_t);
    let det_v_m12 = (-0.5 * ctx.logdet_v()).exp();
    let mut embed_sum = 0.0;
    for j in 0..n {
        let q = centered_t.column(j).dot(&solved.column(j));
        embed_sum += (-sigma * q).exp();
    }
    let cross = det_v_m12 * 2.0 * embed_sum / n as f64;

    (kernel_mean - cross + ctx.norm_sq()).max(0.0)
}

/// σ = 1 / median of {‖Yᵢ−Yⱼ‖² : i < j}. For an even pair count the
/// lower-middle order statistic is taken, so the result is deterministic.
pub fn bandwidth_median(data: &Dataset) -> Result<f64> {
    let n = data.n();
    if n < 2 {
        return Err(Error::invalid("median heuristic needs at least two observations"));
    }
    let values = data.values();
    let gram = values * values.transpose();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0));
        }
    }
    let idx = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    let median = *median;
    if median <= 0.0 {
        return Err(Error::DegenerateData(
            "median pairwise distance is zero; cannot set a kernel scale".to_string(),
        ));
    }
    Ok(1.0 / median)
}

/// σ = d^{−exponent}.
pub fn bandwidth_dim_power(d: usize, exponent: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !exponent.is_finite() {
        return Err(Error::invalid("exponent must be finite"));
    }
    Ok((d as f64).powf(-exponent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: usize, cols: usize, rng: &mut impl Rng) -> Dataset {
        Dataset::new(DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 4.0 - 2.0)).unwrap()
    }

    #[test]
    fn moments_single_point() {
        let data = Dataset::new(DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5])).unwrap();
        let p = sample_moments(&data).unwrap();
        assert_eq!(p.mean(), &DVector::from_row_slice(&[1.0, -2.0, 0.5]));
        assert_eq!(p.cov(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn moments_two_points_biased_divisor() {
        let data = Dataset::new(DMatrix::from_row_slice(2, 1, &[0.0, 2.0])).unwrap();
        let p = sample_moments(&data).unwrap();
        assert_relative_eq!(p.mean()[0], 1.0);
        // 1/n divisor: ((−1)² + 1²)/2 = 1, not 2.
        assert_relative_eq!(p.cov()[(0, 0)], 1.0);
    }

    #[test]
    fn moments_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = dataset(20, 3, &mut rng);
        let mut perm: Vec<usize> = (0..20).collect();
        // Fisher–Yates with the seeded rng.
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let shuffled = DMatrix::from_fn(20, 3, |i, j| data.values()[(perm[i], j)]);
        let a = sample_moments(&data).unwrap();
        let b = sample_moments(&Dataset::new(shuffled).unwrap()).unwrap();
        assert_relative_eq!(a.mean(), b.mean(), max_relative = 1e-12);
        assert_relative_eq!(a.cov(), b.cov(), max_relative = 1e-10);
    }

    #[test]
    fn statistic_single_row_is_exactly_zero() {
        let data = Dataset::new(DMatrix::from_row_slice(1, 4, &[3.0, -1.0, 2.5, 0.0])).unwrap();
        for sigma in [0.1, 1.0, 17.0] {
            assert_eq!(mmd_sq_statistic(&data, sigma).unwrap(), 0.0);
        }
    }

    #[test]
    fn statistic_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = dataset(40, 3, &mut rng);
        let base = mmd_sq_statistic(&data, 0.7).unwrap();
        for _ in 0..5 {
            let t = DVector::from_fn(3, |_, _| rng.random::<f64>() * 20.0 - 10.0);
            let mut shifted = data.values().clone();
            for mut row in shifted.row_iter_mut() {
                row += t.transpose();
            }
            let moved = mmd_sq_statistic(&Dataset::new(shifted).unwrap(), 0.7).unwrap();
            assert!((base - moved).abs() < 1e-10, "{base} vs {moved}");
        }
    }

    #[test]
    fn statistic_orthogonal_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = 4;
        let data = dataset(30, d, &mut rng);
        let base = mmd_sq_statistic(&data, 0.4).unwrap();
        for _ in 0..5 {
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let q = raw.qr().q();
            let rotated = data.values() * q.transpose();
            let rot = mmd_sq_statistic(&Dataset::new(rotated).unwrap(), 0.4).unwrap();
            assert_relative_eq!(base, rot, max_relative = 1e-9);
        }
    }

    #[test]
    fn statistic_nonnegative_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..1000 {
            let n = rng.random_range(1..=12);
            let d = rng.random_range(1..=4);
            let data = dataset(n, d, &mut rng);
            let v = mmd_sq_statistic(&data, 0.05 + rng.random::<f64>()).unwrap();
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn statistic_handles_rank_deficient_covariance() {
        // n ≤ d: Σ̂ is rank-deficient but only unit-shifted matrices are factored.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data = dataset(5, 50, &mut rng);
        let v = mmd_sq_statistic(&data, 0.02).unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn median_bandwidth_values() {
        let two = Dataset::new(DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert_relative_eq!(bandwidth_median(&two).unwrap(), 1.0);

        // Squared distances {1, 1, 4}: median (lower middle of 3) is 1.
        let three = Dataset::new(DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0])).unwrap();
        assert_relative_eq!(bandwidth_median(&three).unwrap(), 1.0);
    }

    #[test]
    fn median_bandwidth_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let data = dataset(15, 2, &mut rng);
        let base = bandwidth_median(&data).unwrap();
        let scaled = Dataset::new(data.values() * 3.0).unwrap();
        assert_relative_eq!(bandwidth_median(&scaled).unwrap(), base / 9.0, max_relative = 1e-12);
    }

    #[test]
    fn median_bandwidth_errors() {
        let one = Dataset::new(DMatrix::from_row_slice(1, 1, &[0.0])).unwrap();
        assert!(matches!(bandwidth_median(&one), Err(Error::InvalidArgument(_))));
        let same = Dataset::new(DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0])).unwrap();
        assert!(matches!(bandwidth_median(&same), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn dim_power_values() {
        assert_eq!(bandwidth_dim_power(1, 0.75).unwrap(), 1.0);
        assert_relative_eq!(bandwidth_dim_power(10, 1.0).unwrap(), 0.1);
        assert_relative_eq!(bandwidth_dim_power(300, 0.75).unwrap(), 300f64.powf(-0.75), max_relative = 1e-15);
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(Dataset::new(DMatrix::zeros(0, 3)).is_err());
        let mut m = DMatrix::zeros(2, 2);
        m[(1, 0)] = f64::INFINITY;
        let err = Dataset::new(m).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn engine_parsing_round_trip() {
        for e in [Engine::MomentChisq, Engine::GramChisq, Engine::SpecSum, Engine::MonteCarlo] {
            assert_eq!(e.as_str().parse::<Engine>().unwrap(), e);
        }
        assert!("nope".parse::<Engine>().is_err());
    }
}
