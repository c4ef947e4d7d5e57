//! Closed-form Gaussian-kernel quantities: the kernel itself, mean embeddings
//! of Gaussian distributions, and the inner product ⟨f(x), f(y)⟩ between the
//! score-like elements whose Gram spectrum drives the null distribution.
//!
//! For a reference Gaussian N(m₀, Σ₀) and kernel k(s, t) = exp(−σ‖s−t‖²),
//! everything here reduces to quadratic forms, traces and determinants built
//! from V = I + 2σΣ₀ and 2V − I = I + 4σΣ₀. Both matrices have eigenvalues
//! ≥ 1, so their Cholesky factorizations always exist; a failure indicates a
//! non-PSD covariance upstream and is reported as a hard numeric error.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{Error, Result};

/// Mean vector and covariance matrix of a Gaussian in R^d.
///
/// Covariance is symmetrized as (Σ + Σᵀ)/2 on construction so float
/// asymmetry from upstream accumulation cannot reach the Cholesky
/// factorizations downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianParams {
    /// Build and validate: `cov` must be square, match `mean`, contain only
    /// finite entries, and be PSD up to a −1e-10·‖Σ‖ eigenvalue tolerance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: cov.nrows().max(cov.ncols()) });
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean/covariance entries must be finite"));
        }
        let cov = symmetrize(cov);
        let eigs = cov.symmetric_eigenvalues();
        let max_abs = eigs.iter().fold(0.0_f64, |m, &e| m.max(e.abs()));
        let min = eigs.min();
        if min < -1e-10 * max_abs.max(1.0) {
            return Err(Error::invalid(format!(
                "covariance is not positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Internal constructor for covariances that are PSD by construction
    /// (sample moments, identity scalings). Still symmetrizes.
    pub(crate) fn new_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let cov = symmetrize(cov);
        Self { mean, cov }
    }

    /// Standard normal reference N(0, I_d).
    pub fn standard(d: usize) -> Self {
        Self { mean: DVector::zeros(d), cov: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// How a kernel scale was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaRule {
    /// σ given directly.
    Explicit,
    /// σ = 1 / median of pairwise squared distances.
    MedianHeuristic,
    /// σ = d^{−exponent}.
    DimPower { exponent: f64 },
}

/// Kernel scale σ > 0 together with the rule that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelConfig {
    pub sigma: f64,
    pub rule: SigmaRule,
}

impl KernelConfig {
    pub fn new(sigma: f64, rule: SigmaRule) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, rule })
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("kernel scale must be positive and finite, got {sigma}")));
    }
    Ok(())
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// k(x, y) = exp(−σ‖x−y‖²), in (0, 1].
pub fn gaussian_kernel(x: &DVector<f64>, y: &DVector<f64>, sigma: f64) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    check_sigma(sigma)?;
    Ok((-sigma * (x - y).norm_squared()).exp())
}

/// B(x) = (x − m₀)(x − m₀)ᵀ − Σ₀.
pub fn b_matrix(x: &DVector<f64>, params: &GaussianParams) -> Result<DMatrix<f64>> {
    check_dim(params.dim(), x.len())?;
    let a = x - params.mean();
    let mut out = &a * a.transpose();
    out -= params.cov();
    Ok(out)
}

/// ‖μ(N(m, Σ))‖² = |I + 4σΣ|^{−1/2}, via Cholesky log-determinant.
pub fn embedding_norm_sq(params: &GaussianParams, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let d = params.dim();
    let mut m = params.cov() * (4.0 * sigma);
    for i in 0..d {
        m[(i, i)] += 1.0;
    }
    let chol = cholesky_unit_shifted(m, "I + 4sigma*Sigma")?;
    Ok((-0.5 * chol_log_det(&chol)).exp())
}

/// Cached factorizations for one (m₀, Σ₀, σ) reference: V = I + 2σΣ₀ and
/// 2V − I = I + 4σΣ₀, their Cholesky factors and log-determinants.
///
/// Immutable after construction; all evaluations borrow it, so one context
/// is safely shared across threads.
#[derive(Debug, Clone)]
pub struct EmbeddingContext {
    params: GaussianParams,
    sigma: f64,
    v_matrix: DMatrix<f64>,
    chol_v: Cholesky<f64, Dyn>,
    logdet_v: f64,
    chol_v_plus: Cholesky<f64, Dyn>,
    logdet_v_plus: f64,
}

impl EmbeddingContext {
    pub fn new(params: GaussianParams, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let d = params.dim();
        let mut v_matrix = params.cov() * (2.0 * sigma);
        for i in 0..d {
            v_matrix[(i, i)] += 1.0;
        }
        let mut v_plus = params.cov() * (4.0 * sigma);
        for i in 0..d {
            v_plus[(i, i)] += 1.0;
        }
        let chol_v = cholesky_unit_shifted(v_matrix.clone(), "V = I + 2sigma*Sigma")?;
        let chol_v_plus = cholesky_unit_shifted(v_plus, "2V - I = I + 4sigma*Sigma")?;
        let logdet_v = chol_log_det(&chol_v);
        let logdet_v_plus = chol_log_det(&chol_v_plus);
        Ok(Self { params, sigma, v_matrix, chol_v, logdet_v, chol_v_plus, logdet_v_plus })
    }

    pub fn params(&self) -> &GaussianParams {
        &self.params
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn v_matrix(&self) -> &DMatrix<f64> {
        &self.v_matrix
    }

    pub fn logdet_v(&self) -> f64 {
        self.logdet_v
    }

    pub fn logdet_v_plus(&self) -> f64 {
        self.logdet_v_plus
    }

    /// |I + 4σΣ₀|^{−1/2}, the squared embedding norm of the reference.
    pub fn norm_sq(&self) -> f64 {
        (-0.5 * self.logdet_v_plus).exp()
    }

    /// Quadratic form (u)ᵀ V^{−1} (u) for u = point − m₀, one solve.
    fn v_quad_form(&self, centered: &DVector<f64>) -> f64 {
        self.chol_v.solve(centered).dot(centered)
    }

    /// Batched V^{−1}·rhs for a d×n right-hand side.
    pub(crate) fn chol_v_solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol_v.solve(rhs)
    }
}

/// μ(N(m, Σ))(point) = |V|^{−1/2} exp(−σ(point−m)ᵀV^{−1}(point−m)).
pub fn embed_gaussian(ctx: &EmbeddingContext, point: &DVector<f64>) -> Result<f64> {
    check_dim(ctx.params.dim(), point.len())?;
    let centered = point - ctx.params.mean();
    let q = ctx.v_quad_form(&centered);
    Ok((-0.5 * ctx.logdet_v - ctx.sigma * q).exp())
}

/// Context extension for ⟨f(x), f(y)⟩ evaluations: constant traces against
/// V^{−1} and W = (2V − I)^{−1}, computed once as W-conjugations
/// L^{−1} Σ₀ L^{−T} so no inverse is ever formed.
#[derive(Debug, Clone)]
pub struct FInnerContext {
    ctx: EmbeddingContext,
    det_v_m12: f64,
    det_w_m12: f64,
    /// tr[V^{−1} Σ₀]
    tr_vs: f64,
    /// tr[(2V−I)^{−1} Σ₀]
    tr_ws: f64,
    /// tr[((2V−I)^{−1} Σ₀)²]
    tr_wsws: f64,
    sigma_cov: DMatrix<f64>,
}

/// One point made ready for repeated ⟨f(x), f(y)⟩ evaluations: the centered
/// vector, the two solves against V and 2V − I, and the scalar invariants
/// that appear in the closed form. Preparing is O(d²); each pair evaluation
/// afterwards is O(d).
#[derive(Debug, Clone)]
pub struct PreparedPoint {
    /// x − m₀
    a: DVector<f64>,
    /// V^{−1}(x − m₀)
    alpha: DVector<f64>,
    /// (2V−I)^{−1}(x − m₀)
    w: DVector<f64>,
    norm_sq: f64,
    /// exp(−σ (x−m₀)ᵀV^{−1}(x−m₀))
    exp_v: f64,
    /// tr[V^{−1}B(x)] = qᵥ − tr[V^{−1}Σ₀]
    tb_v: f64,
    /// tr[(2V−I)^{−1}B(x)]
    tb_w: f64,
    /// αᵀΣ₀α
    s_vv: f64,
    /// wᵀΣ₀w
    s_ww: f64,
}

impl FInnerContext {
    pub fn new(ctx: EmbeddingContext) -> Self {
        let cov = ctx.params.cov();
        let l_v = ctx.chol_v.l();
        let l_w = ctx.chol_v_plus.l();
        let tr_vs = conjugated(&l_v, cov).trace();
        let s_w = conjugated(&l_w, cov);
        let tr_ws = s_w.trace();
        let tr_wsws = s_w.iter().map(|v| v * v).sum();
        let det_v_m12 = (-0.5 * ctx.logdet_v).exp();
        let det_w_m12 = (-0.5 * ctx.logdet_v_plus).exp();
        let sigma_cov = cov.clone();
        Self { ctx, det_v_m12, det_w_m12, tr_vs, tr_ws, tr_wsws, sigma_cov }
    }

    pub fn embedding(&self) -> &EmbeddingContext {
        &self.ctx
    }

    /// Precompute the per-point solves and scalars for `x`.
    pub fn prepare(&self, x: &DVector<f64>) -> Result<PreparedPoint> {
        check_dim(self.ctx.params.dim(), x.len())?;
        let a = x - self.ctx.params.mean();
        let alpha = self.ctx.chol_v.solve(&a);
        let w = self.ctx.chol_v_plus.solve(&a);
        let q_v = a.dot(&alpha);
        let q_w = a.dot(&w);
        let s_vv = (&self.sigma_cov * &alpha).dot(&alpha);
        let s_ww = (&self.sigma_cov * &w).dot(&w);
        Ok(PreparedPoint {
            norm_sq: a.norm_squared(),
            exp_v: (-self.ctx.sigma * q_v).exp(),
            tb_v: q_v - self.tr_vs,
            tb_w: q_w - self.tr_ws,
            a,
            alpha,
            w,
            s_vv,
            s_ww,
        })
    }

    /// ⟨f(x), f(y)⟩ for two prepared points. O(d).
    pub fn eval_prepared(&self, p: &PreparedPoint, q: &PreparedPoint) -> f64 {
        let sigma = self.ctx.sigma;
        let dot_ab = p.a.dot(&q.a);
        let dist_sq = (p.norm_sq + q.norm_sq - 2.0 * dot_ab).max(0.0);
        let kernel_term = (-sigma * dist_sq).exp();

        // Cross terms: B(x) + Σ₀ = aaᵀ is rank one, so the trace in each
        // brace collapses to 2σ·αᵀB(other)α − tr[V^{−1}B(other)].
        let cv_xy = p.alpha.dot(&q.a);
        let cross_x = self.det_v_m12
            * p.exp_v
            * (1.0 + 2.0 * sigma * cv_xy + sigma * (2.0 * sigma * (cv_xy * cv_xy - p.s_vv) - q.tb_v));
        let cv_yx = q.alpha.dot(&p.a);
        let cross_y = self.det_v_m12
            * q.exp_v
            * (1.0 + 2.0 * sigma * cv_yx + sigma * (2.0 * sigma * (cv_yx * cv_yx - q.s_vv) - p.tb_v));

        // Final block against W = (2V − I)^{−1}:
        //   tr[B(x)W B(y)W] = (aᵀWb)² − w_xᵀΣ₀w_x − w_yᵀΣ₀w_y + tr[(WΣ₀)²].
        let cw = p.w.dot(&q.a);
        let lin = 2.0 * cw - p.tb_w - q.tb_w;
        let bwbw = cw * cw - p.s_ww - q.s_ww + self.tr_wsws;
        let tail = self.det_w_m12
            * (1.0 + sigma * lin + sigma * sigma * (p.tb_w * q.tb_w + 2.0 * bwbw));

        kernel_term - cross_x - cross_y + tail
    }
}

/// ⟨f(x), f(y)⟩ for the reference Gaussian held by `fctx`.
///
/// The two cross terms are computed independently; in debug builds the total
/// is asserted symmetric under x ↔ y.
pub fn f_inner(fctx: &FInnerContext, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let p = fctx.prepare(x)?;
    let q = fctx.prepare(y)?;
    let value = fctx.eval_prepared(&p, &q);
    #[cfg(debug_assertions)]
    {
        let mirrored = fctx.eval_prepared(&q, &p);
        debug_assert!(
            (value - mirrored).abs() <= 1e-10 * (1.0 + value.abs()),
            "f_inner asymmetry: {value} vs {mirrored}"
        );
    }
    Ok(value)
}

/// Cholesky of a unit-shifted PSD matrix (all eigenvalues ≥ 1). Failure means
/// the input covariance was not PSD, which is an internal invariant breach.
fn cholesky_unit_shifted(m: DMatrix<f64>, label: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| {
        Error::numeric(format!("Cholesky of {label} failed; covariance is not PSD"))
    })
}

fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// tr-friendly conjugation L^{−1} M L^{−T} for symmetric M, two triangular
/// solves, no inverses.
fn conjugated(l: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l
        .solve_lower_triangular(m)
        .expect("triangular solve with positive diagonal cannot fail");
    let yt = y.transpose();
    l.solve_lower_triangular(&yt)
        .expect("triangular solve with positive diagonal cannot fail")
        .transpose()
}
