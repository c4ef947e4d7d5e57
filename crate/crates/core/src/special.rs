//! Scalar special functions backing the chi-squared quantile and p-value
//! machinery: log-gamma, the regularized incomplete gamma pair, and a
//! bracketed Newton inversion of the lower tail.

use crate::error::{Error, Result};

/// Lanczos coefficients, g = 7, 9 terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_TWO_PI: f64 = 0.918_938_533_204_672_7;
const MAX_ITER: usize = 200;

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: ln Γ(x) = ln(π / sin(πx)) − ln Γ(1 − x).
        let s = (std::f64::consts::PI * x).sin();
        std::f64::consts::PI.ln() - s.ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        LN_SQRT_TWO_PI + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Regularized lower incomplete gamma P(a, x) and its complement Q(a, x).
///
/// Series expansion for x < a + 1, Lentz continued fraction otherwise, so
/// the smaller of the pair is always the one computed directly.
pub fn gamma_pq(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("gamma shape must be positive, got {a}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::invalid(format!("gamma argument must be nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    // Common prefactor x^a e^{−x} / Γ(a), in log space.
    let ln_pre = a * x.ln() - x - ln_gamma(a);
    // Near x ≈ a both expansions need O(√a) terms.
    let itmax = 300 + (10.0 * a.sqrt()) as usize;
    if x < a + 1.0 {
        // P(a,x) = pre · Σ_k x^k / (a(a+1)...(a+k)) with pre absorbing 1/a.
        let mut term = 1.0 / a;
        let mut sum = term;
        for k in 1..=itmax {
            term *= x / (a + k as f64);
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                let p = (ln_pre.exp() * sum).clamp(0.0, 1.0);
                return Ok((p, 1.0 - p));
            }
        }
        Err(Error::numeric(format!("incomplete gamma series failed to converge (a={a}, x={x})")))
    } else {
        // Q(a,x) = pre · CF, CF evaluated by the modified Lentz method.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=itmax {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                let q = (ln_pre.exp() * h).clamp(0.0, 1.0);
                return Ok((1.0 - q, q));
            }
        }
        Err(Error::numeric(format!("incomplete gamma continued fraction failed to converge (a={a}, x={x})")))
    }
}

/// P(a, x), the regularized lower incomplete gamma function.
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    gamma_pq(a, x).map(|(p, _)| p)
}

/// Q(a, x) = 1 − P(a, x), the regularized upper incomplete gamma function.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    gamma_pq(a, x).map(|(_, q)| q)
}

/// Solve P(a, y) = p for y, to absolute tolerance 1e-10 in probability.
///
/// Newton iteration on the CDF with a maintained bracket; falls back to
/// bisection whenever a Newton step leaves the bracket.
pub fn gamma_p_inv(a: f64, p: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("gamma shape must be positive, got {a}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("probability must lie in (0,1), got {p}")));
    }
    let tol = 1e-10;
    let ln_gamma_a = ln_gamma(a);

    let mut y = initial_guess(a, p).max(1e-300);
    // Establish a bracket [lo, hi] with P(lo) < p < P(hi).
    let mut lo = 0.0_f64;
    let mut hi = y.max(a) * 2.0 + 1.0;
    while gamma_p(a, hi)? < p {
        hi *= 2.0;
        if hi > 1e308 {
            return Err(Error::numeric("incomplete gamma inverse: bracket overflow".to_string()));
        }
    }
    // Keep a good (possibly extremely small) initial guess; only cap at hi.
    y = y.min(hi).max(1e-300);

    for _ in 0..MAX_ITER {
        let f = gamma_p(a, y)? - p;
        if f.abs() <= tol {
            return Ok(y);
        }
        if f > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        // pdf in log space: y^{a−1} e^{−y} / Γ(a)
        let ln_pdf = (a - 1.0) * y.ln() - y - ln_gamma_a;
        let step = if ln_pdf > -700.0 { f / ln_pdf.exp() } else { f64::INFINITY };
        let candidate = y - step;
        y = if candidate.is_finite() && candidate > lo && candidate < hi {
            candidate
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::numeric(format!("incomplete gamma inverse did not converge (a={a}, p={p})")))
}

/// Starting point for the Newton iteration.
fn initial_guess(a: f64, p: f64) -> f64 {
    if a > 0.6 {
        // Wilson–Hilferty for χ²_{2a}, mapped back to Gamma(a, 1).
        let z = inv_norm_cdf(p);
        let g = 1.0 - 2.0 / (9.0 * a) + z * (2.0 / (9.0 * a)).sqrt();
        (a * g * g * g).max(1e-8 * a)
    } else {
        // Small-shape asymptotic: P(a,y) ≈ y^a / Γ(a+1) near 0.
        ((p.ln() + ln_gamma(a + 1.0)) / a).exp()
    }
}

/// Acklam's rational approximation to the standard normal quantile.
/// Only used to seed the Newton solver; absolute error ~1e-9.
fn inv_norm_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
