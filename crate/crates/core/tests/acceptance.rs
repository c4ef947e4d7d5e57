//! Acceptance gate for the whole artifact. Each test checks one criterion at
//! its stated tolerance and prints a single PASS/FAIL line (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Everything here is deterministic: all randomness flows through fixed
//! seeds and per-index ChaCha streams, so a pass is reproducible.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use mmdtest_core::rng::{derive_seed, stream_rng};
use mmdtest_core::{
    asymptotic_mean, asymptotic_moments, asymptotic_variance, bandwidth_dim_power, chisq_quantile,
    empirical_upper_quantile, f_inner, fit_chisq, gaussian_kernel, mmd_sq_statistic,
    monte_carlo_null, p_value, power_experiment, sample_moments, sample_mvn, AlternativeSpec,
    ChiSqFit, Correlation, Dataset, EmbeddingContext, Engine, FInnerContext, Family,
    GaussianParams, MomentPair, ThresholdSource,
};

/// Print the per-criterion verdict line and fail the test on any violation.
fn report(name: &str, failures: Vec<String>, detail: String) {
    if failures.is_empty() {
        println!("PASS  {name}: {detail}");
    } else {
        println!("FAIL  {name}: {}", failures.join("; "));
    }
    assert!(failures.is_empty(), "{name}: {}", failures.join("; "));
}

fn random_psd_params(d: usize, rng: &mut impl Rng) -> GaussianParams {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let cov = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.05;
    let mean = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    GaussianParams::new(mean, cov).unwrap()
}

/// Physicists' Gauss–Hermite nodes/weights via the Jacobi matrix, so that
/// ∫ g(x) e^{−x²} dx ≈ Σ wᵢ g(xᵢ).
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Criterion 1: the closed-form moments agree with Monte-Carlo integration
/// of the inner-product kernel (3 SE, 10^6 draws) on 20 random
/// configurations, and with Gauss–Hermite quadrature (1e-6 relative) in the
/// d = 1 cases.
#[test]
fn criterion_1_moment_oracle_equivalence() {
    const DRAWS: usize = 1_000_000;
    let dims = [1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 5, 5, 5, 5, 5];
    let mut failures = Vec::new();

    for (k, &d) in dims.iter().enumerate() {
        let mut cfg_rng = stream_rng(0xACC1, k as u64);
        let params = random_psd_params(d, &mut cfg_rng);
        let sigma = 0.05 + cfg_rng.random::<f64>();
        let e_z = asymptotic_mean(&params, sigma).unwrap();
        let v_z = asymptotic_variance(&params, sigma).unwrap();
        let fctx = FInnerContext::new(EmbeddingContext::new(params.clone(), sigma).unwrap());

        // E[Z] = E⟨f(X), f(X)⟩
        let mut rng = stream_rng(derive_seed(0xACC1, 100 + k as u64), 0);
        let xs = sample_mvn(&params, DRAWS, &mut rng).unwrap();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for i in 0..DRAWS {
            let p = fctx.prepare(&xs.row_vec(i)).unwrap();
            let v = fctx.eval_prepared(&p, &p);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / DRAWS as f64;
        let se = ((sum_sq / DRAWS as f64 - mean * mean).max(0.0) / DRAWS as f64).sqrt();
        if (e_z - mean).abs() > 3.0 * se {
            failures.push(format!(
                "config {k} (d={d}): E[Z] {e_z:.6} vs MC {mean:.6} (3se {:.2e})",
                3.0 * se
            ));
        }

        // V[Z] = 2·E⟨f(X), f(Y)⟩²
        let ys = sample_mvn(&params, DRAWS, &mut rng).unwrap();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for i in 0..DRAWS {
            let p = fctx.prepare(&xs.row_vec(i)).unwrap();
            let q = fctx.prepare(&ys.row_vec(i)).unwrap();
            let f = fctx.eval_prepared(&p, &q);
            let g = 2.0 * f * f;
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / DRAWS as f64;
        let se = ((sum_sq / DRAWS as f64 - mean * mean).max(0.0) / DRAWS as f64).sqrt();
        if (v_z - mean).abs() > 3.0 * se {
            failures.push(format!(
                "config {k} (d={d}): V[Z] {v_z:.6} vs MC {mean:.6} (3se {:.2e})",
                3.0 * se
            ));
        }

        if d == 1 {
            let (nodes, weights) = gauss_hermite(80);
            let m0 = params.mean()[0];
            let sd = params.cov()[(0, 0)].sqrt();
            let at = |t: f64| DVector::from_row_slice(&[m0 + std::f64::consts::SQRT_2 * sd * t]);
            let pts: Vec<_> = nodes.iter().map(|&t| fctx.prepare(&at(t)).unwrap()).collect();
            let norm = std::f64::consts::PI.sqrt();

            let quad_mean: f64 = pts
                .iter()
                .zip(&weights)
                .map(|(p, w)| w * fctx.eval_prepared(p, p))
                .sum::<f64>()
                / norm;
            if (e_z - quad_mean).abs() > 1e-6 * quad_mean.abs() {
                failures.push(format!(
                    "config {k}: E[Z] {e_z:.9} vs quadrature {quad_mean:.9}"
                ));
            }

            let mut quad_var = 0.0;
            for (p, wi) in pts.iter().zip(&weights) {
                let mut inner = 0.0;
                for (q, wj) in pts.iter().zip(&weights) {
                    let f = fctx.eval_prepared(p, q);
                    inner += wj * f * f;
                }
                quad_var += wi * inner;
            }
            quad_var = 2.0 * quad_var / (norm * norm);
            if (v_z - quad_var).abs() > 1e-6 * quad_var.abs() {
                failures.push(format!(
                    "config {k}: V[Z] {v_z:.9} vs quadrature {quad_var:.9}"
                ));
            }
        }
    }

    report(
        "criterion 1 (moment oracle equivalence)",
        failures,
        format!("{} configs within 3 SE of 10^6-draw MC; d=1 quadrature to 1e-6", dims.len()),
    );
}

/// Criterion 2: Monte-Carlo 5% null quantiles at d = 10, n = 500 within
/// ±0.03 of the reference values, and the moment-fit quantiles within ±0.02.
#[test]
fn criterion_2_null_quantile_reproduction() {
    let cases = [
        (0.75, 0.67432, 0.67607),
        (0.875, 0.51874, 0.52062),
        (1.0, 0.36639, 0.36844),
    ];
    let reference = GaussianParams::standard(10);
    let mut data_rng = stream_rng(derive_seed(0xACC2, 999), 0);
    let dataset = sample_mvn(&reference, 500, &mut data_rng).unwrap();
    let fitted = sample_moments(&dataset).unwrap();

    let mut failures = Vec::new();
    let mut detail = Vec::new();
    for (i, (expo, mc_target, fit_target)) in cases.iter().enumerate() {
        let sigma = bandwidth_dim_power(10, *expo).unwrap();
        let sims =
            monte_carlo_null(&reference, 500, sigma, 2000, derive_seed(0xACC2, i as u64)).unwrap();
        let q05 = empirical_upper_quantile(&sims, 0.05);
        if (q05 - mc_target).abs() > 0.03 {
            failures.push(format!("sigma=10^-{expo}: MC quantile {q05:.5} vs {mc_target}"));
        }

        let fit = fit_chisq(&asymptotic_moments(&fitted, sigma).unwrap()).unwrap();
        let t = chisq_quantile(&fit, 0.05).unwrap();
        if (t - fit_target).abs() > 0.02 {
            failures.push(format!("sigma=10^-{expo}: moment fit {t:.5} vs {fit_target}"));
        }
        detail.push(format!("10^-{expo}: {q05:.4}/{t:.4}"));
    }

    report(
        "criterion 2 (null quantiles, d=10 n=500)",
        failures,
        format!("MC/fit 5% quantiles {}", detail.join(", ")),
    );
}

/// Criterion 3: the moment-fit 5% quantile at d = 300, n = 500, σ = 1/300
/// lands within ±0.005 of 0.32168.
#[test]
fn criterion_3_high_dimension_moment_fit() {
    let sigma = bandwidth_dim_power(300, 1.0).unwrap();
    let mut rng = stream_rng(0xACC3, 0);
    let dataset = sample_mvn(&GaussianParams::standard(300), 500, &mut rng).unwrap();
    let fit = fit_chisq(&asymptotic_moments(&sample_moments(&dataset).unwrap(), sigma).unwrap()).unwrap();
    let t = chisq_quantile(&fit, 0.05).unwrap();

    let mut failures = Vec::new();
    if (t - 0.32168).abs() > 0.005 {
        failures.push(format!("t05 {t:.5} vs 0.32168 +-0.005"));
    }
    report(
        "criterion 3 (moment fit, d=300 n=500)",
        failures,
        format!("t05 = {t:.5} (target 0.32168 +- 0.005)"),
    );
}

/// Criterion 4: power against standardized alternatives at σ = d^{−1},
/// 200 replications, thresholds from 2000-iteration Monte-Carlo nulls.
#[test]
fn criterion_4_power_reproduction() {
    let exp10 = AlternativeSpec::new(Family::ExponentialStd, 10, Correlation::Independent).unwrap();
    let exp300 = AlternativeSpec::new(Family::ExponentialStd, 300, Correlation::Independent).unwrap();
    let uni300 = AlternativeSpec::new(Family::UniformStd, 300, Correlation::Independent).unwrap();
    let s10 = bandwidth_dim_power(10, 1.0).unwrap();
    let s300 = bandwidth_dim_power(300, 1.0).unwrap();
    let mc = |iters| ThresholdSource::MonteCarlo { null_iterations: iters };

    let p1 = power_experiment(&exp10, 200, s10, 0.05, 200, mc(2000), 0xACC4).unwrap();
    let p2 = power_experiment(&exp300, 200, s300, 0.05, 200, mc(2000), 0xACC4 + 1).unwrap();

    // The two n = 500 alternatives share one null threshold.
    let sims = monte_carlo_null(&GaussianParams::standard(300), 500, s300, 2000, 0xACC4 + 2).unwrap();
    let t500 = empirical_upper_quantile(&sims, 0.05);
    let fixed = ThresholdSource::Fixed { value: t500, source: Engine::MonteCarlo };
    let p3 = power_experiment(&exp300, 500, s300, 0.05, 200, fixed, 0xACC4 + 3).unwrap();
    let p4 = power_experiment(&uni300, 500, s300, 0.05, 200, fixed, 0xACC4 + 4).unwrap();

    let mut failures = Vec::new();
    if p1.power < 0.99 {
        failures.push(format!("exp d=10 n=200: power {} < 0.99", p1.power));
    }
    if (p2.power - 0.901).abs() > 0.06 {
        failures.push(format!("exp d=300 n=200: power {} vs 0.901 +- 0.06", p2.power));
    }
    if p3.power < 0.99 {
        failures.push(format!("exp d=300 n=500: power {} < 0.99", p3.power));
    }
    if p4.power > 0.02 {
        failures.push(format!("uniform d=300 n=500: power {} > 0.02", p4.power));
    }
    report(
        "criterion 4 (power reproduction)",
        failures,
        format!(
            "exp10/200={}, exp300/200={}, exp300/500={}, uni300/500={}",
            p1.power, p2.power, p3.power, p4.power
        ),
    );
}

/// Qualitative stand-in for the correlated-design table: banded-correlation
/// exponential power exceeds the independent-case power at d = 300, n = 200
/// over five seeds in aggregate.
#[test]
fn criterion_4b_banded_power_exceeds_independent() {
    let sigma = bandwidth_dim_power(300, 1.0).unwrap();
    let banded =
        AlternativeSpec::new(Family::ExponentialStd, 300, Correlation::BandedGeometric).unwrap();
    let indep =
        AlternativeSpec::new(Family::ExponentialStd, 300, Correlation::Independent).unwrap();

    let sims = monte_carlo_null(&GaussianParams::standard(300), 200, sigma, 2000, 0xACCB).unwrap();
    let threshold = ThresholdSource::Fixed {
        value: empirical_upper_quantile(&sims, 0.05),
        source: Engine::MonteCarlo,
    };

    let (mut banded_rejections, mut indep_rejections) = (0usize, 0usize);
    for s in 0..5u64 {
        banded_rejections += power_experiment(&banded, 200, sigma, 0.05, 200, threshold, derive_seed(0xACCB, 10 + s))
            .unwrap()
            .rejections;
        indep_rejections += power_experiment(&indep, 200, sigma, 0.05, 200, threshold, derive_seed(0xACCB, 20 + s))
            .unwrap()
            .rejections;
    }

    let mut failures = Vec::new();
    if banded_rejections <= indep_rejections {
        failures.push(format!(
            "banded {banded_rejections}/1000 not above independent {indep_rejections}/1000"
        ));
    }
    report(
        "criterion 4b (banded vs independent power)",
        failures,
        format!("banded {banded_rejections}/1000 vs independent {indep_rejections}/1000"),
    );
}

/// Criterion 5: size of the moment-fit test at the 5% level under
/// N(0, I_10), n = 500: between 3% and 8% over 1000 replications.
#[test]
fn criterion_5_size_control() {
    let spec = AlternativeSpec::new(Family::Gaussian, 10, Correlation::Independent).unwrap();
    let sigma = bandwidth_dim_power(10, 1.0).unwrap();
    let report_data = power_experiment(
        &spec,
        500,
        sigma,
        0.05,
        1000,
        ThresholdSource::MomentChisq { refit: true },
        0xACC5,
    )
    .unwrap();

    let mut failures = Vec::new();
    if !(0.03..=0.08).contains(&report_data.power) {
        failures.push(format!("rejection rate {} outside [0.03, 0.08]", report_data.power));
    }
    report(
        "criterion 5 (size control)",
        failures,
        format!("rejection rate {} over 1000 replications", report_data.power),
    );
}

/// Criterion 6: the whole moment-fit quantile path (sample moments, closed
/// forms, cumulant fit, inversion) finishes in under a second at d = 300.
#[test]
fn criterion_6_moment_quantile_timing() {
    let mut rng = stream_rng(0xACC6, 0);
    let dataset = sample_mvn(&GaussianParams::standard(300), 500, &mut rng).unwrap();

    let mut times = Vec::new();
    let mut t = 0.0;
    for _ in 0..3 {
        let start = Instant::now();
        let params = sample_moments(&dataset).unwrap();
        let fit = fit_chisq(&asymptotic_moments(&params, 1.0 / 300.0).unwrap()).unwrap();
        t = chisq_quantile(&fit, 0.05).unwrap();
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_unstable_by(f64::total_cmp);
    let median = times[1];

    let mut failures = Vec::new();
    if median >= 1.0 {
        failures.push(format!("median {median:.3}s >= 1s"));
    }
    report(
        "criterion 6 (moment quantile timing, d=300)",
        failures,
        format!("median {median:.4}s over 3 runs (t05 = {t:.5})"),
    );
}

/// Criterion 7: the always-runnable property bundle.
#[test]
fn criterion_7_property_suite() {
    let mut failures = Vec::new();
    let mut rng = stream_rng(0xACC7, 0);

    // n = 1 gives a statistic of exactly 0.
    for _ in 0..20 {
        let d = rng.random_range(1..=8);
        let row = DMatrix::from_fn(1, d, |_, _| rng.random::<f64>() * 10.0 - 5.0);
        let sigma = 0.05 + rng.random::<f64>() * 3.0;
        let v = mmd_sq_statistic(&Dataset::new(row).unwrap(), sigma).unwrap();
        if v != 0.0 {
            failures.push(format!("n=1 statistic {v:e} != 0"));
        }
    }

    // Translation and orthogonal invariance of the statistic to 1e-9.
    let base_data = DMatrix::from_fn(50, 6, |_, _| rng.random::<f64>() * 4.0 - 2.0);
    let base = mmd_sq_statistic(&Dataset::new(base_data.clone()).unwrap(), 0.4).unwrap();
    let shift = DVector::from_fn(6, |_, _| rng.random::<f64>() * 30.0 - 15.0);
    let mut shifted = base_data.clone();
    for mut row in shifted.row_iter_mut() {
        row += shift.transpose();
    }
    let moved = mmd_sq_statistic(&Dataset::new(shifted).unwrap(), 0.4).unwrap();
    if (base - moved).abs() > 1e-9 * (1.0 + base) {
        failures.push(format!("translation moved statistic by {:e}", base - moved));
    }
    let q = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() * 2.0 - 1.0).qr().q();
    let rotated = mmd_sq_statistic(&Dataset::new(&base_data * q.transpose()).unwrap(), 0.4).unwrap();
    if (base - rotated).abs() > 1e-9 * (1.0 + base) {
        failures.push(format!("rotation moved statistic by {:e}", base - rotated));
    }

    // f_inner symmetry and Gram PSD-ness.
    let params = random_psd_params(3, &mut rng);
    let fctx = FInnerContext::new(EmbeddingContext::new(params.clone(), 0.35).unwrap());
    for _ in 0..50 {
        let x = DVector::from_fn(3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = DVector::from_fn(3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let xy = f_inner(&fctx, &x, &y).unwrap();
        let yx = f_inner(&fctx, &y, &x).unwrap();
        if (xy - yx).abs() > 1e-10 {
            failures.push(format!("f_inner asymmetry {:e}", xy - yx));
            break;
        }
    }
    let pts: Vec<_> = (0..40)
        .map(|_| {
            fctx.prepare(&DVector::from_fn(3, |_, _| rng.random::<f64>() * 4.0 - 2.0)).unwrap()
        })
        .collect();
    let gram = DMatrix::from_fn(40, 40, |i, j| fctx.eval_prepared(&pts[i], &pts[j]));
    let eigs = gram.symmetric_eigenvalues();
    if eigs.min() < -1e-8 * eigs.max().max(1.0) {
        failures.push(format!("Gram eigenvalue {:e} below tolerance", eigs.min()));
    }

    // Kernel sanity: unit diagonal.
    let z = DVector::from_row_slice(&[0.3, -0.7]);
    if gaussian_kernel(&z, &z, 2.0).unwrap() != 1.0 {
        failures.push("kernel diagonal != 1".to_string());
    }

    // Cumulant fit round-trip identity.
    for _ in 0..50 {
        let e = 0.01 + rng.random::<f64>() * 5.0;
        let v = 0.01 + rng.random::<f64>() * 5.0;
        let fit = fit_chisq(&MomentPair::new(e, v).unwrap()).unwrap();
        if (fit.c * fit.r - e).abs() > 1e-12 * e
            || (2.0 * fit.c * fit.c * fit.r - v).abs() > 1e-12 * v
        {
            failures.push("cumulant fit round-trip broke".to_string());
            break;
        }
    }

    // Quantile / p-value inverse round-trip to 1e-9.
    for &(c, r) in &[(1.0, 1.0), (0.004, 320.0), (2.5, 0.6), (1e-4, 5e4)] {
        for alpha in [0.01, 0.05, 0.1, 0.5] {
            let fit = ChiSqFit { c, r };
            let t = chisq_quantile(&fit, alpha).unwrap();
            let p = p_value(&fit, t).unwrap();
            if (p - alpha).abs() > 1e-9 {
                failures.push(format!("round trip c={c} r={r} alpha={alpha}: p={p}"));
            }
        }
    }

    // Fixed-seed bit-reproducibility across thread counts.
    let reference = GaussianParams::standard(3);
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let run1 = pool1.install(|| monte_carlo_null(&reference, 100, 0.5, 200, 77).unwrap());
    let run4 = pool4.install(|| monte_carlo_null(&reference, 100, 0.5, 200, 77).unwrap());
    if run1 != run4 {
        failures.push("Monte-Carlo null differs between 1 and 4 threads".to_string());
    }
    let rerun = pool4.install(|| monte_carlo_null(&reference, 100, 0.5, 200, 77).unwrap());
    if run4 != rerun {
        failures.push("Monte-Carlo null not reproducible across runs".to_string());
    }

    report(
        "criterion 7 (property suite)",
        failures,
        "exact-zero, invariances, symmetry/PSD, fit and quantile round-trips, thread determinism"
            .to_string(),
    );
}
