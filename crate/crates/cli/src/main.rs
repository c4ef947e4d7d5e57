//! `mmdtest` — Gaussian-kernel MMD normality testing from the command line.

mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mmdtest_core::{
    accuracy_experiment, asymptotic_mean, asymptotic_variance, bandwidth_dim_power,
    bandwidth_median, empirical_upper_quantile, fit_chisq, monte_carlo_null, normality_test,
    power_experiment, sample_moments, AccuracyReport, AlternativeSpec, ChiSqFit, Correlation,
    Dataset, Engine, EngineOptions, Family, GaussianParams, MomentPair, PowerReport,
    ThresholdSource,
};
use output::{fmt6, print_csv_rows, print_json, Format};

const SEED_ENV: &str = "MMDTEST_SEED";

#[derive(Parser)]
#[command(
    name = "mmdtest",
    version,
    about = "Test multivariate normality with the Gaussian-kernel maximum mean discrepancy",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the normality test on a CSV dataset (rows = observations)
    Test(TestArgs),
    /// Closed-form null moments E[Z], V[Z] and the c·chi²_r fit for a dataset
    Moments(MomentsArgs),
    /// Monte-Carlo null quantile of n·MMD² under N(0, I_d)
    NullQuantile(NullQuantileArgs),
    /// Compare engine critical points against the Monte-Carlo reference
    Accuracy(AccuracyArgs),
    /// Estimate power against a standardized alternative
    PowerSim(PowerSimArgs),
}

/// How to pick the kernel scale.
#[derive(Debug, Clone, Copy, PartialEq)]
enum SigmaSpec {
    Median,
    DimPower(f64),
    Explicit(f64),
}

impl std::str::FromStr for SigmaSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "median" {
            return Ok(SigmaSpec::Median);
        }
        if let Some(rest) = s.strip_prefix("dim-power:") {
            let e: f64 = rest.parse().map_err(|_| format!("bad exponent '{rest}'"))?;
            return Ok(SigmaSpec::DimPower(e));
        }
        if let Some(rest) = s.strip_prefix("explicit:") {
            let v: f64 = rest.parse().map_err(|_| format!("bad value '{rest}'"))?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("explicit sigma must be positive, got {v}"));
            }
            return Ok(SigmaSpec::Explicit(v));
        }
        Err(format!(
            "unknown sigma rule '{s}' (expected median, dim-power:<e>, explicit:<v>)"
        ))
    }
}

impl SigmaSpec {
    fn describe(&self) -> String {
        match self {
            SigmaSpec::Median => "median".to_string(),
            SigmaSpec::DimPower(e) => format!("dim-power:{e}"),
            SigmaSpec::Explicit(v) => format!("explicit:{v}"),
        }
    }

    /// Resolve to a concrete scale; the median rule needs the data.
    fn resolve(&self, data: Option<&Dataset>, d: usize) -> Result<f64> {
        match self {
            SigmaSpec::Median => {
                let data = data
                    .context("the median sigma rule needs a dataset; use dim-power or explicit")?;
                Ok(bandwidth_median(data)?)
            }
            SigmaSpec::DimPower(e) => Ok(bandwidth_dim_power(d, *e)?),
            SigmaSpec::Explicit(v) => Ok(*v),
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// RNG seed (fallback: $MMDTEST_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Cap internal parallelism at this many threads
    #[arg(long)]
    threads: Option<usize>,
    /// Emit a JSON envelope instead of text
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit flat CSV rows instead of text
    #[arg(long)]
    csv: bool,
}

impl CommonArgs {
    fn format(&self) -> Format {
        if self.json {
            Format::Json
        } else if self.csv {
            Format::Csv
        } else {
            Format::Text
        }
    }

    fn seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(raw) => raw
                .parse()
                .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got '{raw}'")),
            Err(_) => Ok(0),
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// CSV file of observations
    input: PathBuf,
    /// Skip one header line
    #[arg(long)]
    header: bool,
    /// Treat the file as features x samples and transpose it
    #[arg(long)]
    transpose: bool,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Kernel scale rule: median, dim-power:<e>, explicit:<v>
    #[arg(long, default_value = "median")]
    sigma: SigmaSpec,
    /// Null-quantile engine
    #[arg(long, default_value = "moment-chisq")]
    engine: Engine,
    /// Significance level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Monte-Carlo iterations (monte-carlo engine)
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Gram size for the gram-chisq engine
    #[arg(long, default_value_t = 1000)]
    gram_l: usize,
    /// Gram size for the spec engine
    #[arg(long, default_value_t = 500)]
    spec_l: usize,
    /// Simulation draws for the spec engine quantile
    #[arg(long, default_value_t = 100_000)]
    spec_draws: usize,
    /// Exit with status 2 when normality is rejected
    #[arg(long)]
    exit_code: bool,
    /// Write the parsed dataset back out as CSV
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Kernel scale rule: median, dim-power:<e>, explicit:<v>
    #[arg(long, default_value = "median")]
    sigma: SigmaSpec,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct NullQuantileArgs {
    /// Dimension of the reference N(0, I_d)
    #[arg(long)]
    d: usize,
    /// Sample size per simulated dataset
    #[arg(long)]
    n: usize,
    /// Kernel scale rule: dim-power:<e> or explicit:<v>
    #[arg(long)]
    sigma: SigmaSpec,
    /// Significance level
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Monte-Carlo iterations
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct AccuracyArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    /// Kernel scale rule: dim-power:<e> or explicit:<v>
    #[arg(long)]
    sigma: SigmaSpec,
    /// Monte-Carlo iterations for the reference quantiles
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// Engines to compare (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "moment-chisq,gram-chisq,spec")]
    engines: Vec<Engine>,
    /// Gram size for gram-chisq
    #[arg(long, default_value_t = 1000)]
    l_ii: usize,
    /// Gram size for spec
    #[arg(long, default_value_t = 500)]
    l_spec: usize,
    /// Simulation draws for the spec quantiles
    #[arg(long, default_value_t = 100_000)]
    spec_draws: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PowerSimArgs {
    /// Alternative family: gaussian, uniform, exponential
    #[arg(long)]
    family: Family,
    /// Coordinate dependence: independent or banded
    #[arg(long, default_value = "independent")]
    correlation: Correlation,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    /// Kernel scale rule: dim-power:<e> or explicit:<v>
    #[arg(long)]
    sigma: SigmaSpec,
    /// Significance level of the threshold
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Replications drawn from the alternative
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Monte-Carlo iterations behind the threshold
    #[arg(long, default_value_t = 2000)]
    null_iters: usize,
    /// Threshold source: monte-carlo or moment-chisq
    #[arg(long, default_value = "monte-carlo")]
    threshold_engine: Engine,
    /// With --threshold-engine moment-chisq: refit the threshold from each
    /// replication's own covariance (default) instead of one pilot dataset
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    refit: bool,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let ok = matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = err.print();
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn init_threads(common: &CommonArgs) -> Result<()> {
    if let Some(t) = common.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("could not configure the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Moments(args) => cmd_moments(args),
        Command::NullQuantile(args) => cmd_null_quantile(args),
        Command::Accuracy(args) => cmd_accuracy(args),
        Command::PowerSim(args) => cmd_power_sim(args),
    }
}

#[derive(Serialize)]
struct TestConfig {
    input: String,
    header: bool,
    transpose: bool,
    sigma: f64,
    sigma_rule: String,
    engine: Engine,
    alpha: f64,
    mc_iterations: usize,
    gram_l: usize,
    spec_l: usize,
    spec_draws: usize,
}

fn cmd_test(args: TestArgs) -> Result<u8> {
    init_threads(&args.common)?;
    let seed = args.common.seed()?;
    let data = input::read_dataset(&args.input.input, args.input.header, args.input.transpose)?;
    if let Some(dump) = &args.dump {
        input::dump_dataset(&data, dump)?;
    }
    if matches!(args.sigma, SigmaSpec::Median) && data.n() < 2 {
        bail!("the median sigma rule needs at least two rows; use explicit:<v> or dim-power:<e>");
    }
    let sigma = args.sigma.resolve(Some(&data), data.d())?;
    let options = EngineOptions {
        mc_iterations: args.iters,
        gram_l: args.gram_l,
        spec_l: args.spec_l,
        spec_draws: args.spec_draws,
    };
    let result = normality_test(&data, sigma, args.engine, args.alpha, &options, seed)?;

    let config = TestConfig {
        input: args.input.input.display().to_string(),
        header: args.input.header,
        transpose: args.input.transpose,
        sigma,
        sigma_rule: args.sigma.describe(),
        engine: args.engine,
        alpha: args.alpha,
        mc_iterations: args.iters,
        gram_l: args.gram_l,
        spec_l: args.spec_l,
        spec_draws: args.spec_draws,
    };
    match args.common.format() {
        Format::Json => print_json("test", config, &result, seed),
        Format::Csv => print_csv_rows(
            &[
                "n", "d", "sigma", "engine", "statistic", "delta_sq", "alpha", "critical_value",
                "p_value", "reject",
            ],
            &[vec![
                result.n.to_string(),
                result.d.to_string(),
                result.sigma.to_string(),
                result.engine.to_string(),
                result.statistic.to_string(),
                result.delta_sq.to_string(),
                result.alpha.to_string(),
                result.critical_value.to_string(),
                result.p_value.to_string(),
                result.reject.to_string(),
            ]],
        ),
        Format::Text => {
            println!(
                "test: n={} d={} sigma={} ({}) engine={}",
                result.n,
                result.d,
                fmt6(sigma),
                args.sigma.describe(),
                result.engine
            );
            println!("statistic   n*MMD^2 = {}   MMD^2 = {}", fmt6(result.statistic), fmt6(result.delta_sq));
            println!("critical    t({}) = {}", result.alpha, fmt6(result.critical_value));
            println!("p-value     {}", fmt6(result.p_value));
            println!(
                "decision    {} normality at alpha={}",
                if result.reject { "REJECT" } else { "fail to reject" },
                result.alpha
            );
        }
    }
    Ok(if args.exit_code && result.reject { 2 } else { 0 })
}

#[derive(Serialize)]
struct MomentsConfig {
    input: String,
    header: bool,
    transpose: bool,
    sigma: f64,
    sigma_rule: String,
}

#[derive(Serialize)]
struct MomentsOutput {
    n: usize,
    d: usize,
    e_z: f64,
    v_z: f64,
    fit: Option<ChiSqFit>,
}

fn cmd_moments(args: MomentsArgs) -> Result<u8> {
    init_threads(&args.common)?;
    let seed = args.common.seed()?;
    let data = input::read_dataset(&args.input.input, args.input.header, args.input.transpose)?;
    let sigma = args.sigma.resolve(Some(&data), data.d())?;
    let params = sample_moments(&data)?;
    let e_z = asymptotic_mean(&params, sigma)?;
    let v_z = asymptotic_variance(&params, sigma)?;
    let fit = MomentPair::new(e_z, v_z).and_then(|m| fit_chisq(&m)).ok();
    if fit.is_none() {
        eprintln!("warning: moments are degenerate (E[Z] = {e_z:.3e}); no chi-squared fit");
    }

    let config = MomentsConfig {
        input: args.input.input.display().to_string(),
        header: args.input.header,
        transpose: args.input.transpose,
        sigma,
        sigma_rule: args.sigma.describe(),
    };
    let out = MomentsOutput { n: data.n(), d: data.d(), e_z, v_z, fit };
    match args.common.format() {
        Format::Json => print_json("moments", config, &out, seed),
        Format::Csv => {
            let (c, r) = match &out.fit {
                Some(f) => (f.c.to_string(), f.r.to_string()),
                None => (String::new(), String::new()),
            };
            print_csv_rows(
                &["n", "d", "sigma", "e_z", "v_z", "c", "r"],
                &[vec![
                    out.n.to_string(),
                    out.d.to_string(),
                    sigma.to_string(),
                    out.e_z.to_string(),
                    out.v_z.to_string(),
                    c,
                    r,
                ]],
            );
        }
        Format::Text => {
            println!(
                "moments: n={} d={} sigma={} ({})",
                out.n,
                out.d,
                fmt6(sigma),
                args.sigma.describe()
            );
            println!("E[Z] = {}", fmt6(out.e_z));
            println!("V[Z] = {}", fmt6(out.v_z));
            match &out.fit {
                Some(f) => println!("fit   c = {}   r = {}", fmt6(f.c), fmt6(f.r)),
                None => println!("fit   degenerate (moments not positive)"),
            }
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct NullQuantileConfig {
    d: usize,
    n: usize,
    sigma: f64,
    sigma_rule: String,
    alpha: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct NullQuantileOutput {
    quantile: f64,
    alpha: f64,
    mean: f64,
    variance: f64,
    iterations: usize,
}

fn cmd_null_quantile(args: NullQuantileArgs) -> Result<u8> {
    init_threads(&args.common)?;
    let seed = args.common.seed()?;
    let sigma = args.sigma.resolve(None, args.d)?;
    let sims = monte_carlo_null(&GaussianParams::standard(args.d), args.n, sigma, args.iters, seed)?;
    let quantile = empirical_upper_quantile(&sims, args.alpha);
    let k = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / k;
    let variance = sims.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;

    let config = NullQuantileConfig {
        d: args.d,
        n: args.n,
        sigma,
        sigma_rule: args.sigma.describe(),
        alpha: args.alpha,
        iterations: args.iters,
    };
    let out = NullQuantileOutput { quantile, alpha: args.alpha, mean, variance, iterations: args.iters };
    match args.common.format() {
        Format::Json => print_json("null-quantile", config, &out, seed),
        Format::Csv => print_csv_rows(
            &["d", "n", "sigma", "alpha", "iterations", "quantile", "mean", "variance"],
            &[vec![
                args.d.to_string(),
                args.n.to_string(),
                sigma.to_string(),
                args.alpha.to_string(),
                args.iters.to_string(),
                quantile.to_string(),
                mean.to_string(),
                variance.to_string(),
            ]],
        ),
        Format::Text => {
            println!(
                "null-quantile: d={} n={} sigma={} ({}) iterations={}",
                args.d,
                args.n,
                fmt6(sigma),
                args.sigma.describe(),
                args.iters
            );
            println!("t({}) = {}", args.alpha, fmt6(quantile));
            println!("null mean = {}   null variance = {}", fmt6(mean), fmt6(variance));
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct AccuracyConfig {
    d: usize,
    n: usize,
    sigma: f64,
    sigma_rule: String,
    iterations: usize,
    engines: Vec<Engine>,
    l_ii: usize,
    l_spec: usize,
    spec_draws: usize,
}

fn cmd_accuracy(args: AccuracyArgs) -> Result<u8> {
    init_threads(&args.common)?;
    if args.engines.contains(&Engine::MonteCarlo) {
        bail!("monte-carlo is the reference of the accuracy study; pick engines among moment-chisq, gram-chisq, spec");
    }
    let seed = args.common.seed()?;
    let sigma = args.sigma.resolve(None, args.d)?;
    let report = accuracy_experiment(
        args.d,
        args.n,
        sigma,
        &args.engines,
        args.iters,
        args.l_ii,
        args.l_spec,
        args.spec_draws,
        seed,
    )?;

    let config = AccuracyConfig {
        d: args.d,
        n: args.n,
        sigma,
        sigma_rule: args.sigma.describe(),
        iterations: args.iters,
        engines: args.engines.clone(),
        l_ii: args.l_ii,
        l_spec: args.l_spec,
        spec_draws: args.spec_draws,
    };
    match args.common.format() {
        Format::Json => print_json("accuracy", config, &report, seed),
        Format::Csv => print_csv_rows(
            &["engine", "t_10", "t_05", "t_01", "d_metric", "seconds"],
            &accuracy_csv_rows(&report),
        ),
        Format::Text => render_accuracy_text(&args, sigma, &report),
    }
    Ok(0)
}

fn accuracy_csv_rows(report: &AccuracyReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "reference".to_string(),
        report.reference[0].to_string(),
        report.reference[1].to_string(),
        report.reference[2].to_string(),
        String::new(),
        String::new(),
    ]];
    for e in &report.engines {
        rows.push(vec![
            e.engine.to_string(),
            e.quantiles[0].to_string(),
            e.quantiles[1].to_string(),
            e.quantiles[2].to_string(),
            e.d_metric.to_string(),
            e.seconds.to_string(),
        ]);
    }
    rows
}

fn render_accuracy_text(args: &AccuracyArgs, sigma: f64, report: &AccuracyReport) {
    println!(
        "accuracy: d={} n={} sigma={} ({}) iterations={} seed={}",
        report.d,
        report.n,
        fmt6(sigma),
        args.sigma.describe(),
        report.iterations,
        report.seed
    );
    println!(
        "{:<14} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "engine", "t(10%)", "t(5%)", "t(1%)", "D", "seconds"
    );
    println!(
        "{:<14} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "reference",
        fmt6(report.reference[0]),
        fmt6(report.reference[1]),
        fmt6(report.reference[2]),
        "-",
        "-"
    );
    for e in &report.engines {
        println!(
            "{:<14} {:>12} {:>12} {:>12} {:>12} {:>10}",
            e.engine.to_string(),
            fmt6(e.quantiles[0]),
            fmt6(e.quantiles[1]),
            fmt6(e.quantiles[2]),
            fmt6(e.d_metric),
            format!("{:.3}", e.seconds)
        );
    }
}

#[derive(Serialize)]
struct PowerConfig {
    family: Family,
    correlation: Correlation,
    d: usize,
    n: usize,
    sigma: f64,
    sigma_rule: String,
    alpha: f64,
    replications: usize,
    null_iterations: usize,
    threshold_engine: Engine,
    refit: bool,
}

fn cmd_power_sim(args: PowerSimArgs) -> Result<u8> {
    init_threads(&args.common)?;
    let seed = args.common.seed()?;
    let sigma = args.sigma.resolve(None, args.d)?;
    let spec = AlternativeSpec::new(args.family, args.d, args.correlation)?;
    let threshold = match args.threshold_engine {
        Engine::MonteCarlo => ThresholdSource::MonteCarlo { null_iterations: args.null_iters },
        Engine::MomentChisq => ThresholdSource::MomentChisq { refit: args.refit },
        other => bail!("--threshold-engine must be monte-carlo or moment-chisq, got {other}"),
    };
    let report = power_experiment(&spec, args.n, sigma, args.alpha, args.reps, threshold, seed)?;

    let config = PowerConfig {
        family: args.family,
        correlation: args.correlation,
        d: args.d,
        n: args.n,
        sigma,
        sigma_rule: args.sigma.describe(),
        alpha: args.alpha,
        replications: args.reps,
        null_iterations: args.null_iters,
        threshold_engine: args.threshold_engine,
        refit: args.refit,
    };
    match args.common.format() {
        Format::Json => print_json("power-sim", config, &report, seed),
        Format::Csv => print_csv_rows(
            &[
                "family", "correlation", "d", "n", "sigma", "alpha", "replications", "rejections",
                "power", "threshold", "threshold_source",
            ],
            &[power_csv_row(&report)],
        ),
        Format::Text => {
            println!(
                "power-sim: family={} correlation={} d={} n={} sigma={} ({})",
                report.family.as_str(),
                report.correlation.as_str(),
                report.d,
                report.n,
                fmt6(sigma),
                args.sigma.describe()
            );
            println!(
                "threshold t({}) = {} ({})",
                report.alpha,
                fmt6(report.threshold),
                report.threshold_source
            );
            println!(
                "power = {} ({}/{} rejections)",
                fmt6(report.power),
                report.rejections,
                report.replications
            );
        }
    }
    Ok(0)
}

fn power_csv_row(report: &PowerReport) -> Vec<String> {
    vec![
        report.family.as_str().to_string(),
        report.correlation.as_str().to_string(),
        report.d.to_string(),
        report.n.to_string(),
        report.sigma.to_string(),
        report.alpha.to_string(),
        report.replications.to_string(),
        report.rejections.to_string(),
        report.power.to_string(),
        report.threshold.to_string(),
        report.threshold_source.to_string(),
    ]
}
