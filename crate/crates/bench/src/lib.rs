//! Shared helpers for the criterion benchmarks.

use mmdtest_core::rng::stream_rng;
use mmdtest_core::{sample_mvn, Dataset, GaussianParams};

/// Standard-normal benchmark dataset, deterministic per (n, d).
pub fn standard_dataset(n: usize, d: usize) -> Dataset {
    let mut rng = stream_rng(0xbe9c, (n * 31 + d) as u64);
    sample_mvn(&GaussianParams::standard(d), n, &mut rng).expect("benchmark data")
}
