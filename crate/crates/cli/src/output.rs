//! Rendering: aligned text (6 significant digits), deterministic JSON
//! envelopes, and flat CSV rows.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

/// Six significant digits for text mode; JSON keeps full precision.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        format!("{x:.5e}")
    } else {
        let decimals = (5 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    }
}

/// The stable top-level JSON envelope.
#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    command: &'a str,
    config: C,
    result: R,
    seed: u64,
    version: &'a str,
}

pub fn print_json<C: Serialize, R: Serialize>(command: &str, config: C, result: R, seed: u64) {
    let envelope = Envelope { command, config, result, seed, version: env!("CARGO_PKG_VERSION") };
    println!("{}", serde_json::to_string_pretty(&envelope).expect("serializable reports"));
}

pub fn print_csv_rows(header: &[&str], rows: &[Vec<String>]) {
    println!("{}", header.join(","));
    for row in rows {
        println!("{}", row.join(","));
    }
}
