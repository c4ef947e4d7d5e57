//! CSV dataset ingestion: UTF-8, comma-delimited, decimal floats, optional
//! single header line, optional transposition for features-by-samples files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

use mmdtest_core::Dataset;

pub fn read_dataset(path: &Path, header: bool, transpose: bool) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let header_offset = usize::from(header);
    for (i, record) in reader.records().enumerate() {
        let line = i + 1 + header_offset;
        let record = record.with_context(|| format!("malformed CSV record on line {line}"))?;
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                anyhow::anyhow!("non-numeric cell '{field}' at row {line}, column {}", j + 1)
            })?;
            if !value.is_finite() {
                bail!("non-finite value '{field}' at row {line}, column {}", j + 1);
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{} contains no data rows", path.display());
    }
    let width = rows[0].len();
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        bail!(
            "ragged CSV: row {} has {} columns, expected {width}",
            i + 1 + header_offset,
            row.len()
        );
    }

    let (n, d) = if transpose { (width, rows.len()) } else { (rows.len(), width) };
    let values = DMatrix::from_fn(n, d, |i, j| if transpose { rows[j][i] } else { rows[i][j] });
    Dataset::new(values).map_err(Into::into)
}

/// Write the (post-transpose) dataset back out; `{}` on f64 prints the
/// shortest representation that round-trips, so re-parsing is lossless.
pub fn dump_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut out =
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let v = data.values();
    for i in 0..data.n() {
        let line: Vec<String> = (0..data.d()).map(|j| v[(i, j)].to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
