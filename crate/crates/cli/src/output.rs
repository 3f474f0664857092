//! Sample CSV and summary JSON files.
//!
//! Samples: header `x1,…,xd`, one row per sample, every float written as
//! `{:.16e}` (17 significant digits), so reloading is bit-exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::report::{BenchRow, RunReport, SCHEMA_VERSION};
use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_samples_csv(path: &Path, samples: &[Vec<f64>]) -> Result<(), CliError> {
    let dim = samples.first().map_or(0, Vec::len);
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for row in samples {
            debug_assert_eq!(row.len(), dim);
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                first = false;
                write!(w, "{v:.16e}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    write().map_err(|e| io_err(path, e))
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| io_err(path, "empty file"))?;
    let dim = header.split(',').filter(|s| !s.is_empty()).count();
    for (i, name) in header.split(',').enumerate() {
        if name != format!("x{}", i + 1) {
            return Err(io_err(path, format!("unexpected column {name:?}")));
        }
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| io_err(path, format!("line {}: {e}", k + 2)))?;
            if row.len() != dim {
                return Err(io_err(
                    path,
                    format!("line {}: {} fields, expected {dim}", k + 2, row.len()),
                ));
            }
            Ok(row)
        })
        .collect()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Loads a summary, rejecting other schema versions by name.
pub fn read_report(path: &Path) -> Result<RunReport, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
    let version = raw.get("schema_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(SCHEMA_VERSION)) {
        return Err(io_err(
            path,
            format!("schema version mismatch: file has {version:?}, reader expects {SCHEMA_VERSION}"),
        ));
    }
    serde_json::from_value(raw).map_err(|e| io_err(path, e))
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<(), CliError> {
    let mut out = String::from(
        "method,eps,schedule_len,n_chains,total_score_queries,queries_per_chain,ks,ks_p_value,mean_error,samples_file\n",
    );
    for r in rows {
        let method = serde_json::to_value(r.method).map_err(|e| io_err(path, e))?;
        out.push_str(&format!(
            "{},{:.16e},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            method.as_str().unwrap_or_default(),
            r.eps,
            r.schedule_len,
            r.n_chains,
            r.total_score_queries,
            r.queries_per_chain,
            r.ks,
            r.ks_p_value,
            r.mean_error,
            r.samples_file
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_reload_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let rows = vec![vec![0.1, -1e-300, std::f64::consts::PI], vec![1.0 / 3.0, 5e300, -0.0]];
        write_samples_csv(&path, &rows).unwrap();
        let back = read_samples_csv(&path).unwrap();
        for (a, b) in rows.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x1,x2,x3\n1.0000000000000001e-1,"), "{text}");
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "x1,x2\n1.0,2.0\n3.0\n").unwrap();
        let err = read_samples_csv(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
