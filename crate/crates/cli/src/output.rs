//! Result files. Every float goes out with 17 significant digits.

use std::fs;
use std::path::Path;

use serde::Serialize;
use trip_core::engine::SimResult;

use crate::{io_err, CliError};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), num)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| trip_core::Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Rows are owners, columns contributors.
pub fn write_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<(), CliError> {
    let n = rows.first().map_or(0, Vec::len);
    let mut header = vec!["owner".to_string()];
    header.extend((0..n).map(|j| format!("c{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| std::iter::once(i.to_string()).chain(r.iter().map(|&v| num(v))).collect())
        .collect();
    write_csv(path, &header, &body)
}

#[derive(Serialize)]
struct AuditFile<'a> {
    rounds: &'a [trip_core::RoundAudit],
    filtered_pre_models: &'a [trip_core::engine::FilterEvent],
}

/// The five files of a single simulation.
pub fn write_simulation(dir: &Path, res: &SimResult) -> Result<(), CliError> {
    let matrix: Vec<Vec<f64>> = res.contributions.iter().map(|c| c.values.clone()).collect();
    write_matrix(&dir.join("contributions.csv"), &matrix)?;

    let acc: Vec<Vec<String>> = res
        .accuracy
        .iter()
        .enumerate()
        .flat_map(|(t, row)| {
            row.iter()
                .enumerate()
                .map(move |(i, &a)| vec![t.to_string(), i.to_string(), num(a)])
        })
        .collect();
    write_csv(&dir.join("accuracy_trace.csv"), &["round", "client", "accuracy"], &acc)?;

    let lcv_rows: Vec<Vec<String>> = res
        .lcvs
        .iter()
        .flatten()
        .flat_map(|l| {
            l.nonzero()
                .map(|(j, v)| vec![l.round.to_string(), l.owner.to_string(), j.to_string(), num(v)])
                .collect::<Vec<_>>()
        })
        .collect();
    write_csv(&dir.join("lcv_archive.csv"), &["round", "owner", "j", "value"], &lcv_rows)?;

    write_json(
        &dir.join("outlier_audit.json"),
        &AuditFile {
            rounds: &res.audits,
            filtered_pre_models: &res.filtered,
        },
    )?;
    write_json(&dir.join("result.json"), res)
}
