//! CSV output with a fixed schema and 6-significant-digit decimals.

use std::fs;
use std::io;
use std::path::Path;

use prtrade::nn::EpochMetrics;
use prtrade::{LossMethod, LossSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const HEADER: [&str; 9] = [
    "run_id",
    "method",
    "method_params",
    "temperature",
    "lambda",
    "precision",
    "recall",
    "n_samples",
    "seed",
];

/// One (temperature, λ) measurement. `lambda` is empty for sampled sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub method: String,
    pub method_params: String,
    pub temperature: f64,
    pub lambda: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl CsvRow {
    fn record(&self) -> [String; 9] {
        [
            self.run_id.clone(),
            self.method.clone(),
            self.method_params.clone(),
            sig6(self.temperature),
            self.lambda.map(sig6).unwrap_or_default(),
            sig6(self.precision),
            sig6(self.recall),
            self.n_samples.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// Like C's `%.6g`: six significant digits, trailing zeros dropped,
/// scientific notation outside `[1e-5, 1e6)`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

pub fn write_rows(path: &Path, rows: &[CsvRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(HEADER).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row.record()).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_rows(path: &Path) -> Result<Vec<CsvRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(CliError::io(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

/// Writes any table whose cells are already rendered.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_train_log(path: &Path, log: &[EpochMetrics]) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                m.method.clone(),
                sig6(m.loss),
                sig6(m.nll),
                sig6(m.mean_weight),
                sig6(m.kept_fraction),
                m.floor_hits.to_string(),
                m.batches.to_string(),
            ]
        })
        .collect();
    write_table(
        path,
        &["epoch", "method", "loss", "nll", "mean_weight", "kept_fraction", "floor_hits", "batches"],
        &rows,
    )
}

/// Hyperparameters that matter for the method, as `key=value` pairs joined
/// by `;`.
pub fn method_params(spec: &LossSpec) -> String {
    match spec.method {
        LossMethod::Nll => String::new(),
        LossMethod::Trunc | LossMethod::TruncR => format!("delta={}", sig6(spec.delta_frac)),
        LossMethod::CDiv => format!("alpha={}", sig6(spec.alpha)),
        LossMethod::TaiLr => format!("gamma={}", sig6(spec.gamma)),
        LossMethod::LambdaPr => format!("gamma={};lambda={}", sig6(spec.gamma), sig6(spec.lambda)),
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e: io::Error| io_err(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.1234567), "0.123457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(1.5e-7), "1.5e-7");
        assert_eq!(sig6(0.00012), "0.00012");
        assert_eq!(sig6(-2.5), "-2.5");
        assert_eq!(sig6(9.9999996), "10");
        assert_eq!(sig6(f64::INFINITY), "inf");
    }

    #[test]
    fn rendering_is_a_fixed_point_after_one_round() {
        for x in [0.1234567, 1e-9, 3.0, 2.0 / 3.0, 98765.4321, 7.77e12] {
            let s = sig6(x);
            assert_eq!(sig6(s.parse().unwrap()), s);
        }
    }

    #[test]
    fn rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![
            CsvRow {
                run_id: "r,1".into(),
                method: "cdiv".into(),
                method_params: "alpha=1.4".into(),
                temperature: 1.5,
                lambda: None,
                precision: 0.25,
                recall: 0.125,
                n_samples: 20000,
                seed: 7,
            },
            CsvRow {
                run_id: "r2".into(),
                method: "artcase".into(),
                method_params: String::new(),
                temperature: 0.5,
                lambda: Some(3.0),
                precision: 0.75,
                recall: 0.25,
                n_samples: 0,
                seed: 0,
            },
        ];
        write_rows(&path, &rows).unwrap();
        assert_eq!(read_rows(&path).unwrap(), rows);
        let first = fs::read(&path).unwrap();
        write_rows(&path, &read_rows(&path).unwrap()).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn empty_table_still_has_a_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_rows(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().trim(), HEADER.join(","));
        assert!(read_rows(&path).unwrap().is_empty());
    }
}
