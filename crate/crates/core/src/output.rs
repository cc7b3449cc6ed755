//! Report serialization: CSV tables, JSON sidecars and gnuplot scripts.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::stats::{MarginalReport, ReportMetadata};

pub const REPORT_HEADER: &str = "t,mean_est,mean_err,mean_std,var_est,var_err,var_std,kl";

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per recorded time, `t` descending.
pub fn report_csv(report: &MarginalReport) -> String {
    let mut out = String::with_capacity(64 + report.rows.len() * 200);
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for r in &report.rows {
        let fields = [r.t, r.mean_est, r.mean_err, r.mean_std, r.var_est, r.var_err, r.var_std, r.kl];
        let line: Vec<String> = fields.iter().map(|&x| fmt_float(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Sidecar<'a> {
    version: &'static str,
    seed: u64,
    config: &'a ExperimentConfig,
    metadata: &'a ReportMetadata,
}

pub fn sidecar_json(config: &ExperimentConfig, report: &MarginalReport) -> String {
    let sidecar = Sidecar {
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        metadata: &report.metadata,
    };
    serde_json::to_string_pretty(&sidecar).expect("sidecar serializes")
}

/// `report.csv` -> `report.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn gnuplot_path(path: &Path) -> PathBuf {
    path.with_extension("gp")
}

/// Plots mean and variance error against `t` with `+-1 std` bars, plus KL.
pub fn gnuplot_script(csv_path: &Path) -> String {
    let file = csv_path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = csv_path.file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal pngcairo size 1500,420");
    let _ = writeln!(s, "set output '{stem}.png'");
    let _ = writeln!(s, "set multiplot layout 1,3");
    let _ = writeln!(s, "set xlabel 't'");
    let _ = writeln!(s, "set xrange [1:0]");
    let _ = writeln!(s, "set title 'error in mean'");
    let _ = writeln!(s, "plot '{file}' skip 1 using 1:3:4 with yerrorlines notitle");
    let _ = writeln!(s, "set title 'error in variance'");
    let _ = writeln!(s, "plot '{file}' skip 1 using 1:6:7 with yerrorlines notitle");
    let _ = writeln!(s, "set title 'KL divergence'");
    let _ = writeln!(s, "set logscale y");
    let _ = writeln!(s, "plot '{file}' skip 1 using 1:8 with lines notitle");
    let _ = writeln!(s, "unset multiplot");
    s
}

/// Writes the report (CSV or JSON per `config.output.format`) to `path`, its
/// metadata sidecar, and optionally a gnuplot script.
pub fn write_report(path: &Path, config: &ExperimentConfig, report: &MarginalReport, gnuplot: bool) -> io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let body = match config.output.format {
        crate::config::OutputFormat::Csv => report_csv(report),
        crate::config::OutputFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
    };
    fs::write(path, body)?;
    fs::write(sidecar_path(path), sidecar_json(config, report))?;
    if gnuplot {
        fs::write(gnuplot_path(path), gnuplot_script(path))?;
    }
    Ok(())
}

/// A small CSV table with a fixed header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}
