//! Result records, empirical cCDFs and the CSV files consumed by the plots.
//!
//! * `results_<metric>.csv`: `method,snr_db,id,value`, one row per sample or
//!   constellation.
//! * `eccdf_<metric>.csv`: `snr_db,s,<method>...`, the fraction of values
//!   strictly greater than `s` for every method, on the union of all
//!   observed values at that SNR.
//! * `trace_<precoder>.csv`: `method,snr_db,iteration,sum_rate`, the mean
//!   true-channel sum-rate over constellations after each iteration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Nse,
    SumRate,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Nse => "nse",
            Metric::SumRate => "sum_rate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub method: String,
    pub snr_db: f64,
    pub id: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub method: String,
    pub snr_db: f64,
    pub iteration: usize,
    pub sum_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub precoder: String,
    pub points: Vec<TracePoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub metric: Metric,
    pub records: Vec<Record>,
    pub traces: Vec<Trace>,
}

impl ExperimentResult {
    /// Values of one method at one SNR, in id order.
    pub fn values(&self, method: &str, snr_db: f64) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.method == method && r.snr_db == snr_db)
            .map(|r| r.value)
            .collect()
    }

    /// Method labels in first-appearance order.
    pub fn methods(&self) -> Vec<String> {
        first_appearance(self.records.iter().map(|r| r.method.as_str()))
    }
}

fn first_appearance<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in labels {
        if !out.iter().any(|m| m == l) {
            out.push(l.to_string());
        }
    }
    out
}

fn snrs_of(records: &[Record]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for r in records {
        if !out.contains(&r.snr_db) {
            out.push(r.snr_db);
        }
    }
    out
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::arg("eccdf input contains NaN"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Fraction of `sorted` strictly greater than `s`.
fn exceed(sorted: &[f64], s: f64) -> f64 {
    let not_greater = sorted.partition_point(|&v| v <= s);
    (sorted.len() - not_greater) as f64 / sorted.len() as f64
}

/// `(s, P(metric > s))` at every distinct value `s`, ascending.
pub fn eccdf(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::arg("eccdf of an empty sample"));
    }
    let v = sorted(values)?;
    let mut grid = v.clone();
    grid.dedup();
    Ok(grid.into_iter().map(|s| (s, exceed(&v, s))).collect())
}

/// `P(metric > s)` for an arbitrary threshold.
pub fn eccdf_at(values: &[f64], s: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("eccdf of an empty sample"));
    }
    Ok(exceed(&sorted(values)?, s))
}

pub fn results_path(dir: &Path, metric: Metric) -> PathBuf {
    dir.join(format!("results_{}.csv", metric.name()))
}

pub fn eccdf_path(dir: &Path, metric: Metric) -> PathBuf {
    dir.join(format!("eccdf_{}.csv", metric.name()))
}

pub fn trace_path(dir: &Path, precoder: &str) -> PathBuf {
    dir.join(format!("trace_{precoder}.csv"))
}

pub fn write_records(path: &Path, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Wide cCDF table for every SNR and method in `records`.
pub fn write_eccdf(path: &Path, records: &[Record]) -> Result<()> {
    let methods = first_appearance(records.iter().map(|r| r.method.as_str()));
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["snr_db".to_string(), "s".to_string()];
    header.extend(methods.iter().cloned());
    w.write_record(&header)?;
    for snr in snrs_of(records) {
        let columns = methods
            .iter()
            .map(|m| {
                let vals: Vec<f64> = records
                    .iter()
                    .filter(|r| r.snr_db == snr && &r.method == m)
                    .map(|r| r.value)
                    .collect();
                sorted(&vals)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grid: Vec<f64> = columns.iter().flatten().copied().collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        for s in grid {
            let mut row = vec![snr.to_string(), s.to_string()];
            for col in &columns {
                row.push(if col.is_empty() { String::new() } else { exceed(col, s).to_string() });
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(path: &Path, points: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes all CSV files of `result` into `dir` and returns their paths.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = vec![results_path(dir, result.metric), eccdf_path(dir, result.metric)];
    write_records(&written[0], &result.records)?;
    write_eccdf(&written[1], &result.records)?;
    for t in &result.traces {
        let p = trace_path(dir, &t.precoder);
        write_trace(&p, &t.points)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub method: String,
    pub snr_db: f64,
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean.
    pub std_err: f64,
}

/// Mean and standard error per method and SNR.
pub fn summarize(records: &[Record]) -> Vec<Summary> {
    let methods = first_appearance(records.iter().map(|r| r.method.as_str()));
    let mut out = Vec::new();
    for snr in snrs_of(records) {
        for m in &methods {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.snr_db == snr && &r.method == m)
                .map(|r| r.value)
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            out.push(Summary {
                method: m.clone(),
                snr_db: snr,
                count: vals.len(),
                mean,
                std_err: (var / n).sqrt(),
            });
        }
    }
    out
}
