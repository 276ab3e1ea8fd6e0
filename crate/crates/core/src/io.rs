//! Dataset and artifact files.
//!
//! Two dataset formats: a four-column CSV of precomputed entropies and 0/1
//! losses, and a JSONL of raw per-class probability vectors plus a label from
//! which losses and (optionally temperature-calibrated) entropies are
//! computed at ingest. Policies and metric maps round-trip through JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{loss, validate_distribution, Dataset, LossKind, Sample};
use crate::error::{Error, Result};
use crate::experiment::{EvalCell, EvalReport};
use crate::metric::{apply_temperature, calibrate_temperature, entropy, MetricMap};
use crate::multi::{GridSearchReport, MultiReport};
use crate::policy::PolicyTable;
use crate::sim::{OddsBin, TokenHistogram};

const CSV_HEADER: [&str; 4] = ["id", "entropy", "loss_weak", "loss_strong"];

/// Reads the four-column dataset CSV. Errors carry 1-based file line numbers
/// (the header is line 1).
pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Malformed {
            line: 1,
            reason: format!(
                "header must be `{}`, got `{}`",
                CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 4 {
            return Err(Error::Malformed {
                line,
                reason: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let field = |k: usize| -> Result<f64> {
            let raw = &record[k];
            let v: f64 = raw.parse().map_err(|_| Error::Malformed {
                line,
                reason: format!("`{raw}` is not a number in column {}", CSV_HEADER[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Malformed {
                    line,
                    reason: format!("non-finite value in column {}", CSV_HEADER[k]),
                });
            }
            Ok(v)
        };
        samples.push((Sample::new(record[0].to_string(), field(1)?, field(2)?, field(3)?), line));
    }
    dataset_with_line_context(samples)
}

/// Writes the dataset back out in the same four-column CSV layout.
pub fn write_dataset_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(CSV_HEADER)?;
    for s in data.iter() {
        writer.write_record([
            s.id.as_str(),
            &s.entropy.to_string(),
            &s.loss_weak.to_string(),
            &s.loss_strong.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// One raw JSONL row: class distributions from both models plus the true
/// label index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub weak_probs: Vec<f64>,
    pub strong_probs: Vec<f64>,
    pub label: usize,
}

/// Raw ingest output: the derived dataset and the temperature used for the
/// entropies (1.0 when calibration is off).
#[derive(Debug, Clone)]
pub struct RawIngest {
    pub dataset: Dataset,
    pub temperature: f64,
}

/// Reads raw probability rows, computes losses under `kind`, optionally fits
/// a shared softmax temperature on the weak distributions, and fills in
/// entropies of the (calibrated) weak distributions.
pub fn read_dataset_jsonl(
    path: impl AsRef<Path>,
    kind: LossKind,
    calibrate: bool,
) -> Result<RawIngest> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let row: RawRecord = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        validate_distribution(&row.weak_probs).map_err(|e| Error::Malformed {
            line: line_no,
            reason: format!("weak_probs of `{}`: {e}", row.id),
        })?;
        validate_distribution(&row.strong_probs).map_err(|e| Error::Malformed {
            line: line_no,
            reason: format!("strong_probs of `{}`: {e}", row.id),
        })?;
        if row.label >= row.weak_probs.len() || row.label >= row.strong_probs.len() {
            return Err(Error::Malformed {
                line: line_no,
                reason: format!("label {} out of range for `{}`", row.label, row.id),
            });
        }
        rows.push((row, line_no));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let temperature = if calibrate {
        for (row, _) in &rows {
            if row.weak_probs[row.label] <= 0.0 {
                return Err(Error::CalibrationInfeasible { id: row.id.clone() });
            }
        }
        let probs: Vec<Vec<f64>> = rows.iter().map(|(r, _)| r.weak_probs.clone()).collect();
        let labels: Vec<usize> = rows.iter().map(|(r, _)| r.label).collect();
        calibrate_temperature(&probs, &labels)?.temperature
    } else {
        1.0
    };
    let mut samples = Vec::with_capacity(rows.len());
    for (row, line) in rows {
        let h = if temperature == 1.0 {
            entropy(&row.weak_probs)?
        } else {
            entropy(&apply_temperature(&row.weak_probs, temperature)?)?
        };
        let lw = loss(&row.weak_probs, row.label, kind)?;
        let ls = loss(&row.strong_probs, row.label, kind)?;
        samples.push((Sample::new(row.id, h, lw, ls), line));
    }
    Ok(RawIngest { dataset: dataset_with_line_context(samples)?, temperature })
}

/// Duplicate-id detection with real file line numbers, then the usual
/// dataset construction.
fn dataset_with_line_context(samples: Vec<(Sample, usize)>) -> Result<Dataset> {
    let mut seen = std::collections::HashSet::new();
    for (s, line) in &samples {
        if !seen.insert(s.id.as_str().to_owned()) {
            return Err(Error::DuplicateId { id: s.id.clone(), line: *line });
        }
    }
    Dataset::from_samples(samples.into_iter().map(|(s, _)| s).collect())
}

/// Writes any report or artifact as pretty JSON with a trailing newline.
pub fn save_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let reader = BufReader::new(File::open(path.as_ref())?);
    Ok(serde_json::from_reader(reader)?)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyTable> {
    let policy: PolicyTable = load_json(path)?;
    policy.validate()?;
    Ok(policy)
}

pub fn load_metric_map(path: impl AsRef<Path>) -> Result<MetricMap> {
    let map: MetricMap = load_json(path)?;
    map.validate()?;
    Ok(map)
}

/// Flattens an evaluation report to one CSV row per fold, cell, and policy.
/// The reference rows (bound and single-model losses) have no simulation
/// columns.
pub fn write_eval_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["fold", "r", "b", "policy", "avg_loss", "std_err", "realized_rate", "offloads"])?;
    for fold in &report.folds {
        for cell in &fold.cells {
            let key = |policy: &str| {
                [fold.fold.to_string(), cell.rate.to_string(), cell.burst.to_string(), policy.into()]
            };
            let sims = [("mdp", &cell.mdp), ("naive", &cell.naive)];
            for (name, sim) in sims {
                let mut row: Vec<String> = key(name).into();
                row.extend([
                    sim.avg_loss.to_string(),
                    sim.loss_std_err.to_string(),
                    sim.realized_rate.to_string(),
                    sim.offloads.to_string(),
                ]);
                w.write_record(&row)?;
            }
            let refs = [
                ("lower_bound", cell.lower_bound),
                ("weak_only", cell.weak_only),
                ("strong_only", cell.strong_only),
            ];
            for (name, value) in refs {
                let mut row: Vec<String> = key(name).into();
                row.extend([value.to_string(), String::new(), String::new(), String::new()]);
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Flattens one simulated (r, b) cell to a CSV row per policy: the eval
/// layout without the fold column.
pub fn write_sim_csv(path: impl AsRef<Path>, cell: &EvalCell) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["r", "b", "policy", "avg_loss", "std_err", "realized_rate", "offloads"])?;
    let key = |policy: &str| [cell.rate.to_string(), cell.burst.to_string(), policy.into()];
    for (name, sim) in [("mdp", &cell.mdp), ("naive", &cell.naive)] {
        let mut row: Vec<String> = key(name).into();
        row.extend([
            sim.avg_loss.to_string(),
            sim.loss_std_err.to_string(),
            sim.realized_rate.to_string(),
            sim.offloads.to_string(),
        ]);
        w.write_record(&row)?;
    }
    let refs = [
        ("lower_bound", cell.lower_bound),
        ("weak_only", cell.weak_only),
        ("strong_only", cell.strong_only),
    ];
    for (name, value) in refs {
        let mut row: Vec<String> = key(name).into();
        row.extend([value.to_string(), String::new(), String::new(), String::new()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a fleet report as one aggregate row plus one row per device.
pub fn write_multi_csv(path: impl AsRef<Path>, report: &MultiReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "scope",
        "strategy",
        "avg_loss",
        "realized_rate",
        "offloads",
        "switch_drops",
        "switch_drop_rate",
    ])?;
    w.write_record([
        "aggregate".into(),
        report.strategy.to_string(),
        report.avg_loss.to_string(),
        report.realized_rate.to_string(),
        report.offloads.to_string(),
        report.switch_drops.to_string(),
        report.switch_drop_rate.to_string(),
    ])?;
    for (d, dev) in report.devices.iter().enumerate() {
        w.write_record([
            format!("device_{d}"),
            report.strategy.to_string(),
            dev.avg_loss.to_string(),
            dev.realized_rate.to_string(),
            dev.offloads.to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the oversubscription grid surface.
pub fn write_grid_csv(path: impl AsRef<Path>, report: &GridSearchReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["r_prime", "b_prime", "avg_loss", "switch_drop_rate"])?;
    for cell in &report.cells {
        w.write_record([
            cell.r_prime.to_string(),
            cell.b_prime.to_string(),
            cell.avg_loss.to_string(),
            cell.switch_drop_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-bin offload odds.
pub fn write_odds_csv(path: impl AsRef<Path>, odds: &[OddsBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["metric_bin", "odds"])?;
    for bin in odds {
        w.write_record([bin.center.to_string(), bin.odds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes token-state occupancy counts, states in real token units.
pub fn write_token_histogram_csv(path: impl AsRef<Path>, hist: &TokenHistogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["state", "count"])?;
    for (i, &count) in hist.counts.iter().enumerate() {
        let state = (hist.offset + i as u64) as f64 / hist.p as f64;
        w.write_record([state.to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
