//! JSONL metric streams and CSV curve emission.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TnpError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Step, iteration or task index.
    pub step: u64,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

impl MetricRecord {
    pub fn new(step: u64, metric: &str, value: f64, seed: u64) -> Self {
        Self {
            step,
            metric: metric.to_string(),
            value,
            seed,
        }
    }
}

pub fn write_metrics_record(out: &mut impl Write, record: &MetricRecord) -> Result<()> {
    if !record.value.is_finite() {
        return Err(TnpError::NonFinite(format!("metric {} = {}", record.metric, record.value)));
    }
    let line = serde_json::to_string(record).map_err(|e| TnpError::Format(e.to_string()))?;
    writeln!(out, "{line}")?;
    Ok(())
}

/// Appends records to one JSONL file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|source| TnpError::File {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        write_metrics_record(&mut self.out, record)?;
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TnpError::Format(format!("metrics line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|source| TnpError::File {
        path: path.to_path_buf(),
        source,
    })?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_metrics(&text)
}

/// Curve for one metric: one row per step with the mean and sample standard deviation across
/// records at that step (0 when there is a single record).
pub fn metrics_to_csv(records: &[MetricRecord], metric: &str) -> String {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == metric) {
        by_step.entry(r.step).or_default().push(r.value);
    }
    let mut out = String::from("x,mean,std\n");
    for (step, vals) in by_step {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        out.push_str(&format!("{step},{mean},{std}\n"));
    }
    out
}
