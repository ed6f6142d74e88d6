//! Per-step metric lines (JSON Lines).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schedule::Phase;
use super::stages::StepReport;
use crate::error::{Error, Result};

/// One line of `metrics.jsonl`. Terms a phase does not compute are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub phase: Phase,
    pub l_s: Option<f64>,
    pub l_d_masked: Option<f64>,
    pub l_c_masked: Option<f64>,
    pub lr: f64,
    pub lambda: Option<f64>,
    pub pseudo_label_keep_fraction: Option<f64>,
    pub wall_ms: u64,
}

impl MetricRecord {
    pub fn new(step: u64, phase: Phase, report: &StepReport, lr: f64, wall_ms: u64) -> Self {
        Self {
            step,
            phase,
            l_s: report.l_s,
            l_d_masked: report.l_d_masked,
            l_c_masked: report.l_c_masked,
            lr,
            lambda: report.lambda,
            pseudo_label_keep_fraction: report.pseudo_label_keep_fraction,
            wall_ms,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("metric record serializes")
    }
}

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    /// Appends one line and flushes, so a crashed run keeps every finished step.
    pub fn write(&mut self, record: &MetricRecord) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        writeln!(self.out, "{}", record.to_line()).map_err(io)?;
        self.out.flush().map_err(io)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
