//! Per-step metrics as JSON lines with a CSV mirror, plus run summaries.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use curvzo::StepRecord;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const JSONL_NAME: &str = "metrics.jsonl";
pub const CSV_NAME: &str = "metrics.csv";
pub const CSV_HEADER: &str = "step,loss,delta,budget,d_eff,H,grad_norm_oracle,wall_nanos,selected";

pub fn csv_line(r: &StepRecord) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{},{},{},{},{},{},",
        r.step, r.loss, r.delta, r.budget, r.d_eff, r.entropy
    );
    if let Some(g) = r.grad_norm_oracle {
        let _ = write!(s, "{g}");
    }
    let _ = write!(s, ",{},{}", r.wall_nanos, r.selected);
    s
}

/// Append-only writer for one run directory.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
    jsonl_path: PathBuf,
    csv_path: PathBuf,
}

impl MetricsWriter {
    /// Starts fresh streams, replacing any existing ones.
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        Self::with_prefix(dir, &[])
    }

    /// Rewrites the streams to hold exactly `prefix`, then appends.
    pub fn with_prefix(dir: &Path, prefix: &[StepRecord]) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let jsonl_path = dir.join(JSONL_NAME);
        let csv_path = dir.join(CSV_NAME);
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(p)
                .map(BufWriter::new)
                .map_err(|e| CliError::io(p, e))
        };
        let mut w = Self {
            jsonl: open(&jsonl_path)?,
            csv: open(&csv_path)?,
            jsonl_path,
            csv_path,
        };
        writeln!(w.csv, "{CSV_HEADER}").map_err(|e| CliError::io(&w.csv_path, e))?;
        for r in prefix {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, r: &StepRecord) -> Result<(), CliError> {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(self.jsonl, "{line}").map_err(|e| CliError::io(&self.jsonl_path, e))?;
        writeln!(self.csv, "{}", csv_line(r)).map_err(|e| CliError::io(&self.csv_path, e))
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.jsonl.flush().map_err(|e| CliError::io(&self.jsonl_path, e))?;
        self.csv.flush().map_err(|e| CliError::io(&self.csv_path, e))
    }
}

/// Reads a JSON-lines stream; a torn final line (from a crash) is dropped.
pub fn read_records(path: &Path) -> Result<Vec<StepRecord>, CliError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        match serde_json::from_str::<StepRecord>(&line) {
            Ok(r) if r.step == out.len() as u64 => out.push(r),
            _ => break,
        }
    }
    Ok(out)
}

/// End-of-run figures for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_digest: String,
    pub steps: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub min_loss: f64,
    pub threshold: f64,
    /// First step whose loss is at most `threshold · initial_loss`.
    pub steps_to_threshold: Option<u64>,
    pub wall_seconds: f64,
}

/// First step `t` with `loss_t ≤ τ·loss_0`; `final_loss` counts as step `T`.
pub fn steps_to_threshold(records: &[StepRecord], final_loss: f64, tau: f64) -> Option<u64> {
    let first = records.first()?;
    let target = tau * first.loss;
    records
        .iter()
        .find(|r| r.loss <= target)
        .map(|r| r.step)
        .or_else(|| (final_loss <= target).then_some(records.len() as u64))
}

pub fn summarize(
    seed: u64,
    digest: &str,
    records: &[StepRecord],
    final_loss: f64,
    tau: f64,
    wall_seconds: f64,
) -> RunSummary {
    let initial = records.first().map_or(final_loss, |r| r.loss);
    let min_loss = records
        .iter()
        .map(|r| r.loss)
        .chain(std::iter::once(final_loss))
        .fold(f64::INFINITY, f64::min);
    RunSummary {
        seed,
        config_digest: digest.to_string(),
        steps: records.len() as u64,
        initial_loss: initial,
        final_loss,
        min_loss,
        threshold: tau,
        steps_to_threshold: steps_to_threshold(records, final_loss, tau),
        wall_seconds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, loss: f64) -> StepRecord {
        StepRecord {
            step,
            loss,
            delta: 0.5,
            budget: 2.0,
            d_eff: 3.0,
            entropy: 0.25,
            grad_norm_oracle: step.is_multiple_of(2).then_some(1.5),
            wall_nanos: 0,
            selected: 1,
        }
    }

    #[test]
    fn threshold_examples() {
        let r: Vec<_> = [10.0, 5.0, 0.9, 2.0].iter().enumerate().map(|(i, &l)| rec(i as u64, l)).collect();
        assert_eq!(steps_to_threshold(&r, 3.0, 0.1), Some(2));
        assert_eq!(steps_to_threshold(&r[..2], 0.5, 0.1), Some(2));
        assert_eq!(steps_to_threshold(&r[..2], 5.0, 0.1), None);
        let s = summarize(1, "x", &r, 0.3, 0.1, 0.0);
        assert_eq!((s.initial_loss, s.min_loss, s.steps), (10.0, 0.3, 4));
    }

    #[test]
    fn csv_mirror_format() {
        assert_eq!(csv_line(&rec(0, 1.0)), "0,1,0.5,2,3,0.25,1.5,0,1");
        assert_eq!(csv_line(&rec(1, 1.0)), "1,1,0.5,2,3,0.25,,0,1");
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path()).unwrap();
        for i in 0..3 {
            w.append(&rec(i, 1.0)).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let path = dir.path().join(JSONL_NAME);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"step\":3,\"lo");
        std::fs::write(&path, text).unwrap();
        assert_eq!(read_records(&path).unwrap().len(), 3);
        assert!(read_records(&dir.path().join("absent")).unwrap().is_empty());
    }
}
