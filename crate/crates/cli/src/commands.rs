//! `run`, `resume` and `sweep`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use curvzo::optimizer::{Checkpoint, Trainer};
use curvzo::problems::{Minibatch, Problem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_scalar, set_dotted, RunConfig};
use crate::metrics::{read_records, summarize, MetricsWriter, RunSummary, JSONL_NAME};
use crate::CliError;

pub const CONFIG_NAME: &str = "config.toml";
pub const SUMMARY_NAME: &str = "summary.json";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("ckpt-{step:08}.txt"))
}

/// Newest checkpoint in `dir` by step.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>, CliError> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::io(dir, e)),
    };
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt-")?.strip_suffix(".txt")?.parse::<u64>().ok());
        if let Some(step) = step {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, path));
            }
        }
    }
    Ok(best)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs (or continues, if `resume`) one seed inside `dir`.
pub fn run_seed(
    config: &RunConfig,
    problem: &Problem,
    seed: u64,
    dir: &Path,
    resume: bool,
) -> Result<RunSummary, CliError> {
    let digest = config.digest();
    let opt = config.optimizer_config(problem, seed)?;
    let started = Instant::now();
    let checkpoint = if resume { latest_checkpoint(dir)? } else { None };
    let (mut trainer, prefix) = match checkpoint {
        Some((step, path)) => {
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.config_digest != digest {
                return Err(CliError::Config(format!(
                    "{}: written by config {}, current config is {digest}",
                    path.display(),
                    ckpt.config_digest
                )));
            }
            let mut records = read_records(&dir.join(JSONL_NAME))?;
            if (records.len() as u64) < step {
                return Err(CliError::Config(format!(
                    "{}: metrics stream has {} records, checkpoint is at step {step}",
                    dir.display(),
                    records.len()
                )));
            }
            records.truncate(step as usize);
            (Trainer::resume(problem, opt, ckpt.state)?, records)
        }
        None => (Trainer::new(problem, opt)?, Vec::new()),
    };
    let mut writer = MetricsWriter::with_prefix(dir, &prefix)?;
    let mut records = prefix;
    let interval = config.run.checkpoint_interval;
    let result = (|| -> Result<(), CliError> {
        while !trainer.is_finished() {
            let r = trainer.step()?;
            writer.append(&r)?;
            records.push(r);
            let step = trainer.state().step;
            if interval > 0 && step % interval == 0 {
                // stream must cover every step the checkpoint has seen
                writer.flush()?;
                Checkpoint {
                    config_digest: digest.clone(),
                    state: trainer.state().clone(),
                }
                .save(&checkpoint_path(dir, step))?;
            }
        }
        Ok(())
    })();
    writer.flush()?;
    result?;

    let final_loss = problem.loss(&trainer.state().params.values, &Minibatch::Full)?;
    let summary = summarize(
        seed,
        &digest,
        &records,
        final_loss,
        config.run.threshold,
        started.elapsed().as_secs_f64(),
    );
    write_file(
        &dir.join(SUMMARY_NAME),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    Ok(summary)
}

/// Runs every seed of `config` under `out`, in parallel across seeds.
pub fn run_all(config: &RunConfig, out: &Path, resume: bool) -> Result<Vec<RunSummary>, CliError> {
    let problem = config.build_problem()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_file(&out.join(CONFIG_NAME), &config.canonical())?;
    config
        .run
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &problem, seed, &seed_dir(out, seed), resume))
        .collect()
}

/// Output root: explicit flag or env, then `run.out`, then `runs`.
pub fn resolve_out(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.or_else(|| config.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn cmd_run(
    config_path: &Path,
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
) -> Result<Vec<RunSummary>, CliError> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = seeds {
        config.run.seeds = s;
        config.validate()?;
    }
    let out = resolve_out(out, &config);
    run_all(&config, &out, false)
}

/// Continues the runs in `out` from their newest checkpoints. The config
/// defaults to the canonical copy saved by `run`.
pub fn cmd_resume(
    out: &Path,
    config_path: Option<&Path>,
    seeds: Option<Vec<u64>>,
) -> Result<Vec<RunSummary>, CliError> {
    let path = config_path.map_or_else(|| out.join(CONFIG_NAME), Path::to_path_buf);
    let mut config = RunConfig::load(&path)?;
    if let Some(s) = seeds {
        config.run.seeds = s;
        config.validate()?;
    }
    run_all(&config, out, true)
}

/// One cell of a sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub runs: usize,
    pub final_loss_mean: f64,
    pub final_loss_std: f64,
    /// Over the runs that reached the threshold; NaN if none did.
    pub steps_to_threshold_mean: f64,
    pub steps_to_threshold_std: f64,
    pub reached: usize,
}

pub const SWEEP_HEADER: &str = "axis,value,runs,final_loss_mean,final_loss_std,steps_to_threshold_mean,steps_to_threshold_std,reached";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        let value = if self.value.contains([',', '"']) {
            format!("\"{}\"", self.value.replace('"', "\"\""))
        } else {
            self.value.clone()
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.axis,
            value,
            self.runs,
            self.final_loss_mean,
            self.final_loss_std,
            self.steps_to_threshold_mean,
            self.steps_to_threshold_std,
            self.reached
        )
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sweep_row(axis: &str, value: &str, summaries: &[RunSummary]) -> SweepRow {
    let finals: Vec<f64> = summaries.iter().map(|s| s.final_loss).collect();
    let reached: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.steps_to_threshold.map(|t| t as f64))
        .collect();
    let (fm, fs) = mean_std(&finals);
    let (tm, ts) = mean_std(&reached);
    SweepRow {
        axis: axis.to_string(),
        value: value.to_string(),
        runs: summaries.len(),
        final_loss_mean: fm,
        final_loss_std: fs,
        steps_to_threshold_mean: tm,
        steps_to_threshold_std: ts,
        reached: reached.len(),
    }
}

/// Runs `values × seeds`, each cell under `out/<axis>=<value>/`, and writes
/// `out/sweep.csv`.
pub fn cmd_sweep(
    config_path: &Path,
    axis: &str,
    values: &[String],
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
) -> Result<Vec<SweepRow>, CliError> {
    let values: Vec<&String> = values.iter().filter(|v| !v.trim().is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let text = std::fs::read_to_string(config_path).map_err(|e| CliError::io(config_path, e))?;
    let base: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", config_path.display(), e.message())))?;
    // parse every cell before running any
    let mut cells = Vec::with_capacity(values.len());
    for value in values {
        let mut doc = base.clone();
        set_dotted(&mut doc, axis, parse_scalar(value))?;
        let mut config = RunConfig::from_value(doc)
            .map_err(|e| CliError::Config(format!("{axis}={value}: {e}")))?;
        if let Some(s) = &seeds {
            config.run.seeds = s.clone();
            config.validate()?;
        }
        cells.push((value.to_string(), config));
    }
    let out = resolve_out(out, &cells[0].1);
    let mut rows = Vec::with_capacity(cells.len());
    for (value, config) in &cells {
        let cell_out = out.join(format!("{axis}={value}"));
        let summaries = run_all(config, &cell_out, false)?;
        rows.push(sweep_row(axis, value, &summaries));
    }
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    write_file(&out.join("sweep.csv"), &csv)?;
    Ok(rows)
}
