//! Experiment harness: seeded multi-run orchestration, CSV metric
//! persistence, summary statistics, SVG learning curves, and the invariant
//! verification entry point.

pub mod config;
pub mod plot;
pub mod verify;

pub use config::ExperimentConfig;

use crate::agents::{AgentError, Method, RunRecord, Trainer};
use crate::boost::BoostError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{file}:{line}: {msg}")]
    Config { file: String, line: usize, msg: String },
    #[error("config: {0}")]
    ConfigGeneral(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("runtime: {0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl BenchError {
    /// CLI exit code: 1 config error, 2 runtime failure, 3 verification
    /// failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Config { .. } | BenchError::ConfigGeneral(_) => 1,
            BenchError::Verification(_) => 3,
            _ => 2,
        }
    }
}

impl From<AgentError> for BenchError {
    fn from(e: AgentError) -> Self {
        BenchError::Runtime(e.to_string())
    }
}

impl From<BoostError> for BenchError {
    fn from(e: BoostError) -> Self {
        BenchError::Runtime(e.to_string())
    }
}

/// Aggregate statistics of one method over the trailing window: the mean
/// and sample standard deviation across the per-seed window means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub env: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub window: u32,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<RunRecord>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub runs: Vec<RunOutput>,
    pub summary: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutput {
    pub fn all_records(&self) -> Vec<RunRecord> {
        self.runs.iter().flat_map(|r| r.records.iter().cloned()).collect()
    }
}

/// Executes every (method, seed) pair of the experiment, writes one CSV per
/// pair plus an aggregate summary (and an ensemble checkpoint per boosted
/// run), and returns everything in memory. Runs are dispatched to a worker
/// pool; each run's output depends only on (config, seed).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentOutput, BenchError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let schedule = cfg.schedule()?;

    let pairs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();

    let results: Vec<Result<(RunOutput, Option<PathBuf>), BenchError>> = pairs
        .par_iter()
        .map(|&(method, seed)| {
            let agent_cfg = cfg.agent_config(method);
            let env = cfg.env.make(cfg.max_steps);
            let mut trainer =
                Trainer::new(agent_cfg, env, schedule.clone(), cfg.episodes, seed)?;
            while !trainer.finished() {
                trainer.step_once()?;
            }
            let records = trainer.records().to_vec();
            let final_return = records.last().map(|r| r.episode_return).unwrap_or(0.0);
            log::info!(
                "{} {method} seed {seed}: {} episodes, final return {final_return}",
                cfg.env,
                records.len()
            );
            let checkpoint = if let Some(ens) = trainer.ensemble() {
                let path = out_dir.join(format!("{}_{method}_seed{seed}.ensemble", cfg.env));
                ens.save_checkpoint(&path)?;
                Some(path)
            } else {
                None
            };
            Ok((RunOutput { method, seed, records }, checkpoint))
        })
        .collect();

    let mut runs = Vec::with_capacity(results.len());
    let mut files = Vec::new();
    for r in results {
        let (run, checkpoint) = r?;
        files.extend(checkpoint);
        runs.push(run);
    }
    // Deterministic output order regardless of the worker pool.
    runs.sort_by_key(|r| (r.method.to_string(), r.seed));

    for run in &runs {
        let path = out_dir.join(format!("{}_{}_seed{}.csv", cfg.env, run.method, run.seed));
        write_records_csv(&path, &run.records)?;
        files.push(path);
    }

    let all: Vec<RunRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let summary = summarize(&all, cfg.final_window)?;
    let summary_path = out_dir.join("summary.csv");
    write_summary_csv(&summary_path, &summary)?;
    files.push(summary_path);

    Ok(ExperimentOutput { runs, summary, files })
}

/// Per-seed mean return over the last `final_window` episodes, then mean and
/// sample standard deviation of those means across seeds, per method.
pub fn summarize(records: &[RunRecord], final_window: u32) -> Result<Vec<SummaryRow>, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Runtime("summarize on empty record set".into()));
    }
    let mut by_run: BTreeMap<(String, String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_run.entry((r.method.clone(), r.env.clone(), r.seed)).or_default().push(r);
    }

    let mut window_means: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for ((method, env, _seed), mut rows) in by_run {
        rows.sort_by_key(|r| r.episode);
        if (rows.len() as u32) < final_window {
            return Err(BenchError::Runtime(format!(
                "final window {final_window} exceeds run length {} for {method}",
                rows.len()
            )));
        }
        let tail = &rows[rows.len() - final_window as usize..];
        let mean = tail.iter().map(|r| r.episode_return).sum::<f64>() / tail.len() as f64;
        window_means.entry((method, env)).or_default().push(mean);
    }

    let mut out = Vec::new();
    for ((method, env), means) in window_means {
        let n = means.len();
        let mean = means.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let var =
                means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n as f64 - 1.0);
            var.sqrt()
        } else {
            0.0
        };
        out.push(SummaryRow { method, env, mean, std, n_seeds: n, window: final_window });
    }
    Ok(out)
}

/// Trailing moving average with a truncated window at the start.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Reads every per-run CSV in a results directory (skipping the summary and
/// plot-data files).
pub fn read_all_records(dir: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "csv")
                && p.file_name().is_some_and(|n| {
                    let n = n.to_string_lossy();
                    n != "summary.csv" && !n.ends_with("_curves.csv")
                })
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(BenchError::Runtime(format!(
            "no run CSV files found in {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_records_csv(&p)?);
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, seed: u64, episode: u32, ret: f64) -> RunRecord {
        RunRecord {
            seed,
            method: method.into(),
            env: "cartpole".into(),
            episode,
            episode_return: ret,
            steps: 10,
            epsilon: 0.5,
            ensemble_size: 1,
            drift_kind: "none".into(),
        }
    }

    #[test]
    fn summarize_single_seed_constant() {
        let records: Vec<RunRecord> = (1..=10).map(|e| rec("dqn", 1, e, -100.0)).collect();
        let rows = summarize(&records, 5).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, -100.0);
        assert_eq!(rows[0].std, 0.0);
        assert_eq!(rows[0].n_seeds, 1);
    }

    #[test]
    fn summarize_two_seed_statistics() {
        let mut records: Vec<RunRecord> = (1..=10).map(|e| rec("dqn", 1, e, -100.0)).collect();
        records.extend((1..=10).map(|e| rec("dqn", 2, e, -120.0)));
        let rows = summarize(&records, 5).unwrap();
        assert_eq!(rows[0].mean, -110.0);
        assert!((rows[0].std - 200f64.sqrt()).abs() < 1e-9); // 14.142...
        assert_eq!(rows[0].n_seeds, 2);
    }

    #[test]
    fn summarize_arithmetic_series_window() {
        let records: Vec<RunRecord> =
            (1..=600).map(|e| rec("gbdqn", 1, e, e as f64)).collect();
        let rows = summarize(&records, 100).unwrap();
        assert_eq!(rows[0].mean, 550.5);
    }

    #[test]
    fn summarize_window_too_large_errors() {
        let records: Vec<RunRecord> = (1..=10).map(|e| rec("dqn", 1, e, 0.0)).collect();
        assert!(summarize(&records, 11).is_err());
    }

    #[test]
    fn moving_average_identity_and_step() {
        let raw = vec![3.0, 1.0, 4.0, 1.0, 5.0];
        assert_eq!(moving_average(&raw, 1), raw);

        // Step 0 -> 100 at episode 50 (1-indexed), window 20: episode 59
        // averages ten zeros and ten hundreds.
        let mut step = vec![0.0; 49];
        step.extend(vec![100.0; 31]);
        let smooth = moving_average(&step, 20);
        assert_eq!(smooth[58], 50.0);
        assert_eq!(smooth[48], 0.0);
        assert_eq!(smooth[79], 100.0);
    }

    #[test]
    fn records_csv_round_trip_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let records = vec![rec("dqn", 1, 1, -10.5), rec("dqn", 1, 2, -9.0)];
        write_records_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "seed,method,env,episode,return,steps,epsilon,ensemble_size,drift_kind"
        ));
        let back = read_records_csv(&path).unwrap();
        assert_eq!(back, records);
    }
}
