use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continual::ReplayVariant;
use crate::error::{Error, Result};
use crate::numerics::checkpoint::write_atomic;

/// Evaluation of one task after one training phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskEval {
    pub phase: u32,
    pub task: u32,
    pub mean_return: f64,
    pub std_return: f64,
    /// Best mean return of this task in any phase so far minus the current one.
    pub forgetting: f64,
}

/// Return curves of every task across training phases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    records: Vec<TaskEval>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TaskEval] {
        &self.records
    }

    /// Appends the evaluations of `phase`; `returns[k - 1]` is `(mean, std)` for task `k`.
    pub fn push_phase(&mut self, phase: u32, returns: &[(f64, f64)]) -> Result<()> {
        if returns.len() != phase as usize {
            return Err(Error::Consistency(format!(
                "phase {phase} must evaluate {phase} tasks, got {}",
                returns.len()
            )));
        }
        if phase != self.last_phase() + 1 {
            return Err(Error::Consistency(format!(
                "phase {phase} recorded after phase {}",
                self.last_phase()
            )));
        }
        for (i, &(mean, std)) in returns.iter().enumerate() {
            let task = i as u32 + 1;
            let best = self.task_curve(task).into_iter().map(|(_, r)| r).fold(mean, f64::max);
            self.records.push(TaskEval {
                phase,
                task,
                mean_return: mean,
                std_return: std,
                forgetting: best - mean,
            });
        }
        Ok(())
    }

    pub fn last_phase(&self) -> u32 {
        self.records.iter().map(|r| r.phase).max().unwrap_or(0)
    }

    pub fn phase(&self, phase: u32) -> Vec<TaskEval> {
        self.records.iter().filter(|r| r.phase == phase).copied().collect()
    }

    /// `(phase, mean_return)` for every phase that evaluated `task`.
    pub fn task_curve(&self, task: u32) -> Vec<(u32, f64)> {
        self.records
            .iter()
            .filter(|r| r.task == task)
            .map(|r| (r.phase, r.mean_return))
            .collect()
    }

    /// Mean return over the tasks evaluated after `phase`.
    pub fn cumulative_average(&self, phase: u32) -> Option<f64> {
        let rows = self.phase(phase);
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.mean_return).sum::<f64>() / rows.len() as f64)
    }

    pub fn final_cumulative_average(&self) -> Option<f64> {
        self.cumulative_average(self.last_phase())
    }

    pub fn to_rows(&self, tag: &RunTag) -> Vec<MetricsRow> {
        self.records
            .iter()
            .map(|r| MetricsRow {
                phase: r.phase,
                task: r.task,
                mean_return: r.mean_return,
                std_return: r.std_return,
                forgetting: r.forgetting,
                variant: tag.variant,
                seed: tag.seed,
                lambda: tag.lambda,
                beta: tag.beta,
            })
            .collect()
    }

    pub fn from_rows(rows: &[MetricsRow]) -> Self {
        Self {
            records: rows
                .iter()
                .map(|r| TaskEval {
                    phase: r.phase,
                    task: r.task,
                    mean_return: r.mean_return,
                    std_return: r.std_return,
                    forgetting: r.forgetting,
                })
                .collect(),
        }
    }

    pub fn write_csv(&self, path: &Path, tag: &RunTag) -> Result<()> {
        write_atomic(path, render_csv(&self.to_rows(tag))?.as_bytes())
    }
}

/// Identifies the run a metrics table belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunTag {
    pub variant: ReplayVariant,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub phase: u32,
    pub task: u32,
    pub mean_return: f64,
    pub std_return: f64,
    pub forgetting: f64,
    pub variant: ReplayVariant,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
}

pub const METRICS_HEADER: &str = "phase,task,mean_return,std_return,forgetting,variant,seed,lambda,beta";

pub fn render_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Consistency(format!("serializing metrics: {e}")))?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::Consistency(format!("serializing metrics: {e}")))?;
    Ok(format!("{METRICS_HEADER}\n{}", String::from_utf8_lossy(&body)))
}

/// Parses a metrics table; errors carry the 1-based line number.
pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Table {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != METRICS_HEADER {
        return Err(Error::Table {
            line: 1,
            message: format!("expected header '{METRICS_HEADER}', found '{header}'"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<MetricsRow>().enumerate() {
        let row = rec.map_err(|e| Error::Table {
            line: e.position().map(|p| p.line()).unwrap_or(i as u64 + 2),
            message: match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                other => format!("{other:?}"),
            },
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Table {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}
