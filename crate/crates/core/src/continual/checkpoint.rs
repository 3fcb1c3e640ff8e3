use std::fs;
use std::path::Path;

use crate::continual::{read_csv, ContinualState, Metrics, Models, RunTag, SequenceConfig};
use crate::critic::MultiHeadCritic;
use crate::dataset::NormStats;
use crate::diffusion::{BehaviorScoreModel, StateScoreModel};
use crate::envs::{TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::Manifest;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "cugro-continual";
const MANIFEST: &str = "manifest";
const METRICS: &str = "metrics.csv";

pub(crate) fn run_tag(cfg: &SequenceConfig) -> RunTag {
    RunTag {
        variant: cfg.variant,
        seed: cfg.seed,
        lambda: cfg.lambda,
        beta: cfg.beta,
    }
}

/// Writes models, metrics and the manifest into `dir`. The manifest goes
/// last, so an interrupted write leaves the previous checkpoint readable.
pub fn save(state: &ContinualState, cfg: &SequenceConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    state.models.state_gen.save(dir, "state_gen")?;
    state.models.behavior_gen.save(dir, "behavior_gen")?;
    state.models.critic.save(dir, "critic")?;
    state.metrics.write_csv(&dir.join(METRICS), &run_tag(cfg))?;

    let mut m = Manifest::new();
    m.push("format", FORMAT)
        .push("version", CHECKPOINT_VERSION)
        .push("completed", state.completed)
        .push("seed", cfg.seed)
        .push("variant", cfg.variant)
        .push_f64("lambda", cfg.lambda)
        .push_f64("beta", cfg.beta)
        .push("stats.count", state.stats.count)
        .push_f64s("stats.mean", &state.stats.mean)
        .push_f64s("stats.var", &state.stats.var)
        .push("tasks", state.tasks.len());
    for (i, t) in state.tasks.iter().enumerate() {
        m.push(format!("task.{i}.id"), t.task_id)
            .push(format!("task.{i}.family"), t.kind.family_name())
            .push_f64s(format!("task.{i}.params"), &t.kind.params())
            .push(format!("task.{i}.horizon"), t.horizon);
    }
    m.write(&dir.join(MANIFEST))
}

fn expect_eq<T: PartialEq + std::fmt::Display>(what: &str, stored: T, configured: T) -> Result<()> {
    if stored != configured {
        return Err(Error::Consistency(format!(
            "checkpoint was written with {what} = {stored}, configuration has {configured}"
        )));
    }
    Ok(())
}

/// Reads the checkpoint in `dir`, checking it was written by a run with the
/// same seed, replay variant and weights as `cfg`.
pub fn restore(dir: &Path, cfg: &SequenceConfig) -> Result<ContinualState> {
    let m = Manifest::read(&dir.join(MANIFEST))?;
    m.expect("format", FORMAT)?;
    let version: u32 = m.parse("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Consistency(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    expect_eq("seed", m.parse::<u64>("seed")?, cfg.seed)?;
    expect_eq("variant", m.get("variant")?, cfg.variant.to_string().as_str())?;
    expect_eq("lambda", m.parse::<f64>("lambda")?, cfg.lambda)?;
    expect_eq("beta", m.parse::<f64>("beta")?, cfg.beta)?;

    let completed: u32 = m.parse("completed")?;
    let stats = NormStats {
        count: m.parse("stats.count")?,
        mean: m.parse_list("stats.mean")?,
        var: m.parse_list("stats.var")?,
    };
    let n_tasks: usize = m.parse("tasks")?;
    let mut tasks = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let kind = TaskKind::from_parts(
            m.get(&format!("task.{i}.family"))?,
            &m.parse_list(&format!("task.{i}.params"))?,
        )?;
        tasks.push(TaskSpec::new(
            m.parse(&format!("task.{i}.id"))?,
            kind,
            m.parse(&format!("task.{i}.horizon"))?,
        )?);
    }
    if tasks.len() != completed as usize {
        return Err(Error::Consistency(format!(
            "checkpoint lists {} tasks but {completed} completed phases",
            tasks.len()
        )));
    }

    let models = Models {
        state_gen: StateScoreModel::load(dir, "state_gen")?,
        behavior_gen: BehaviorScoreModel::load(dir, "behavior_gen")?,
        critic: MultiHeadCritic::load(dir, "critic")?,
    };
    if models.state_gen.num_tasks() != completed as usize || models.critic.heads_count() != completed as usize {
        return Err(Error::Consistency(format!(
            "checkpoint of {completed} tasks holds {} task embeddings and {} critic heads",
            models.state_gen.num_tasks(),
            models.critic.heads_count()
        )));
    }
    let metrics = if completed == 0 {
        Metrics::new()
    } else {
        Metrics::from_rows(&read_csv(&dir.join(METRICS))?)
    };
    if metrics.last_phase() != completed {
        return Err(Error::Consistency(format!(
            "metrics end at phase {} but {completed} phases completed",
            metrics.last_phase()
        )));
    }
    Ok(ContinualState {
        completed,
        models,
        stats,
        tasks,
        metrics,
    })
}
