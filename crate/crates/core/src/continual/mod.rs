//! Sequential task training with dual generative replay, replay ablations,
//! evaluation after every phase, and resumable checkpoints.
//!
//! Phase `K` snapshots the current models, builds a rehearsal set for every
//! earlier task, grows the task embedding and critic head for `K`, then fits
//! the state generator, the behavior generator and the critic in that order.
//! All models work on states normalized with statistics pooled over every
//! task seen so far; rehearsal states are mapped from the snapshot's space.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod replay;
mod train;

use std::path::Path;

pub use checkpoint::{restore, save, CHECKPOINT_VERSION};
pub use config::{EvalConfig, ReplayVariant, SequenceConfig, TrainConfig};
pub use eval::{evaluate, evaluate_task, TaskReturns};
pub use metrics::{parse_csv, read_csv, render_csv, Metrics, MetricsRow, RunTag, TaskEval, METRICS_HEADER};
pub use replay::{generate_pseudo_pairs, normalize_rows, renormalize, ReplayData};

use crate::critic::{segment_targets, value_estimate, BehaviorProposer, MultiHeadCritic};
use crate::dataset::{NormStats, OfflineDataset, TransitionTable};
use crate::diffusion::{BehaviorScoreModel, StateScoreModel, VpSchedule};
use crate::envs::{validate_sequence, TaskSpec, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::Parameterized;
use crate::rng;
use replay::{build_replay, ReplayRequest};
use train::{CriticFit, FrozenGuard, GeneratorFit};

const GROW_STREAM: u64 = 0;
const REPLAY_STREAM: u64 = 1;
const STATE_GEN_STREAM: u64 = 2;
const BEHAVIOR_STREAM: u64 = 3;
const CRITIC_STREAM: u64 = 4;
const VALUE_STREAM: u64 = 5;

/// State generator, behavior generator and critic of one point in the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub state_gen: StateScoreModel,
    pub behavior_gen: BehaviorScoreModel,
    pub critic: MultiHeadCritic,
}

impl Models {
    pub fn new(cfg: &SequenceConfig) -> Result<Self> {
        let sched = cfg.schedule.build()?;
        let mut rng = rng::stream(cfg.seed, &[0]);
        Ok(Self {
            state_gen: StateScoreModel::new(STATE_DIM, &cfg.state_net, &sched, &mut rng)?,
            behavior_gen: BehaviorScoreModel::new(STATE_DIM, ACTION_DIM, &cfg.behavior_net, &sched, &mut rng)?,
            critic: MultiHeadCritic::new(STATE_DIM, ACTION_DIM, &cfg.critic, &mut rng)?,
        })
    }

    /// Hash over the exact parameter bits of all three models.
    pub fn param_hash(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        h.write_u64(self.state_gen.param_hash());
        h.write_u64(self.behavior_gen.param_hash());
        h.write_u64(self.critic.param_hash());
        h.finish()
    }
}

/// Everything carried from one phase to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinualState {
    /// Number of tasks trained so far.
    pub completed: u32,
    pub models: Models,
    /// Pooled state statistics of all completed tasks.
    pub stats: NormStats,
    pub tasks: Vec<TaskSpec>,
    pub metrics: Metrics,
}

impl ContinualState {
    pub fn new(cfg: &SequenceConfig) -> Result<Self> {
        Ok(Self {
            completed: 0,
            models: Models::new(cfg)?,
            stats: NormStats::from_states(std::iter::empty()),
            tasks: Vec::new(),
            metrics: Metrics::new(),
        })
    }
}

/// Diagnostics of one training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub task: u32,
    pub replay_pairs: usize,
    pub state_gen_loss: f64,
    pub behavior_loss: f64,
    pub critic_loss: f64,
    /// Snapshot hash verifications, one per optimizer step when a snapshot exists.
    pub frozen_checks: u64,
    /// Critic steps whose head-isolation checks passed.
    pub isolation_checks: u64,
    pub evaluation: Vec<TaskReturns>,
}

fn sampler(sched: &VpSchedule, steps: Option<usize>) -> Result<VpSchedule> {
    match steps {
        Some(s) => sched.with_steps(s),
        None => Ok(sched.clone()),
    }
}

/// Trains task `state.completed + 1` on `dataset`. `archive` holds the real
/// datasets of earlier tasks and is only read by oracle replay.
pub fn run_phase(
    state: &mut ContinualState,
    cfg: &SequenceConfig,
    dataset: &OfflineDataset,
    archive: &[&OfflineDataset],
) -> Result<PhaseReport> {
    cfg.validate()?;
    let k = state.completed + 1;
    if dataset.task_id() != k {
        return Err(Error::Config(format!(
            "phase {k} was given the dataset of task {}",
            dataset.task_id()
        )));
    }
    if dataset.gamma() != cfg.gamma {
        return Err(Error::Config(format!(
            "dataset returns use discount {}, config uses {}",
            dataset.gamma(),
            cfg.gamma
        )));
    }
    let sched = cfg.schedule.build()?;
    let new_stats = state.stats.merge(dataset.stats());
    let frozen = (k > 1).then(|| state.models.clone());

    let mut replay = Vec::new();
    if let Some(frozen) = &frozen {
        let n = cfg
            .train
            .replay_samples
            .unwrap_or_else(|| (dataset.num_transitions() / (k as usize - 1)).max(1));
        let replay_sched = sampler(&sched, cfg.train.replay_sampler_steps)?;
        for old in 1..k {
            let req = ReplayRequest {
                variant: cfg.variant,
                frozen,
                sched: &replay_sched,
                old_stats: &state.stats,
                new_stats: &new_stats,
                archive: archive.get(old as usize - 1).copied(),
            };
            let mut rng = rng::stream(cfg.seed, &[k as u64, REPLAY_STREAM, old as u64]);
            if let Some(r) = build_replay(&req, old, n, &mut rng)? {
                replay.push(r);
            }
        }
    }

    let models = &mut state.models;
    let mut grow = rng::stream(cfg.seed, &[k as u64, GROW_STREAM]);
    models.state_gen.ensure_tasks(k as usize, &mut grow);
    models.critic.ensure_heads(k as usize, &mut grow);

    let mut guard = FrozenGuard::new(frozen.as_ref());
    let table = TransitionTable::from_dataset(dataset);
    let states = normalize_rows(&table.states(), &new_stats);
    let actions = table.actions();

    let gen = GeneratorFit {
        train: &cfg.train,
        sched: &sched,
        t_min: cfg.schedule.t_min,
        beta: cfg.beta,
        task: k,
        replay: &replay,
    };
    let mut rng = rng::stream(cfg.seed, &[k as u64, STATE_GEN_STREAM]);
    let state_gen_loss = gen.state_gen(&mut models.state_gen, &states, &mut guard, &mut rng)?;
    let mut rng = rng::stream(cfg.seed, &[k as u64, BEHAVIOR_STREAM]);
    let behavior_loss = gen.behavior_gen(&mut models.behavior_gen, &states, &actions, &mut guard, &mut rng)?;

    let fit = CriticFit {
        train: &cfg.train,
        lambda: cfg.lambda,
        task: k,
        replay: if cfg.variant.replays() { &replay } else { &[] },
    };
    let mut targets = table.targets().to_vec();
    let mut rng = rng::stream(cfg.seed, &[k as u64, CRITIC_STREAM, 0]);
    let mut critic_stats = fit.run(&mut models.critic, &states, &actions, &targets, &mut guard, &mut rng)?;
    let mut isolation_checks = critic_stats.isolation_checks;
    let value_sched = sampler(&sched, cfg.train.value_sampler_steps)?;
    for j in 1..=cfg.train.value_iterations {
        let proposer = BehaviorProposer {
            model: &models.behavior_gen,
            schedule: &value_sched,
            bound: 1.0,
        };
        let mut rng = rng::stream(cfg.seed, &[k as u64, VALUE_STREAM, j as u64]);
        let values = value_estimate(
            &models.critic,
            k,
            &states,
            &proposer,
            cfg.train.value_actions,
            cfg.train.value_mode,
            &mut rng,
        )?;
        targets = segment_targets(table.rewards(), &values, table.segments(), cfg.gamma)?;
        let mut rng = rng::stream(cfg.seed, &[k as u64, CRITIC_STREAM, j as u64]);
        critic_stats = fit.run(&mut models.critic, &states, &actions, &targets, &mut guard, &mut rng)?;
        isolation_checks += critic_stats.isolation_checks;
    }
    guard.check("phase end")?;

    state.stats = new_stats;
    state.tasks.push(*dataset.task());
    state.completed = k;
    let evaluation = evaluate(
        &state.models,
        &state.stats,
        &state.tasks,
        &sched,
        &cfg.eval,
        cfg.seed,
        k,
    )?;
    let summary: Vec<(f64, f64)> = evaluation.iter().map(|r| (r.mean(), r.std())).collect();
    state.metrics.push_phase(k, &summary)?;

    Ok(PhaseReport {
        task: k,
        replay_pairs: replay.iter().map(|r| r.len()).sum(),
        state_gen_loss,
        behavior_loss,
        critic_loss: critic_stats.loss,
        frozen_checks: guard.checks,
        isolation_checks,
        evaluation,
    })
}

/// Result of training over a task sequence.
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub state: ContinualState,
    /// Reports of the phases run by this call.
    pub reports: Vec<PhaseReport>,
}

fn check_datasets(datasets: &[OfflineDataset]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::Config("a sequence needs at least one task".into()));
    }
    let tasks: Vec<TaskSpec> = datasets.iter().map(|d| *d.task()).collect();
    validate_sequence(&tasks)
}

fn continue_sequence(
    mut state: ContinualState,
    cfg: &SequenceConfig,
    datasets: &[OfflineDataset],
    checkpoint_dir: Option<&Path>,
    observer: &mut dyn FnMut(&PhaseReport, &ContinualState),
) -> Result<SequenceOutcome> {
    let mut reports = Vec::new();
    for i in state.completed as usize..datasets.len() {
        let archive: Vec<&OfflineDataset> = datasets[..i].iter().collect();
        let report = run_phase(&mut state, cfg, &datasets[i], &archive)?;
        if let Some(dir) = checkpoint_dir {
            save(&state, cfg, dir)?;
        }
        observer(&report, &state);
        reports.push(report);
    }
    Ok(SequenceOutcome { state, reports })
}

/// Trains every task in order from fresh models, checkpointing after each
/// phase when `checkpoint_dir` is given.
pub fn run_sequence(
    cfg: &SequenceConfig,
    datasets: &[OfflineDataset],
    checkpoint_dir: Option<&Path>,
) -> Result<SequenceOutcome> {
    run_sequence_with(cfg, datasets, checkpoint_dir, &mut |_, _| {})
}

/// [`run_sequence`] calling `observer` after every phase.
pub fn run_sequence_with(
    cfg: &SequenceConfig,
    datasets: &[OfflineDataset],
    checkpoint_dir: Option<&Path>,
    observer: &mut dyn FnMut(&PhaseReport, &ContinualState),
) -> Result<SequenceOutcome> {
    cfg.validate()?;
    check_datasets(datasets)?;
    continue_sequence(ContinualState::new(cfg)?, cfg, datasets, checkpoint_dir, observer)
}

/// Restores the checkpoint in `dir` and trains the remaining tasks, writing
/// new checkpoints to the same directory.
pub fn resume_sequence(
    cfg: &SequenceConfig,
    datasets: &[OfflineDataset],
    dir: &Path,
    observer: &mut dyn FnMut(&PhaseReport, &ContinualState),
) -> Result<SequenceOutcome> {
    cfg.validate()?;
    check_datasets(datasets)?;
    let state = restore(dir, cfg)?;
    let done = state.completed as usize;
    if done > datasets.len() {
        return Err(Error::Consistency(format!(
            "checkpoint has {done} tasks but only {} datasets were given",
            datasets.len()
        )));
    }
    for (i, (have, given)) in state.tasks.iter().zip(datasets).enumerate() {
        if have != given.task() {
            return Err(Error::Consistency(format!(
                "task {} in the checkpoint differs from the given dataset",
                i + 1
            )));
        }
    }
    continue_sequence(state, cfg, datasets, Some(dir), observer)
}
