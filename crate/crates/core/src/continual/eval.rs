use rand::RngCore;

use crate::continual::{EvalConfig, Models};
use crate::critic::{select_actions, BehaviorProposer};
use crate::dataset::NormStats;
use crate::diffusion::VpSchedule;
use crate::envs::{initial_state, step, State, TaskSpec, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::parallel::map_indices;
use crate::rng;

/// Episode returns of one task under the resampling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReturns {
    pub task: u32,
    pub returns: Vec<f64>,
    /// Action selections that fell back to a uniform choice.
    pub fallbacks: usize,
}

impl TaskReturns {
    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.returns.len().max(1) as f64;
        (self.returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / n).sqrt()
    }
}

/// Runs `cfg.episodes` episodes of `task` in lockstep, choosing actions with
/// critic head `task.task_id` over candidates from the behavior generator.
pub fn evaluate_task(
    models: &Models,
    stats: &NormStats,
    task: &TaskSpec,
    sched: &VpSchedule,
    cfg: &EvalConfig,
    rng: &mut dyn RngCore,
) -> Result<TaskReturns> {
    models.critic.head(task.task_id)?;
    let sched = match cfg.sampler_steps {
        Some(steps) => sched.with_steps(steps)?,
        None => sched.clone(),
    };
    let proposer = BehaviorProposer {
        model: &models.behavior_gen,
        schedule: &sched,
        bound: 1.0,
    };
    let mut states: Vec<State> = (0..cfg.episodes).map(|_| initial_state(rng)).collect();
    let mut returns = vec![0.0; cfg.episodes];
    let mut fallbacks = 0;
    for _ in 0..task.horizon {
        let mut norm = Vec::with_capacity(states.len() * STATE_DIM);
        for s in &states {
            norm.extend(stats.normalize(s));
        }
        let norm = Tensor::matrix(states.len(), STATE_DIM, norm)?;
        let sel = select_actions(&proposer, &models.critic, task.task_id, &norm, &cfg.policy, rng)?;
        fallbacks += sel.fallbacks;
        for (e, s) in states.iter_mut().enumerate() {
            let a: [f64; ACTION_DIM] = sel.actions.row(e).try_into().expect("action width");
            let out = step(task, s, &a);
            returns[e] += out.reward;
            *s = out.next;
        }
    }
    if let Some(bad) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!(
            "return of episode {bad} on task {}",
            task.task_id
        )));
    }
    Ok(TaskReturns {
        task: task.task_id,
        returns,
        fallbacks,
    })
}

/// Evaluates every task in `tasks`, each on its own random stream derived
/// from `(seed, phase, task)`.
pub fn evaluate(
    models: &Models,
    stats: &NormStats,
    tasks: &[TaskSpec],
    sched: &VpSchedule,
    cfg: &EvalConfig,
    seed: u64,
    phase: u32,
) -> Result<Vec<TaskReturns>> {
    map_indices(tasks.len(), |i| {
        let task = &tasks[i];
        let mut rng = rng::stream(seed, &[phase as u64, EVAL_STREAM, task.task_id as u64]);
        evaluate_task(models, stats, task, sched, cfg, &mut rng)
    })
    .into_iter()
    .collect()
}

pub(crate) const EVAL_STREAM: u64 = 6;
