use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::continual::{Models, ReplayVariant};
use crate::dataset::{sample_indices, NormStats, OfflineDataset, Sampling, TransitionTable};
use crate::diffusion::{sample, VpSchedule};
use crate::envs::STATE_DIM;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Rehearsal data for one earlier task, in the current normalized state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayData {
    pub task: u32,
    pub states: Tensor,
    pub actions: Tensor,
    /// Values of the frozen critic's head for `task` at each pair.
    pub labels: Vec<f64>,
}

impl ReplayData {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

fn tag_sampling_error(task: u32, e: Error) -> Error {
    match e {
        Error::Sampling { step, context } => Error::Sampling {
            step,
            context: format!("replay for task {task}: {context}"),
        },
        other => other,
    }
}

fn clamp_actions(actions: Tensor) -> Tensor {
    actions.map(|v| v.clamp(-1.0, 1.0))
}

/// `n` pseudo pairs for task `task`: states from the frozen state generator,
/// then actions from the frozen behavior generator at those states, clamped
/// to the action box. States stay in the frozen models' normalized space.
pub fn generate_pseudo_pairs<R: Rng + ?Sized>(
    frozen: &Models,
    sched: &VpSchedule,
    task: u32,
    n: usize,
    rng: &mut R,
) -> Result<(Tensor, Tensor)> {
    let ids = vec![task; n];
    let states = sample(&frozen.state_gen, ids.as_slice(), sched, n, rng).map_err(|e| tag_sampling_error(task, e))?;
    let actions = frozen_actions(frozen, sched, task, &states, rng)?;
    Ok((states, actions))
}

fn frozen_actions<R: Rng + ?Sized>(
    frozen: &Models,
    sched: &VpSchedule,
    task: u32,
    states: &Tensor,
    rng: &mut R,
) -> Result<Tensor> {
    let raw =
        sample(&frozen.behavior_gen, states, sched, states.rows(), rng).map_err(|e| tag_sampling_error(task, e))?;
    Ok(clamp_actions(raw))
}

/// Maps rows normalized under `from` into the space normalized under `to`.
pub fn renormalize(states: &Tensor, from: &NormStats, to: &NormStats) -> Tensor {
    let mut out = Vec::with_capacity(states.len());
    for row in states.iter_rows() {
        out.extend(to.normalize(&from.denormalize(row)));
    }
    Tensor::matrix(states.rows(), states.cols(), out).expect("same shape")
}

pub fn normalize_rows(states: &Tensor, stats: &NormStats) -> Tensor {
    let mut out = Vec::with_capacity(states.len());
    for row in states.iter_rows() {
        out.extend(stats.normalize(row));
    }
    Tensor::matrix(states.rows(), states.cols(), out).expect("same shape")
}

pub(crate) fn take_rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Vec::with_capacity(idx.len() * t.cols());
    for &i in idx {
        out.extend_from_slice(t.row(i));
    }
    Tensor::matrix(idx.len(), t.cols(), out).expect("sized")
}

/// Everything needed to build the rehearsal set of one earlier task.
pub(crate) struct ReplayRequest<'a> {
    pub variant: ReplayVariant,
    pub frozen: &'a Models,
    pub sched: &'a VpSchedule,
    /// Statistics the frozen models were trained under.
    pub old_stats: &'a NormStats,
    pub new_stats: &'a NormStats,
    pub archive: Option<&'a OfflineDataset>,
}

pub(crate) fn build_replay<R: Rng + ?Sized>(
    req: &ReplayRequest,
    task: u32,
    n: usize,
    rng: &mut R,
) -> Result<Option<ReplayData>> {
    let (old_states, actions) = match req.variant {
        ReplayVariant::None => return Ok(None),
        ReplayVariant::Diffusion => generate_pseudo_pairs(req.frozen, req.sched, task, n, rng)?,
        ReplayVariant::Noise => {
            let noise = (0..n * STATE_DIM).map(|_| StandardNormal.sample(rng)).collect();
            let states = Tensor::matrix(n, STATE_DIM, noise)?;
            let actions = frozen_actions(req.frozen, req.sched, task, &states, rng)?;
            (states, actions)
        }
        ReplayVariant::Oracle => {
            let data = req
                .archive
                .ok_or_else(|| Error::Config(format!("oracle replay needs the stored dataset of task {task}")))?;
            if data.task_id() != task {
                return Err(Error::Config(format!(
                    "oracle archive holds task {} where task {task} was expected",
                    data.task_id()
                )));
            }
            let table = TransitionTable::from_dataset(data);
            let idx = sample_indices(table.rows(), n, Sampling::WithoutReplacement, rng)?;
            let states = normalize_rows(&take_rows(&table.states(), &idx), req.old_stats);
            (states, take_rows(&table.actions(), &idx))
        }
    };
    let labels = req.frozen.critic.q(task, &old_states, &actions)?;
    Ok(Some(ReplayData {
        task,
        states: renormalize(&old_states, req.old_stats, req.new_stats),
        actions,
        labels,
    }))
}
