use rand::Rng;

use crate::dataset::OfflineDataset;
use crate::envs::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Replayed,
}

/// A set of rows drawn from one source. States are raw (unnormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Option<Vec<f64>>,
    /// Regression targets: returns (or Bellman targets) for real rows,
    /// critic annotations for replayed rows when present.
    pub targets: Option<Vec<f64>>,
    pub next_states: Option<Tensor>,
    pub source: Source,
    pub task_ids: Vec<u32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }
}

pub trait BatchSource: Sync {
    fn len(&self) -> usize;
    fn gather(&self, indices: &[usize]) -> Batch;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    WithReplacement,
    /// Falls back to sampling with replacement when the batch exceeds the source.
    WithoutReplacement,
}

pub fn sample_indices<R: Rng + ?Sized>(n: usize, batch_size: usize, mode: Sampling, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Config("cannot sample from an empty dataset".into()));
    }
    Ok(match mode {
        Sampling::WithoutReplacement if batch_size <= n => rand::seq::index::sample(rng, n, batch_size).into_vec(),
        _ => (0..batch_size).map(|_| rng.gen_range(0..n)).collect(),
    })
}

pub fn sample_batch<S, R>(source: &S, batch_size: usize, mode: Sampling, rng: &mut R) -> Result<Batch>
where
    S: BatchSource + ?Sized,
    R: Rng + ?Sized,
{
    let idx = sample_indices(source.len(), batch_size, mode, rng)?;
    Ok(source.gather(&idx))
}

/// Flattened transitions of one or more datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    targets: Vec<f64>,
    task_ids: Vec<u32>,
    /// `(start, len)` of every trajectory in row order.
    segments: Vec<(usize, usize)>,
}

impl TransitionTable {
    pub fn from_datasets(datasets: &[&OfflineDataset]) -> Self {
        let mut t = TransitionTable {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            targets: Vec::new(),
            task_ids: Vec::new(),
            segments: Vec::new(),
        };
        for d in datasets {
            for (traj, rtg) in d.trajectories().iter().zip(d.returns_to_go()) {
                t.segments.push((t.rewards.len(), traj.len()));
                for (x, g) in traj.transitions.iter().zip(rtg) {
                    t.states.extend_from_slice(&x.s);
                    t.actions.extend_from_slice(&x.a);
                    t.rewards.push(x.r);
                    t.next_states.extend_from_slice(&x.s_next);
                    t.targets.push(*g);
                    t.task_ids.push(d.task_id());
                }
            }
        }
        t
    }

    pub fn from_dataset(d: &OfflineDataset) -> Self {
        Self::from_datasets(&[d])
    }

    pub fn rows(&self) -> usize {
        self.rewards.len()
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn states(&self) -> Tensor {
        Tensor::matrix(self.rows(), STATE_DIM, self.states.clone()).expect("sized")
    }

    pub fn actions(&self) -> Tensor {
        Tensor::matrix(self.rows(), ACTION_DIM, self.actions.clone()).expect("sized")
    }

    pub fn set_targets(&mut self, targets: Vec<f64>) -> Result<()> {
        if targets.len() != self.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} transitions",
                targets.len(),
                self.rows()
            )));
        }
        self.targets = targets;
        Ok(())
    }
}

fn gather_rows(data: &[f64], width: usize, idx: &[usize]) -> Tensor {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&data[i * width..(i + 1) * width]);
    }
    Tensor::matrix(idx.len(), width, out).expect("sized")
}

impl BatchSource for TransitionTable {
    fn len(&self) -> usize {
        self.rows()
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            states: gather_rows(&self.states, STATE_DIM, idx),
            actions: gather_rows(&self.actions, ACTION_DIM, idx),
            rewards: Some(idx.iter().map(|&i| self.rewards[i]).collect()),
            targets: Some(idx.iter().map(|&i| self.targets[i]).collect()),
            next_states: Some(gather_rows(&self.next_states, STATE_DIM, idx)),
            source: Source::Real,
            task_ids: idx.iter().map(|&i| self.task_ids[i]).collect(),
        }
    }
}

/// Replayed state-action pairs for one earlier task, optionally annotated
/// with the previous critic's values.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySet {
    pub task_id: u32,
    pub states: Tensor,
    pub actions: Tensor,
    pub labels: Option<Vec<f64>>,
}

impl BatchSource for ReplaySet {
    fn len(&self) -> usize {
        self.states.rows()
    }

    fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            states: gather_rows(self.states.data(), STATE_DIM, idx),
            actions: gather_rows(self.actions.data(), ACTION_DIM, idx),
            rewards: None,
            targets: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            next_states: None,
            source: Source::Replayed,
            task_ids: vec![self.task_id; idx.len()],
        }
    }
}

/// One optimization step's worth of data: the real term plus one replayed
/// term per earlier task, the latter weighted by `weight`.
#[derive(Debug, Clone)]
pub struct MixedStep {
    pub real: Batch,
    pub replayed: Vec<Batch>,
    pub weight: f64,
}

impl MixedStep {
    /// `real + weight * sum(replayed)`.
    pub fn combine(&self, real_loss: f64, replayed_losses: &[f64]) -> f64 {
        real_loss + self.weight * replayed_losses.iter().sum::<f64>()
    }
}

/// Emits [`MixedStep`]s for loss-level mixing of real and replayed data.
pub struct Mixer<'a> {
    real: &'a dyn BatchSource,
    replayed: Vec<&'a dyn BatchSource>,
    weight: f64,
    batch_size: usize,
    replay_batch_size: usize,
}

impl<'a> Mixer<'a> {
    /// `current_task` is K (1-based). When `K > 1` a non-empty replay list
    /// is required.
    pub fn new(
        real: &'a dyn BatchSource,
        replayed: Vec<&'a dyn BatchSource>,
        weight: f64,
        current_task: u32,
        batch_size: usize,
        replay_batch_size: usize,
    ) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!(
                "mixing weight must be finite and >= 0, got {weight}"
            )));
        }
        if current_task > 1 && (replayed.is_empty() || replayed.iter().any(|r| r.is_empty())) {
            return Err(Error::Config(format!(
                "task {current_task} needs replayed data for {} earlier tasks",
                current_task - 1
            )));
        }
        let replayed = if current_task <= 1 { Vec::new() } else { replayed };
        Ok(Self {
            real,
            replayed,
            weight,
            batch_size,
            replay_batch_size,
        })
    }

    /// Mixer that never emits replayed terms.
    pub fn real_only(real: &'a dyn BatchSource, batch_size: usize) -> Self {
        Self {
            real,
            replayed: Vec::new(),
            weight: 0.0,
            batch_size,
            replay_batch_size: 0,
        }
    }

    pub fn next_step<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<MixedStep> {
        let real = sample_batch(self.real, self.batch_size, Sampling::WithoutReplacement, rng)?;
        let replayed = if self.weight == 0.0 {
            Vec::new()
        } else {
            self.replayed
                .iter()
                .map(|src| sample_batch(*src, self.replay_batch_size, Sampling::WithoutReplacement, rng))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(MixedStep {
            real,
            replayed,
            weight: self.weight,
        })
    }
}
