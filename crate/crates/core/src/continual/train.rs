use rand::Rng;

use crate::continual::replay::take_rows;
use crate::continual::{Models, ReplayData, TrainConfig};
use crate::critic::{critic_loss, CloneTerm, MultiHeadCritic};
use crate::dataset::{sample_indices, Sampling};
use crate::diffusion::{
    behavior_replay_loss, state_replay_loss, BehaviorScoreModel, DenoiseTerm, StateScoreModel, VpSchedule,
};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Parameterized, Tensor};

/// Re-hashes the frozen snapshot after every optimizer step.
pub(crate) struct FrozenGuard<'a> {
    frozen: Option<(&'a Models, u64)>,
    pub checks: u64,
}

impl<'a> FrozenGuard<'a> {
    pub fn new(frozen: Option<&'a Models>) -> Self {
        Self {
            frozen: frozen.map(|m| (m, m.param_hash())),
            checks: 0,
        }
    }

    pub fn check(&mut self, context: &str) -> Result<()> {
        if let Some((m, hash)) = self.frozen {
            if m.param_hash() != hash {
                return Err(Error::Invariant(format!("frozen models changed during {context}")));
            }
            self.checks += 1;
        }
        Ok(())
    }
}

/// Step count and per-step learning rate for one fit.
pub(crate) struct LrPlan {
    pub steps: usize,
    base: f64,
    final_fraction: f64,
}

impl LrPlan {
    pub fn new(rows: usize, epochs: usize, batch: usize, base: f64, final_fraction: f64) -> Self {
        Self {
            steps: epochs * rows.div_ceil(batch).max(1),
            base,
            final_fraction,
        }
    }

    /// Linear decay from `base` to `base * final_fraction`.
    pub fn lr(&self, step: usize) -> f64 {
        let p = step as f64 / self.steps as f64;
        self.base * (1.0 - (1.0 - self.final_fraction) * p)
    }
}

fn replay_batch(train: &TrainConfig, old_tasks: usize) -> usize {
    (train.batch_size / old_tasks.max(1)).max(1)
}

/// Mean loss over the last pass through the data.
fn tail_mean(losses: &[f64], per_epoch: usize) -> f64 {
    let tail = &losses[losses.len().saturating_sub(per_epoch)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

pub(crate) struct GeneratorFit<'a> {
    pub train: &'a TrainConfig,
    pub sched: &'a VpSchedule,
    pub t_min: f64,
    pub beta: f64,
    pub task: u32,
    pub replay: &'a [ReplayData],
}

impl GeneratorFit<'_> {
    fn plan(&self, rows: usize) -> LrPlan {
        LrPlan::new(
            rows,
            self.train.generator_epochs,
            self.train.batch_size,
            self.train.generator_lr,
            self.train.final_lr_fraction,
        )
    }

    /// Fits `p(s | task)` on `states`, rehearsing each replayed task.
    pub fn state_gen<R: Rng + ?Sized>(
        &self,
        model: &mut StateScoreModel,
        states: &Tensor,
        guard: &mut FrozenGuard,
        rng: &mut R,
    ) -> Result<f64> {
        let plan = self.plan(states.rows());
        let mut adam = AdamState::for_model(model, AdamConfig::with_lr(self.train.generator_lr));
        let rb = replay_batch(self.train, self.replay.len());
        let mut losses = Vec::with_capacity(plan.steps);
        for step in 0..plan.steps {
            let idx = sample_indices(states.rows(), self.train.batch_size, Sampling::WithoutReplacement, rng)?;
            let real = take_rows(states, &idx);
            let real_ids = vec![self.task; real.rows()];
            let mut replayed = Vec::with_capacity(self.replay.len());
            let mut ids = Vec::with_capacity(self.replay.len());
            for r in self.replay {
                let idx = sample_indices(r.len(), rb, Sampling::WithoutReplacement, rng)?;
                replayed.push(take_rows(&r.states, &idx));
                ids.push(vec![r.task; rb]);
            }
            let terms: Vec<DenoiseTerm<[u32]>> = self
                .replay
                .iter()
                .zip(&replayed)
                .zip(&ids)
                .map(|((r, data), ids)| DenoiseTerm {
                    task: r.task,
                    data,
                    cond: ids.as_slice(),
                })
                .collect();
            let real_term = DenoiseTerm {
                task: self.task,
                data: &real,
                cond: real_ids.as_slice(),
            };
            let out = state_replay_loss(model, self.sched, &real_term, &terms, self.beta, self.t_min, rng)?;
            adam.config.lr = plan.lr(step);
            adam_step(model, &out.grads, &mut adam)?;
            guard.check("state generator training")?;
            losses.push(out.loss);
        }
        Ok(tail_mean(&losses, plan.steps / self.train.generator_epochs))
    }

    /// Fits `mu(a | s)` on `(states, actions)`, rehearsing each replayed task.
    pub fn behavior_gen<R: Rng + ?Sized>(
        &self,
        model: &mut BehaviorScoreModel,
        states: &Tensor,
        actions: &Tensor,
        guard: &mut FrozenGuard,
        rng: &mut R,
    ) -> Result<f64> {
        let plan = self.plan(states.rows());
        let mut adam = AdamState::for_model(model, AdamConfig::with_lr(self.train.generator_lr));
        let rb = replay_batch(self.train, self.replay.len());
        let mut losses = Vec::with_capacity(plan.steps);
        for step in 0..plan.steps {
            let idx = sample_indices(states.rows(), self.train.batch_size, Sampling::WithoutReplacement, rng)?;
            let (real_s, real_a) = (take_rows(states, &idx), take_rows(actions, &idx));
            let mut picked = Vec::with_capacity(self.replay.len());
            for r in self.replay {
                let idx = sample_indices(r.len(), rb, Sampling::WithoutReplacement, rng)?;
                picked.push((take_rows(&r.states, &idx), take_rows(&r.actions, &idx)));
            }
            let terms: Vec<DenoiseTerm<Tensor>> = self
                .replay
                .iter()
                .zip(&picked)
                .map(|(r, (s, a))| DenoiseTerm {
                    task: r.task,
                    data: a,
                    cond: s,
                })
                .collect();
            let real_term = DenoiseTerm {
                task: self.task,
                data: &real_a,
                cond: &real_s,
            };
            let out = behavior_replay_loss(model, self.sched, &real_term, &terms, self.beta, self.t_min, rng)?;
            adam.config.lr = plan.lr(step);
            adam_step(model, &out.grads, &mut adam)?;
            guard.check("behavior generator training")?;
            losses.push(out.loss);
        }
        Ok(tail_mean(&losses, plan.steps / self.train.generator_epochs))
    }
}

pub(crate) struct CriticFit<'a> {
    pub train: &'a TrainConfig,
    pub lambda: f64,
    pub task: u32,
    /// Cloning data; empty when the variant does not rehearse.
    pub replay: &'a [ReplayData],
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CriticFitStats {
    pub loss: f64,
    pub isolation_checks: u64,
}

impl CriticFit<'_> {
    /// Regresses head `task` onto `targets` with cloning of earlier heads.
    pub fn run<R: Rng + ?Sized>(
        &self,
        critic: &mut MultiHeadCritic,
        states: &Tensor,
        actions: &Tensor,
        targets: &[f64],
        guard: &mut FrozenGuard,
        rng: &mut R,
    ) -> Result<CriticFitStats> {
        let t = self.train;
        let plan = LrPlan::new(
            states.rows(),
            t.critic_epochs,
            t.batch_size,
            t.critic_lr,
            t.final_lr_fraction,
        );
        let mut adam = AdamState::for_model(critic, AdamConfig::with_lr(t.critic_lr));
        let rb = replay_batch(t, self.replay.len());
        let cloning = self.lambda > 0.0 && !self.replay.is_empty();
        let mut stats = CriticFitStats::default();
        let mut losses = Vec::with_capacity(plan.steps);
        for step in 0..plan.steps {
            let idx = sample_indices(states.rows(), t.batch_size, Sampling::WithoutReplacement, rng)?;
            let (s, a) = (take_rows(states, &idx), take_rows(actions, &idx));
            let y: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let mut picked = Vec::new();
            if cloning {
                for r in self.replay {
                    let idx = sample_indices(r.len(), rb, Sampling::WithoutReplacement, rng)?;
                    let labels: Vec<f64> = idx.iter().map(|&i| r.labels[i]).collect();
                    picked.push((r.task, take_rows(&r.states, &idx), take_rows(&r.actions, &idx), labels));
                }
            }
            let clones: Vec<CloneTerm> = picked
                .iter()
                .map(|(task, s, a, l)| CloneTerm {
                    task: *task,
                    states: s,
                    actions: a,
                    labels: l,
                })
                .collect();
            let other_heads = if cloning {
                Vec::new()
            } else {
                head_hashes(critic, self.task)?
            };
            let out = critic_loss(critic, self.task, &s, &a, &y, &clones, self.lambda)?;
            adam.config.lr = plan.lr(step);
            adam_step(critic, &out.grads, &mut adam)?;
            if !cloning && head_hashes(critic, self.task)? != other_heads {
                return Err(Error::Invariant(format!(
                    "training head {} moved another head without a cloning term",
                    self.task
                )));
            }
            stats.isolation_checks += 1;
            guard.check("critic training")?;
            losses.push(out.loss);
        }
        stats.loss = tail_mean(&losses, plan.steps / t.critic_epochs);
        Ok(stats)
    }
}

fn head_hashes(critic: &MultiHeadCritic, skip: u32) -> Result<Vec<u64>> {
    (1..=critic.heads_count() as u32)
        .filter(|&k| k != skip)
        .map(|k| critic.head(k).map(|h| h.param_hash()))
        .collect()
}
