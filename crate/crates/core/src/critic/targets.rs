use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::critic::MultiHeadCritic;
use crate::diffusion::{sample, BehaviorScoreModel, VpSchedule};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// In-trajectory planning targets, computed backward:
///
/// ```text
/// R_i = r_i + gamma * max(R_{i+1}, V_{i+1}),   R_last = r_last
/// ```
///
/// `values[i]` estimates `V(s_i)`; `values[0]` is never read. Use
/// `f64::NEG_INFINITY` to disable bootstrapping at a step.
pub fn bellman_targets(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Domain("targets of an empty trajectory".into()));
    }
    if values.len() != rewards.len() {
        return Err(Error::Shape(format!(
            "{} value estimates for a trajectory of {} steps",
            values.len(),
            rewards.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("value estimate at step {i}")));
    }
    let n = rewards.len();
    let mut out = vec![0.0; n];
    out[n - 1] = rewards[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = rewards[i] + gamma * out[i + 1].max(values[i + 1]);
    }
    Ok(out)
}

/// [`bellman_targets`] over concatenated trajectories given as `(start, len)` segments.
pub fn segment_targets(rewards: &[f64], values: &[f64], segments: &[(usize, usize)], gamma: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(rewards.len());
    for &(start, len) in segments {
        if start != out.len() || start + len > rewards.len() {
            return Err(Error::Consistency(format!(
                "segment ({start}, {len}) is not contiguous"
            )));
        }
        out.extend(bellman_targets(
            &rewards[start..start + len],
            &values[start..start + len],
            gamma,
        )?);
    }
    if out.len() != rewards.len() {
        return Err(Error::Consistency("segments do not cover every row".into()));
    }
    Ok(out)
}

/// Source of candidate actions for a batch of states.
pub trait ActionProposer: Sync {
    fn action_dim(&self) -> usize;

    /// `per_state` candidates for each row of `states`, grouped by state:
    /// rows `i * per_state .. (i + 1) * per_state` belong to state `i`.
    fn propose(&self, states: &Tensor, per_state: usize, rng: &mut dyn RngCore) -> Result<Tensor>;
}

/// Draws candidates from a behavior generator and clamps them to a box.
pub struct BehaviorProposer<'a> {
    pub model: &'a BehaviorScoreModel,
    pub schedule: &'a VpSchedule,
    pub bound: f64,
}

impl ActionProposer for BehaviorProposer<'_> {
    fn action_dim(&self) -> usize {
        self.model.action_dim()
    }

    fn propose(&self, states: &Tensor, per_state: usize, rng: &mut dyn RngCore) -> Result<Tensor> {
        let cond = states.repeat_rows(per_state);
        let raw = sample(self.model, &cond, self.schedule, cond.rows(), rng)?;
        Ok(raw.map(|v| v.clamp(-self.bound, self.bound)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ValueMode {
    /// Plain average of Q over behavior samples.
    Mean,
    /// Average weighted by `exp(alpha * Q)`, matching the resampling policy.
    Reweighted { alpha: f64 },
}

/// Monte Carlo estimate of `V(s) = E_a[Q^task(s, a)]` with `n_actions` proposals per state.
pub fn value_estimate(
    critic: &MultiHeadCritic,
    task: u32,
    states: &Tensor,
    proposer: &dyn ActionProposer,
    n_actions: usize,
    mode: ValueMode,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if n_actions < 1 {
        return Err(Error::Domain(
            "value estimate needs at least one action per state".into(),
        ));
    }
    critic.head(task)?;
    let actions = proposer.propose(states, n_actions, rng)?;
    let q = critic.q(task, &states.repeat_rows(n_actions), &actions)?;
    Ok(q.chunks_exact(n_actions)
        .map(|qs| match mode {
            ValueMode::Mean => qs.iter().sum::<f64>() / n_actions as f64,
            ValueMode::Reweighted { alpha } => match crate::critic::selection_probabilities(qs, alpha) {
                Some(p) => p.iter().zip(qs).map(|(p, q)| p * q).sum(),
                None => qs.iter().sum::<f64>() / n_actions as f64,
            },
        })
        .collect())
}
