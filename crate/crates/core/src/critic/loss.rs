use crate::critic::MultiHeadCritic;
use crate::error::{Error, Result};
use crate::numerics::{ParamGrads, Parameterized, Tensor};

/// Pseudo pairs of an earlier task with the previous critic's labels.
#[derive(Debug, Clone, Copy)]
pub struct CloneTerm<'a> {
    pub task: u32,
    pub states: &'a Tensor,
    pub actions: &'a Tensor,
    pub labels: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    /// `regression + lambda * cloning`.
    pub loss: f64,
    pub regression: f64,
    pub cloning: f64,
    pub grads: ParamGrads,
}

/// Labels for replayed pairs of `task` from the frozen previous critic.
pub fn annotate(old: &MultiHeadCritic, task: u32, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
    old.q(task, states, actions)
}

fn squared_error(
    critic: &MultiHeadCritic,
    task: u32,
    states: &Tensor,
    actions: &Tensor,
    targets: &[f64],
    scale: f64,
    grads: &mut ParamGrads,
) -> Result<f64> {
    if targets.len() != states.rows() {
        return Err(Error::Shape(format!(
            "{} targets for {} rows",
            targets.len(),
            states.rows()
        )));
    }
    if states.rows() == 0 {
        return Err(Error::Shape(format!("empty batch for head {task}")));
    }
    let tape = critic.forward_features(states, actions)?;
    let q = critic.head_output(task, &tape)?;
    let n = q.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(q.len());
    for (qi, ti) in q.iter().zip(targets) {
        let d = qi - ti;
        loss += d * d;
        grad.push(scale * 2.0 * d / n);
    }
    if scale != 0.0 {
        critic.accumulate_grads(task, &tape, &grad, grads)?;
    }
    Ok(loss / n)
}

/// Mean squared regression of head `task` onto `targets`, plus `lambda` times
/// the mean squared deviation of each earlier head from its labels.
pub fn critic_loss(
    critic: &MultiHeadCritic,
    task: u32,
    states: &Tensor,
    actions: &Tensor,
    targets: &[f64],
    clones: &[CloneTerm],
    lambda: f64,
) -> Result<CriticLoss> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!(
            "cloning weight must be finite and >= 0, got {lambda}"
        )));
    }
    for c in clones {
        if c.task == 0 || c.task >= task {
            return Err(Error::Domain(format!(
                "cloning term for task {} while training task {task}",
                c.task
            )));
        }
    }
    let mut grads = critic.zero_grads();
    let regression = squared_error(critic, task, states, actions, targets, 1.0, &mut grads)?;
    let own = critic.head_groups(task)?;
    let backbone_groups = own.start - 2 * (task as usize - 1);
    for (g, values) in grads.0.iter().enumerate().skip(backbone_groups) {
        if !own.contains(&g) && values.iter().any(|v| *v != 0.0) {
            return Err(Error::Invariant(format!(
                "regression on head {task} produced gradient in parameter group {g}"
            )));
        }
    }
    let mut cloning = 0.0;
    if lambda > 0.0 {
        for c in clones {
            cloning += squared_error(critic, c.task, c.states, c.actions, c.labels, lambda, &mut grads)?;
        }
    }
    let loss = regression + lambda * cloning;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "critic loss (regression {regression}, cloning {cloning})"
        )));
    }
    grads.ensure_finite("critic gradients")?;
    Ok(CriticLoss {
        loss,
        regression,
        cloning,
        grads,
    })
}
