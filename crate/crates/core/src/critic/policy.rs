use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::critic::{ActionProposer, MultiHeadCritic};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Resample one candidate with probability proportional to `exp(alpha * Q)`.
    Softmax,
    Argmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Inverse temperature of the resampling weights.
    pub alpha: f64,
    pub candidates: usize,
    pub mode: SelectionMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            candidates: 32,
            mode: SelectionMode::Softmax,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.candidates < 1 {
            return Err(Error::Config("policy needs at least one candidate".into()));
        }
        Ok(())
    }
}

/// Normalized `exp(alpha * (q - max q))`, or `None` when the weights are unusable.
pub fn selection_probabilities(q: &[f64], alpha: f64) -> Option<Vec<f64>> {
    if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q.iter().map(|v| (alpha * (v - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    Some(w.into_iter().map(|v| v / total).collect())
}

/// Index of the chosen candidate and whether the uniform fallback was used.
pub fn select_index<R: Rng + ?Sized>(q: &[f64], cfg: &PolicyConfig, rng: &mut R) -> (usize, bool) {
    if cfg.mode == SelectionMode::Argmax {
        let best = q
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        return match best {
            Some(i) => (i, false),
            None => (rng.gen_range(0..q.len()), true),
        };
    }
    match selection_probabilities(q, cfg.alpha) {
        Some(p) => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return (i, false);
                }
            }
            (p.len() - 1, false)
        }
        None => (rng.gen_range(0..q.len()), true),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub actions: Tensor,
    /// Rows whose weights were unusable and fell back to a uniform choice.
    pub fallbacks: usize,
}

/// One action per state: propose `cfg.candidates`, score with `Q^task`, select.
pub fn select_actions(
    proposer: &dyn ActionProposer,
    critic: &MultiHeadCritic,
    task: u32,
    states: &Tensor,
    cfg: &PolicyConfig,
    rng: &mut dyn RngCore,
) -> Result<Selection> {
    cfg.validate()?;
    let n = cfg.candidates;
    let candidates = proposer.propose(states, n, rng)?;
    let q = critic.q(task, &states.repeat_rows(n), &candidates)?;
    let dim = candidates.cols();
    let mut out = Vec::with_capacity(states.rows() * dim);
    let mut fallbacks = 0;
    for (i, qs) in q.chunks_exact(n).enumerate() {
        let (j, fell_back) = select_index(qs, cfg, rng);
        fallbacks += fell_back as usize;
        out.extend_from_slice(candidates.row(i * n + j));
    }
    Ok(Selection {
        actions: Tensor::matrix(states.rows(), dim, out)?,
        fallbacks,
    })
}
