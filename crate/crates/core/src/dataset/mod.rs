//! Offline datasets: return-to-go annotation, normalization statistics,
//! persistence, batching, and real/replayed loss-level mixing.

mod batch;
mod io;

pub use batch::{
    sample_batch, sample_indices, Batch, BatchSource, MixedStep, Mixer, ReplaySet, Sampling, Source, TransitionTable,
};
pub use io::{load, save, MAGIC};

use serde::{Deserialize, Serialize};

use crate::envs::{Quality, State, TaskSpec, Trajectory, STATE_DIM};
use crate::error::{Error, Result};

/// Floor applied to per-dimension standard deviations before normalizing.
pub const MIN_STD: f64 = 0.5;

/// `R_i = r_i + gamma * R_{i+1}`, `R_last = r_last`.
pub fn compute_rtg(rewards: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Domain("return-to-go of an empty trajectory".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Domain(format!("discount {gamma} outside (0, 1]")));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = if i + 1 == rewards.len() {
            rewards[i]
        } else {
            rewards[i] + gamma * acc
        };
        out[i] = acc;
    }
    Ok(out)
}

/// Per-dimension state statistics with a sample count, mergeable across datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormStats {
    pub fn from_states<'a>(states: impl IntoIterator<Item = &'a State>) -> Self {
        let states: Vec<&State> = states.into_iter().collect();
        let n = states.len().max(1) as f64;
        let mut mean = vec![0.0; STATE_DIM];
        for s in &states {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; STATE_DIM];
        for s in &states {
            for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        Self {
            count: states.len() as u64,
            mean,
            var,
        }
    }

    /// Pooled statistics of the union of both sample sets.
    pub fn merge(&self, other: &NormStats) -> NormStats {
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        if n == 0.0 {
            return self.clone();
        }
        let mut mean = vec![0.0; self.mean.len()];
        let mut var = vec![0.0; self.mean.len()];
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            mean[i] = self.mean[i] + delta * nb / n;
            var[i] = (na * self.var[i] + nb * other.var[i]) / n + delta * delta * na * nb / (n * n);
        }
        NormStats {
            count: self.count + other.count,
            mean,
            var,
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.var.iter().map(|v| v.sqrt().max(MIN_STD)).collect()
    }

    pub fn normalize(&self, s: &[f64]) -> Vec<f64> {
        let std = self.std();
        s.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((v, m), sd)| (v - m) / sd)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        let std = self.std();
        z.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((v, m), sd)| v * sd + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    task: TaskSpec,
    quality: Quality,
    gamma: f64,
    trajectories: Vec<Trajectory>,
    rtg: Vec<Vec<f64>>,
    stats: NormStats,
}

impl OfflineDataset {
    pub fn new(task: TaskSpec, quality: Quality, gamma: f64, trajectories: Vec<Trajectory>) -> Result<Self> {
        let rtg = trajectories
            .iter()
            .map(|t| compute_rtg(&t.rewards(), gamma))
            .collect::<Result<Vec<_>>>()?;
        for t in &trajectories {
            t.check_chain()?;
        }
        let stats = NormStats::from_states(trajectories.iter().flat_map(|t| t.transitions.iter().map(|x| &x.s)));
        Ok(Self {
            task,
            quality,
            gamma,
            trajectories,
            rtg,
            stats,
        })
    }

    pub(crate) fn from_parts(
        task: TaskSpec,
        quality: Quality,
        gamma: f64,
        trajectories: Vec<Trajectory>,
        rtg: Vec<Vec<f64>>,
        stats: NormStats,
    ) -> Self {
        Self {
            task,
            quality,
            gamma,
            trajectories,
            rtg,
            stats,
        }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn task_id(&self) -> u32 {
        self.task.task_id
    }

    pub fn quality(&self) -> Quality {
        self.quality
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn returns_to_go(&self) -> &[Vec<f64>] {
        &self.rtg
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Mean undiscounted episode return.
    pub fn mean_return(&self) -> f64 {
        let n = self.trajectories.len().max(1) as f64;
        self.trajectories.iter().map(|t| t.total_reward()).sum::<f64>() / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rtg_examples() {
        assert_eq!(compute_rtg(&[1.0, 1.0, 1.0], 1.0).unwrap(), vec![3.0, 2.0, 1.0]);
        assert_eq!(compute_rtg(&[1.0, 1.0, 1.0], 0.5).unwrap(), vec![1.75, 1.5, 1.0]);
        assert_eq!(compute_rtg(&[-4.5], 0.9).unwrap(), vec![-4.5]);
    }

    #[test]
    fn rtg_errors() {
        assert!(compute_rtg(&[], 0.9).is_err());
        assert!(compute_rtg(&[1.0], 0.0).is_err());
        assert!(compute_rtg(&[1.0], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn rtg_matches_double_loop(rewards in prop::collection::vec(-10.0f64..10.0, 1..40), gamma in 0.01f64..=1.0) {
            let fast = compute_rtg(&rewards, gamma).unwrap();
            for i in 0..rewards.len() {
                let brute: f64 = (0..rewards.len() - i).map(|k| gamma.powi(k as i32) * rewards[i + k]).sum();
                prop_assert!((fast[i] - brute).abs() < 1e-12 * (1.0 + brute.abs()));
            }
        }

        #[test]
        fn merged_stats_equal_pooled(a in prop::collection::vec(prop::array::uniform4(-5.0f64..5.0), 1..30),
                                     b in prop::collection::vec(prop::array::uniform4(-5.0f64..5.0), 1..30)) {
            let merged = NormStats::from_states(&a).merge(&NormStats::from_states(&b));
            let pooled = NormStats::from_states(a.iter().chain(&b));
            prop_assert_eq!(merged.count, pooled.count);
            for i in 0..STATE_DIM {
                prop_assert!((merged.mean[i] - pooled.mean[i]).abs() < 1e-9);
                prop_assert!((merged.var[i] - pooled.var[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalize_roundtrip() {
        let stats = NormStats {
            count: 3,
            mean: vec![1.0, -2.0, 0.0, 0.5],
            var: vec![4.0, 0.01, 1.0, 9.0],
        };
        let s = [3.0, -1.0, 0.25, -0.5];
        let z = stats.normalize(&s);
        assert_eq!(z[0], 1.0);
        assert_eq!(z[1], 2.0); // std floored at MIN_STD
        let back = stats.denormalize(&z);
        for (a, b) in back.iter().zip(&s) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
