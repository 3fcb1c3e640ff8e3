use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critic::{CriticConfig, PolicyConfig, ValueMode};
use crate::diffusion::{ScheduleConfig, ScoreNetConfig};
use crate::error::{Error, Result};

/// What the models of earlier tasks are rehearsed on while learning a new task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayVariant {
    /// Pseudo states and actions from the frozen generators.
    Diffusion,
    /// Real samples of every earlier task.
    Oracle,
    /// Standard-normal states (in normalized space) with generated actions.
    Noise,
    /// No rehearsal and no cloning term.
    None,
}

impl ReplayVariant {
    pub const ALL: [ReplayVariant; 4] = [
        ReplayVariant::Diffusion,
        ReplayVariant::Oracle,
        ReplayVariant::Noise,
        ReplayVariant::None,
    ];

    pub fn replays(self) -> bool {
        self != ReplayVariant::None
    }
}

impl fmt::Display for ReplayVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplayVariant::Diffusion => "diffusion",
            ReplayVariant::Oracle => "oracle",
            ReplayVariant::Noise => "noise",
            ReplayVariant::None => "none",
        })
    }
}

impl FromStr for ReplayVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReplayVariant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown replay variant '{s}' (expected diffusion, oracle, noise or none)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Passes over the new task's data for each generator.
    pub generator_epochs: usize,
    /// Passes over the new task's data per critic fit; the critic is fitted
    /// once on returns and once more per value iteration.
    pub critic_epochs: usize,
    pub generator_lr: f64,
    pub critic_lr: f64,
    /// Learning rates decay linearly to this fraction over each fit.
    pub final_lr_fraction: f64,
    pub value_iterations: usize,
    /// Behavior samples per state for value estimates.
    pub value_actions: usize,
    pub value_mode: ValueMode,
    /// Reverse steps used when sampling for value estimates; the schedule's
    /// step count when unset.
    pub value_sampler_steps: Option<usize>,
    /// Pseudo pairs per earlier task; the new dataset size over `K - 1` when unset.
    pub replay_samples: Option<usize>,
    pub replay_sampler_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            generator_epochs: 60,
            critic_epochs: 30,
            generator_lr: 2e-3,
            critic_lr: 1e-3,
            final_lr_fraction: 0.1,
            value_iterations: 1,
            value_actions: 16,
            value_mode: ValueMode::Mean,
            value_sampler_steps: None,
            replay_samples: None,
            replay_sampler_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub sampler_steps: Option<usize>,
    pub policy: PolicyConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            sampler_steps: None,
            policy: PolicyConfig::default(),
        }
    }
}

/// Everything that determines a task-sequence run besides the datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub variant: ReplayVariant,
    /// Weight of replayed terms in the generator losses.
    pub beta: f64,
    /// Weight of the cloning term in the critic loss.
    pub lambda: f64,
    pub seed: u64,
    pub gamma: f64,
    pub schedule: ScheduleConfig,
    pub state_net: ScoreNetConfig,
    pub behavior_net: ScoreNetConfig,
    pub critic: CriticConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            variant: ReplayVariant::Diffusion,
            beta: 1.0,
            lambda: 1.0,
            seed: 0,
            gamma: 0.99,
            schedule: ScheduleConfig::default(),
            state_net: ScoreNetConfig::default(),
            behavior_net: ScoreNetConfig::default(),
            critic: CriticConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl SequenceConfig {
    /// Small networks and coarse sampling grids for single-core runs.
    pub fn desk() -> Self {
        let net = ScoreNetConfig {
            widths: vec![64, 64],
            time_dim: 16,
        };
        Self {
            state_net: net.clone(),
            behavior_net: net,
            critic: CriticConfig { hidden: vec![128, 128] },
            train: TrainConfig {
                value_actions: 8,
                value_sampler_steps: Some(25),
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                episodes: 8,
                sampler_steps: Some(25),
                policy: PolicyConfig {
                    candidates: 16,
                    ..PolicyConfig::default()
                },
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
            Ok(())
        };
        nonneg("beta", self.beta)?;
        nonneg("lambda", self.lambda)?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        let t = &self.train;
        if t.batch_size == 0 || t.generator_epochs == 0 || t.critic_epochs == 0 {
            return Err(Error::Config("batch size and epoch counts must be positive".into()));
        }
        if !(t.generator_lr > 0.0 && t.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(t.final_lr_fraction > 0.0 && t.final_lr_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "final_lr_fraction must lie in (0, 1], got {}",
                t.final_lr_fraction
            )));
        }
        if t.value_actions == 0 {
            return Err(Error::Config("value_actions must be at least 1".into()));
        }
        if t.replay_samples == Some(0) {
            return Err(Error::Config("replay_samples must be positive".into()));
        }
        for (name, steps) in [
            ("value_sampler_steps", t.value_sampler_steps),
            ("replay_sampler_steps", t.replay_sampler_steps),
            ("eval.sampler_steps", self.eval.sampler_steps),
        ] {
            if steps == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be positive".into()));
        }
        if let ValueMode::Reweighted { alpha } = t.value_mode {
            nonneg("value_mode.alpha", alpha)?;
        }
        self.eval.policy.validate()?;
        self.schedule.build()?;
        Ok(())
    }
}
