//! Point-mass task families and scripted data-collection policies.
//!
//! State is `(x, y, vx, vy)`, action is a 2D acceleration in `[-1, 1]^2`.
//! Integration:
//!
//! ```text
//! pos' = pos + dt * vel
//! vel' = clamp((vel + dt * a / mass) * (1 - friction * dt), -V_MAX, V_MAX)
//! ```
//!
//! Rewards are computed from the velocity of the state the action is taken in.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::rng;

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;
pub const DT: f64 = 0.05;
pub const BASE_FRICTION: f64 = 0.1;
pub const BASE_MASS: f64 = 1.0;
/// Per-component velocity bound, also the upper bound for target speeds.
pub const V_MAX: f64 = 2.0;
pub const DEFAULT_HORIZON: usize = 50;

const EXPERT_GAIN: f64 = 4.0;
const EXPERT_SPEED: f64 = 1.5;
const MEDIUM_NOISE: f64 = 0.3;

pub type State = [f64; STATE_DIM];
pub type Action = [f64; ACTION_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Reward is velocity projected on a unit direction.
    DirReward { direction: [f64; 2] },
    /// Reward is `-| |v| - target_speed |`.
    VelReward { target_speed: f64 },
    /// Reward is forward (x) velocity under scaled friction and mass.
    DynShift { friction_mult: f64, mass_mult: f64 },
}

impl TaskKind {
    pub fn direction_from_degrees(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        TaskKind::DirReward { direction: [c, s] }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            TaskKind::DirReward { .. } => "DirReward",
            TaskKind::VelReward { .. } => "VelReward",
            TaskKind::DynShift { .. } => "DynShift",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            TaskKind::DirReward { direction } => direction.to_vec(),
            TaskKind::VelReward { target_speed } => vec![target_speed],
            TaskKind::DynShift {
                friction_mult,
                mass_mult,
            } => vec![friction_mult, mass_mult],
        }
    }

    pub fn from_parts(family: &str, params: &[f64]) -> Result<Self> {
        let kind = match (family, params) {
            ("DirReward", [x, y]) => TaskKind::DirReward { direction: [*x, *y] },
            ("VelReward", [v]) => TaskKind::VelReward { target_speed: *v },
            ("DynShift", [f, m]) => TaskKind::DynShift {
                friction_mult: *f,
                mass_mult: *m,
            },
            ("DirReward" | "VelReward" | "DynShift", _) => {
                return Err(Error::Config(format!(
                    "family {family} got {} parameters",
                    params.len()
                )))
            }
            (other, _) => return Err(Error::Config(format!("unknown task family '{other}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskKind::DirReward { direction } => {
                let n = (direction[0] * direction[0] + direction[1] * direction[1]).sqrt();
                if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("direction {direction:?} is not a unit vector")));
                }
            }
            TaskKind::VelReward { target_speed } => {
                if !(0.0..=V_MAX).contains(&target_speed) {
                    return Err(Error::Config(format!(
                        "target speed {target_speed} outside [0, {V_MAX}]"
                    )));
                }
            }
            TaskKind::DynShift {
                friction_mult,
                mass_mult,
            } => {
                if !(friction_mult.is_finite() && friction_mult >= 0.0 && mass_mult.is_finite() && mass_mult > 0.0) {
                    return Err(Error::Config(format!(
                        "invalid dynamics multipliers friction={friction_mult} mass={mass_mult}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn friction(&self) -> f64 {
        match *self {
            TaskKind::DynShift { friction_mult, .. } => BASE_FRICTION * friction_mult,
            _ => BASE_FRICTION,
        }
    }

    fn mass(&self) -> f64 {
        match *self {
            TaskKind::DynShift { mass_mult, .. } => BASE_MASS * mass_mult,
            _ => BASE_MASS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u32,
    pub kind: TaskKind,
    pub horizon: usize,
}

impl TaskSpec {
    pub fn new(task_id: u32, kind: TaskKind, horizon: usize) -> Result<Self> {
        kind.validate()?;
        if task_id == 0 {
            return Err(Error::Config("task ids start at 1".into()));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self { task_id, kind, horizon })
    }
}

/// Checks that ids are `1, 2, ..., n` in order.
pub fn validate_sequence(tasks: &[TaskSpec]) -> Result<()> {
    for (i, t) in tasks.iter().enumerate() {
        if t.task_id as usize != i + 1 {
            return Err(Error::Config(format!(
                "task ids must be consecutive from 1; position {} has id {}",
                i + 1,
                t.task_id
            )));
        }
        t.kind.validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: State,
    pub reward: f64,
    /// Point-mass dynamics never terminate on their own; episodes end at the horizon.
    pub done: bool,
    /// The action was outside the box and got clamped.
    pub clamped: bool,
}

pub fn clamp_action(a: Action) -> (Action, bool) {
    let c = [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)];
    (c, c != a)
}

pub fn reward(kind: &TaskKind, s: &State) -> f64 {
    let (vx, vy) = (s[2], s[3]);
    match *kind {
        TaskKind::DirReward { direction } => vx * direction[0] + vy * direction[1],
        TaskKind::VelReward { target_speed } => -((vx * vx + vy * vy).sqrt() - target_speed).abs(),
        TaskKind::DynShift { .. } => vx,
    }
}

pub fn step(task: &TaskSpec, s: &State, a: &Action) -> StepOutcome {
    let (a, clamped) = clamp_action(*a);
    let kind = &task.kind;
    let (m, f) = (kind.mass(), kind.friction());
    let damp = 1.0 - f * DT;
    let vx = ((s[2] + DT * a[0] / m) * damp).clamp(-V_MAX, V_MAX);
    let vy = ((s[3] + DT * a[1] / m) * damp).clamp(-V_MAX, V_MAX);
    let next = [s[0] + DT * s[2], s[1] + DT * s[3], vx, vy];
    StepOutcome {
        next,
        reward: reward(kind, s),
        done: false,
        clamped,
    }
}

pub fn initial_state<R: Rng + ?Sized>(rng: &mut R) -> State {
    [
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.05..0.05),
        rng.gen_range(-0.05..0.05),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Expert,
    Medium,
    Replay,
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quality::Expert => "expert",
            Quality::Medium => "medium",
            Quality::Replay => "replay",
        })
    }
}

impl FromStr for Quality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Quality::Expert),
            "medium" => Ok(Quality::Medium),
            "replay" => Ok(Quality::Replay),
            other => Err(Error::Config(format!("unknown quality tier '{other}'"))),
        }
    }
}

/// Proportional velocity controller toward the task's preferred velocity.
pub fn expert_action(task: &TaskSpec, s: &State) -> Action {
    let target = match task.kind {
        TaskKind::DirReward { direction } => [EXPERT_SPEED * direction[0], EXPERT_SPEED * direction[1]],
        TaskKind::VelReward { target_speed } => [target_speed, 0.0],
        TaskKind::DynShift { .. } => [EXPERT_SPEED, 0.0],
    };
    clamp_action([EXPERT_GAIN * (target[0] - s[2]), EXPERT_GAIN * (target[1] - s[3])]).0
}

pub fn uniform_action<R: Rng + ?Sized>(rng: &mut R) -> Action {
    [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
}

pub fn medium_action<R: Rng + ?Sized>(task: &TaskSpec, s: &State, rng: &mut R) -> Action {
    let e = expert_action(task, s);
    let noise = Normal::new(0.0, MEDIUM_NOISE).expect("valid sigma");
    clamp_action([e[0] + noise.sample(rng), e[1] + noise.sample(rng)]).0
}

/// `progress` in `[0, 1]` is the fraction of collection completed; the
/// replay tier mixes uniform, medium and expert with weights
/// `(1-p)^2, 2p(1-p), p^2`.
pub fn scripted_policy<R: Rng + ?Sized>(
    task: &TaskSpec,
    s: &State,
    quality: Quality,
    progress: f64,
    rng: &mut R,
) -> Action {
    match quality {
        Quality::Expert => expert_action(task, s),
        Quality::Medium => medium_action(task, s, rng),
        Quality::Replay => {
            let p = progress.clamp(0.0, 1.0);
            let u: f64 = rng.gen();
            if u < (1.0 - p) * (1.0 - p) {
                uniform_action(rng)
            } else if u < 1.0 - p * p {
                medium_action(task, s, rng)
            } else {
                expert_action(task, s)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: Action,
    pub r: f64,
    pub s_next: State,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.r).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.r).sum()
    }

    /// `s_next` of each step must equal `s` of the following step.
    pub fn check_chain(&self) -> Result<()> {
        for (i, w) in self.transitions.windows(2).enumerate() {
            if w[0].s_next != w[1].s {
                return Err(Error::Consistency(format!(
                    "trajectory breaks between steps {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub clamped_actions: u64,
}

/// Runs one episode of `task.horizon` steps.
pub fn rollout<R, P>(task: &TaskSpec, mut policy: P, rng: &mut R, diag: &mut Diagnostics) -> Trajectory
where
    R: Rng + ?Sized,
    P: FnMut(&State, usize, &mut R) -> Action,
{
    let mut s = initial_state(rng);
    let mut transitions = Vec::with_capacity(task.horizon);
    for i in 0..task.horizon {
        let a_raw = policy(&s, i, rng);
        let out = step(task, &s, &a_raw);
        if out.clamped {
            diag.clamped_actions += 1;
        }
        let (a, _) = clamp_action(a_raw);
        transitions.push(Transition {
            s,
            a,
            r: out.reward,
            s_next: out.next,
            done: out.done || i + 1 == task.horizon,
        });
        s = out.next;
    }
    Trajectory { transitions }
}

/// Collects `ceil(n_transitions / horizon)` full-length trajectories.
pub fn collect_dataset(
    task: &TaskSpec,
    quality: Quality,
    n_transitions: usize,
    seed: u64,
    gamma: f64,
) -> Result<OfflineDataset> {
    if n_transitions < task.horizon {
        return Err(Error::Config(format!(
            "need at least one episode ({} transitions), asked for {n_transitions}",
            task.horizon
        )));
    }
    let episodes = n_transitions.div_ceil(task.horizon);
    let mut rng = rng::stream(seed, &[task.task_id as u64, quality as u64]);
    let mut diag = Diagnostics::default();
    let trajectories = (0..episodes)
        .map(|e| {
            let progress = if episodes > 1 {
                e as f64 / (episodes - 1) as f64
            } else {
                1.0
            };
            rollout(
                task,
                |s, _, r| scripted_policy(task, s, quality, progress, r),
                &mut rng,
                &mut diag,
            )
        })
        .collect();
    OfflineDataset::new(*task, quality, gamma, trajectories)
}
