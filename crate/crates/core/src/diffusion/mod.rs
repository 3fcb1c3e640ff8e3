//! Variance-preserving diffusion: forward perturbation, denoising losses for
//! the state and behavior generators, replay-mixed losses, and the
//! reverse-time sampler.

mod loss;
mod model;
mod sampler;
mod schedule;

pub use loss::{
    behavior_loss, behavior_replay_loss, denoising_loss, denoising_loss_with, eval_denoising_loss, replay_loss,
    replay_loss_with, state_loss, state_replay_loss, DenoiseTerm, LossOutput, NoiseDraw,
};
pub use model::{
    BehaviorScoreModel, BehaviorTape, ScoreModel, ScoreNetConfig, StateScoreModel, StateTape, TrainableScore,
    TASK_EMBED_DIM,
};
pub use sampler::sample;
pub use schedule::{perturb, schedule_coeffs, ScheduleConfig, VpSchedule};
