//! Multi-head critic, in-trajectory planning targets, behavior cloning of
//! earlier heads, and candidate resampling for action selection.

mod loss;
mod network;
mod policy;
mod targets;

pub use loss::{annotate, critic_loss, CloneTerm, CriticLoss};
pub use network::{CriticConfig, CriticTape, MultiHeadCritic};
pub use policy::{select_actions, select_index, selection_probabilities, PolicyConfig, Selection, SelectionMode};
pub use targets::{bellman_targets, segment_targets, value_estimate, ActionProposer, BehaviorProposer, ValueMode};
