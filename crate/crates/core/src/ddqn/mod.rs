//! Deep Q-learning scheduler: network, replay, agent and training loop.

pub mod agent;
pub mod network;
pub mod replay;
pub mod train;

pub use agent::{argmax, Agent, OptimizerKind, TargetRule, TrainConfig};
pub use network::QNetwork;
pub use replay::{ReplayBuffer, Transition};
pub use train::{train, train_agent, CurvePoint, EpisodeSource, SchedulingTask, TrainOutcome};
