//! Learning stack: observation/reward encodings, networks, replay, the TD3
//! update and the train/evaluate loops.

pub mod agent;
pub mod env;
pub mod eval;
pub mod nn;
pub mod replay;
pub mod reward;
pub mod state;
pub mod train;

pub use agent::{Td3Agent, Td3Config, UpdateStats};
pub use env::{EnvConfig, Environment, NavEnv, ScenarioSource, StepOutcome};
pub use eval::{
    evaluate, read_trajectories_csv, run_episode, run_waypoints, write_trajectories_csv, EpisodeResult, EvalReport, Metrics,
    MetricsReport, Policy, TrajectoryRecord,
};
pub use nn::{Activation, Mlp, MlpSpec};
pub use replay::{ReplayBuffer, Transition};
pub use reward::{compute_reward, RewardConfig};
pub use state::{build_state, Action, StateConfig, StateVector};
pub use train::{train, EpisodeLog, TrainConfig, TrainingLog, UpdateLog};
