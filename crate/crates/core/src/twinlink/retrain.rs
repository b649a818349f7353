//! Local retraining in a world rebuilt from the last scan, with the
//! physical robot frozen.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::td3::{Action, EnvConfig, Environment, NavEnv, ReplayBuffer, ScenarioSource, Td3Agent, Transition};
use crate::twinlink::TwinConfig;
use crate::worldsim::{Pose, Scenario, StepEvent, World};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    pub batch_size: usize,
    /// Gaussian exploration std-dev on normalized actions.
    pub explore_noise: f64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self { batch_size: 128, explore_noise: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RetrainOutcome {
    /// A noise-free episode from the pause pose reached the goal; `plan`
    /// holds its actions.
    Verified { plan: Vec<Action>, env_steps: usize, gradient_steps: usize, episodes: usize },
    Failed { env_steps: usize, gradient_steps: usize, episodes: usize },
}

impl RetrainOutcome {
    pub fn is_verified(&self) -> bool {
        matches!(self, RetrainOutcome::Verified { .. })
    }
}

/// Runs the deterministic policy once from the scenario start and returns
/// its actions if it reaches the goal without colliding.
pub fn verify_policy(agent: &Td3Agent, env: &EnvConfig, scenario: &Scenario, start_action: Action) -> Result<Option<Vec<Action>>> {
    let mut env = NavEnv::new(*env, ScenarioSource::Fixed(scenario.clone())).with_start_action(start_action);
    let mut state = env.reset()?;
    let mut plan = Vec::new();
    loop {
        let a = agent.act(&state)?;
        let out = env.step(&a)?;
        plan.push(a);
        match out.event {
            StepEvent::None => state = out.state,
            StepEvent::GoalReached => return Ok(Some(plan)),
            StepEvent::Collision | StepEvent::Timeout => return Ok(None),
        }
    }
}

/// Local environment: stricter collision distance, episode length capped
/// at the physical steps still available.
fn local_env(env: &EnvConfig, twin: &TwinConfig, world: &World, pose: &Pose, step_limit: usize) -> EnvConfig {
    let safe = env.sim.safe_dist;
    let room = ((world.clearance(pose.position()) - safe) / 2.0).max(0.0);
    let mut local = *env;
    local.sim.safe_dist = safe + twin.verify_margin.min(room);
    local.sim.max_steps = step_limit.max(1);
    local
}

/// Verification first; then TD3 training on episodes that all start at
/// `pause_pose`, re-verifying after each one, until the step budget runs
/// out. New experience goes into `buffer` alongside the pre-training data.
#[allow(clippy::too_many_arguments)]
pub fn retrain_procedure<R: Rng>(
    agent: &mut Td3Agent,
    buffer: &mut ReplayBuffer,
    local_world: &World,
    pause_pose: Pose,
    start_action: Action,
    env: &EnvConfig,
    twin: &TwinConfig,
    step_limit: usize,
    rng: &mut R,
) -> Result<RetrainOutcome> {
    let cfg = local_env(env, twin, local_world, &pause_pose, step_limit);
    let scenario = Scenario { world: local_world.clone(), start: pause_pose };
    let (mut env_steps, mut gradient_steps, mut episodes) = (0, 0, 0);
    if let Some(plan) = verify_policy(agent, &cfg, &scenario, start_action)? {
        return Ok(RetrainOutcome::Verified { plan, env_steps, gradient_steps, episodes });
    }
    let budget = twin.retrain_step_budget;
    let noise = Normal::new(0.0, twin.retrain.explore_noise.max(1e-12)).expect("finite std-dev");
    let mut sim = NavEnv::new(cfg, ScenarioSource::Fixed(scenario.clone())).with_start_action(start_action);
    while env_steps < budget {
        let mut state = sim.reset()?;
        loop {
            let a = agent.act(&state)?;
            let a = Action::new(a.linear + noise.sample(rng), a.angular + noise.sample(rng));
            let out = sim.step(&a)?;
            let done = matches!(out.event, StepEvent::GoalReached | StepEvent::Collision);
            buffer.push(Transition { s: state, a, r: out.reward, s_next: out.state.clone(), done });
            env_steps += 1;
            if let Some(batch) = buffer.sample(twin.retrain.batch_size, rng) {
                agent.update(&batch, rng)?;
                gradient_steps += 1;
            }
            if out.event.is_terminal() || env_steps >= budget {
                break;
            }
            state = out.state;
        }
        episodes += 1;
        if let Some(plan) = verify_policy(agent, &cfg, &scenario, start_action)? {
            log::info!("retraining verified after {env_steps} steps, {episodes} episodes");
            return Ok(RetrainOutcome::Verified { plan, env_steps, gradient_steps, episodes });
        }
    }
    log::warn!("retraining budget of {budget} steps exhausted");
    Ok(RetrainOutcome::Failed { env_steps, gradient_steps, episodes })
}
