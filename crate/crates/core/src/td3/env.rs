//! Episodic navigation environment over the ground-truth simulator.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lidarsim::{simulate_scan, LaserScan, ScanParams};
use crate::td3::reward::RewardConfig;
use crate::td3::state::{build_state, Action, StateConfig, StateVector};
use crate::worldsim::{classify, sample_scenario, step_dynamics, RobotState, Scenario, SimParams, StepEvent, WorldConfig};

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: StateVector,
    pub reward: f64,
    pub event: StepEvent,
}

pub trait Environment {
    fn reset(&mut self) -> Result<StateVector>;
    fn step(&mut self, action: &Action) -> Result<StepOutcome>;
}

/// Where episodes come from: a fresh seeded world per episode, or one
/// fixed world and start pose.
#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioSource {
    Sampled { config: WorldConfig, base_seed: u64 },
    Fixed(Scenario),
}

impl ScenarioSource {
    pub fn scenario(&self, episode: u64) -> Result<Scenario> {
        match self {
            ScenarioSource::Sampled { config, base_seed } => {
                sample_scenario(config, base_seed.wrapping_add(episode.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
            }
            ScenarioSource::Fixed(s) => Ok(s.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub sim: SimParams,
    pub scan: ScanParams,
    pub state: StateConfig,
    pub reward: RewardConfig,
}

/// Observable detail of the last step, for trajectories and logs.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub robot: RobotState,
    pub scan: LaserScan,
    pub steps: usize,
}

pub struct NavEnv {
    pub config: EnvConfig,
    source: ScenarioSource,
    episode: u64,
    scenario: Option<Scenario>,
    robot: RobotState,
    prev_action: Action,
    start_action: Action,
    steps: usize,
    last_scan: Option<LaserScan>,
}

impl NavEnv {
    pub fn new(config: EnvConfig, source: ScenarioSource) -> Self {
        Self {
            config,
            source,
            episode: 0,
            scenario: None,
            robot: RobotState::at_rest(crate::worldsim::Pose::new(0.0, 0.0, 0.0)),
            prev_action: Action::STOP,
            start_action: Action::STOP,
            steps: 0,
            last_scan: None,
        }
    }

    /// Previous-action features seen at the first step of every episode;
    /// `Action::STOP` unless the robot is already moving.
    pub fn with_start_action(mut self, action: Action) -> Self {
        self.start_action = action;
        self
    }

    /// Starts episode `episode` instead of the next one in sequence.
    pub fn reset_to(&mut self, episode: u64) -> Result<StateVector> {
        self.episode = episode;
        self.reset()
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        self.scenario.as_ref()
    }

    pub fn robot(&self) -> &RobotState {
        &self.robot
    }

    pub fn info(&self) -> Option<StepInfo> {
        self.last_scan.as_ref().map(|scan| StepInfo { robot: self.robot, scan: scan.clone(), steps: self.steps })
    }

    fn observe(&mut self) -> Result<StateVector> {
        let sc = self.scenario.as_ref().expect("reset before observe");
        let scan = simulate_scan(&sc.world, &self.robot.pose, &self.config.scan);
        let state = build_state(&scan, &self.robot.pose, sc.world.goal, &self.prev_action, &self.config.state)?;
        self.last_scan = Some(scan);
        Ok(state)
    }
}

impl Environment for NavEnv {
    fn reset(&mut self) -> Result<StateVector> {
        let sc = self.source.scenario(self.episode)?;
        self.episode += 1;
        self.robot = RobotState::at_rest(sc.start);
        self.prev_action = self.start_action;
        self.steps = 0;
        self.scenario = Some(sc);
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let action = Action::new(action.linear, action.angular);
        let sim = self.config.sim;
        self.robot = step_dynamics(&self.robot, action.to_velocity(&sim.limits), sim.dt, &sim.limits)?;
        self.steps += 1;
        self.prev_action = action;
        let sc = self.scenario.as_ref().expect("reset before step");
        let event = classify(&sc.world, &self.robot.pose, self.steps, &sim);
        let goal = sc.world.goal;
        let pos = self.robot.pose.position();
        let reward = self.config.reward.compute(event, pos.distance(&goal), &action, self.robot.pose.heading(), goal, pos)?;
        let state = self.observe()?;
        Ok(StepOutcome { state, reward, event })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{Bounds, Point2, Pose, World};

    fn corridor(start: Pose, goal: Point2) -> NavEnv {
        let world = World::new(Bounds::default(), goal, vec![]).unwrap();
        NavEnv::new(EnvConfig::default(), ScenarioSource::Fixed(Scenario { world, start }))
    }

    #[test]
    fn straight_drive_reaches_goal() {
        let mut env = corridor(Pose::new(2.0, 5.0, 0.0), Point2::new(4.0, 5.0));
        let s = env.reset().unwrap();
        assert_eq!(s.goal_heading, 0.0);
        let mut last = None;
        for _ in 0..30 {
            let out = env.step(&Action::new(1.0, 0.0)).unwrap();
            if out.event.is_terminal() {
                last = Some(out);
                break;
            }
            // facing the goal at full speed: a = 0.5, o = 50
            assert!(out.reward >= 50.5 - 1e-9);
        }
        let last = last.unwrap();
        assert_eq!(last.event, StepEvent::GoalReached);
        assert_eq!(last.reward, 100.0);
    }

    #[test]
    fn standing_still_times_out() {
        let mut env = corridor(Pose::new(2.0, 5.0, 0.0), Point2::new(8.0, 5.0));
        env.config.sim.max_steps = 20;
        env.reset().unwrap();
        let events: Vec<StepEvent> = (0..20).map(|_| env.step(&Action::STOP).unwrap().event).collect();
        assert!(events[..19].iter().all(|e| *e == StepEvent::None));
        assert_eq!(events[19], StepEvent::Timeout);
    }

    #[test]
    fn sampled_source_varies_per_episode() {
        let src = ScenarioSource::Sampled { config: WorldConfig::default(), base_seed: 11 };
        assert_ne!(src.scenario(0).unwrap(), src.scenario(1).unwrap());
        assert_eq!(src.scenario(4).unwrap(), src.scenario(4).unwrap());
    }
}
