//! Step reward: terminal bonuses plus a shaped intermediate term made of a
//! near-goal distance bonus, an action term and a heading-alignment term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::td3::state::Action;
use crate::worldsim::{Point2, StepEvent};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub goal_reward: f64,
    pub collision_reward: f64,
    /// Multiplier of the heading-alignment term.
    pub orientation_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { goal_reward: 100.0, collision_reward: -100.0, orientation_scale: 50.0 }
    }
}

/// Reward with the default constants.
pub fn compute_reward(
    event: StepEvent,
    dist_to_target: f64,
    action: &Action,
    orient_unit: (f64, f64),
    target: Point2,
    robot: Point2,
) -> Result<f64> {
    RewardConfig::default().compute(event, dist_to_target, action, orient_unit, target, robot)
}

impl RewardConfig {
    pub fn compute(
        &self,
        event: StepEvent,
        dist_to_target: f64,
        action: &Action,
        orient_unit: (f64, f64),
        target: Point2,
        robot: Point2,
    ) -> Result<f64> {
        match event {
            StepEvent::GoalReached => return Ok(self.goal_reward),
            StepEvent::Collision => return Ok(self.collision_reward),
            StepEvent::None | StepEvent::Timeout => {}
        }
        let d = if dist_to_target < 1.0 { (1.0 - dist_to_target) / 2.0 } else { 0.0 };
        let a = action.linear / 2.0 - action.angular.abs() / 2.0;
        let (tx, ty) = (target.x - robot.x, target.y - robot.y);
        let norm = tx.hypot(ty);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Validation("robot sits on the target; heading term undefined".into()));
        }
        let o = (orient_unit.0 * tx + orient_unit.1 * ty) / norm * self.orientation_scale;
        Ok(d + a + o)
    }
}
