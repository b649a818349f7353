//! Observation and action encodings for the policy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidarsim::LaserScan;
use crate::worldsim::{normalize_angle, MotionLimits, Point2, Pose};

/// Layout of the policy input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    pub n_bins: usize,
    /// Goal distance is divided by this (the world diagonal).
    pub distance_scale: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self { n_bins: 20, distance_scale: 200f64.sqrt() }
    }
}

impl StateConfig {
    pub fn dim(&self) -> usize {
        self.n_bins + 4
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub lidar_bins: Vec<f64>,
    pub goal_dist: f64,
    pub goal_heading: f64,
    pub prev_v: f64,
    pub prev_w: f64,
}

impl StateVector {
    pub fn dim(&self) -> usize {
        self.lidar_bins.len() + 4
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.lidar_bins);
        out.extend_from_slice(&[self.goal_dist, self.goal_heading, self.prev_v, self.prev_w]);
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() < 5 {
            return Err(Error::Shape { expected: 5, got: values.len() });
        }
        let n = values.len() - 4;
        Ok(Self {
            lidar_bins: values[..n].to_vec(),
            goal_dist: values[n],
            goal_heading: values[n + 1],
            prev_v: values[n + 2],
            prev_w: values[n + 3],
        })
    }
}

/// Normalised action: `linear` maps to `[0, v_max]`, `angular` to
/// `[-w_max, w_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub linear: f64,
    pub angular: f64,
}

impl Action {
    pub const STOP: Action = Action { linear: -1.0, angular: 0.0 };

    pub fn new(linear: f64, angular: f64) -> Self {
        Self { linear: linear.clamp(-1.0, 1.0), angular: angular.clamp(-1.0, 1.0) }
    }

    pub fn to_velocity(&self, limits: &MotionLimits) -> (f64, f64) {
        (limits.v_max * (self.linear + 1.0) / 2.0, limits.w_max * self.angular)
    }

    /// Inverse of `to_velocity`, clamping out-of-range commands.
    pub fn from_velocity(v: f64, w: f64, limits: &MotionLimits) -> Self {
        Self::new(2.0 * v / limits.v_max - 1.0, w / limits.w_max)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.linear, self.angular]
    }
}

/// Min-pools the scan into sectors and appends the goal-relative features.
pub fn build_state(
    scan: &LaserScan,
    pose: &Pose,
    goal: Point2,
    prev_action: &Action,
    config: &StateConfig,
) -> Result<StateVector> {
    let n = scan.ranges.len();
    if config.n_bins == 0 || !n.is_multiple_of(config.n_bins) {
        return Err(Error::Validation(format!(
            "{} bins do not divide {n} beams",
            config.n_bins
        )));
    }
    let max = scan.params.max_range;
    let per_bin = n / config.n_bins;
    let lidar_bins = scan
        .ranges
        .chunks(per_bin)
        .map(|sector| {
            sector
                .iter()
                .map(|r| r.unwrap_or(max).min(max) / max)
                .fold(1.0, f64::min)
        })
        .collect();
    let dx = goal.x - pose.x;
    let dy = goal.y - pose.y;
    let heading = if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        normalize_angle(dy.atan2(dx) - pose.theta) / PI
    };
    Ok(StateVector {
        lidar_bins,
        goal_dist: dx.hypot(dy) / config.distance_scale,
        goal_heading: heading,
        prev_v: (prev_action.linear + 1.0) / 2.0,
        prev_w: prev_action.angular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidarsim::{simulate_scan, ScanParams};
    use crate::worldsim::{Bounds, World};

    fn empty_scan() -> LaserScan {
        let p = ScanParams::default();
        LaserScan { ranges: vec![None; p.n_beams], params: p }
    }

    #[test]
    fn empty_world_bins_are_one() {
        let s = build_state(&empty_scan(), &Pose::new(4.9, 5.0, 0.0), Point2::new(5.0, 5.0), &Action::STOP, &StateConfig::default()).unwrap();
        assert_eq!(s.lidar_bins, vec![1.0; 20]);
        assert_eq!(s.dim(), 24);
        assert_eq!(s.prev_v, 0.0);
    }

    #[test]
    fn aligned_goal_has_zero_heading() {
        let s = build_state(&empty_scan(), &Pose::new(0.0, 0.0, 0.0), Point2::new(5.0, 0.0), &Action::STOP, &StateConfig::default()).unwrap();
        assert_eq!(s.goal_heading, 0.0);
        assert!((s.goal_dist - 5.0 / (10.0 * 2f64.sqrt())).abs() < 1e-12);
        assert!((s.goal_dist - 0.3536).abs() < 1e-4);
        let behind = build_state(&empty_scan(), &Pose::new(0.0, 0.0, 0.0), Point2::new(-5.0, 0.0), &Action::STOP, &StateConfig::default()).unwrap();
        assert_eq!(behind.goal_heading, 1.0);
    }

    #[test]
    fn bins_take_sector_minimum() {
        let w = World::new(Bounds::default(), Point2::new(9.0, 5.0), vec![crate::worldsim::ObstacleBox::new(7.0, 5.0, 1.0, 1.0).unwrap()]).unwrap();
        let pose = Pose::new(5.0, 5.0, 0.0);
        let scan = simulate_scan(&w, &pose, &ScanParams::default());
        let s = build_state(&scan, &pose, w.goal, &Action::STOP, &StateConfig::default()).unwrap();
        // beam 90 (straight ahead) lives in sector 10 and sees the face at 1.5 m
        assert!((s.lidar_bins[10] - 0.15).abs() < 1e-12);
        assert!(s.lidar_bins.iter().all(|b| (0.0..=1.0).contains(b)));
    }

    #[test]
    fn bins_must_divide_beams() {
        let cfg = StateConfig { n_bins: 7, ..Default::default() };
        assert!(build_state(&empty_scan(), &Pose::new(0.0, 0.0, 0.0), Point2::new(1.0, 0.0), &Action::STOP, &cfg).is_err());
    }

    #[test]
    fn action_mapping_limits() {
        let lim = MotionLimits { v_max: 0.8, w_max: 1.5 };
        assert_eq!(Action::new(-1.0, 0.0).to_velocity(&lim).0, 0.0);
        assert_eq!(Action::new(1.0, 0.0).to_velocity(&lim).0, 0.8);
        assert_eq!(Action::new(3.0, -7.0).to_velocity(&lim), (0.8, -1.5));
        let a = Action::from_velocity(0.4, 0.75, &lim);
        assert_eq!(a.to_velocity(&lim), (0.4, 0.75));
    }

    #[test]
    fn slice_round_trip() {
        let s = StateVector { lidar_bins: vec![0.5, 1.0], goal_dist: 0.2, goal_heading: -0.3, prev_v: 0.1, prev_w: 0.0 };
        assert_eq!(StateVector::from_slice(&s.to_vec()).unwrap(), s);
    }
}
