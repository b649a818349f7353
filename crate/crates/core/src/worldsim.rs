//! Ground-truth 2D world: obstacle layout, unicycle kinematics, collision
//! and goal predicates, and seeded sparse-world generation.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn heading(&self) -> (f64, f64) {
        (self.theta.cos(), self.theta.sin())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    pub v: f64,
    pub w: f64,
}

impl RobotState {
    pub fn at_rest(pose: Pose) -> Self {
        Self { pose, v: 0.0, w: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionLimits {
    pub v_max: f64,
    pub w_max: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self { v_max: 1.0, w_max: 1.0 }
    }
}

/// Axis-aligned box obstacle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl ObstacleBox {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        ensure_finite("obstacle", &[cx, cy, width, height])?;
        if width <= 0.0 || height <= 0.0 {
            return Err(Error::Validation(format!(
                "obstacle size must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { cx, cy, width, height })
    }

    pub fn min_x(&self) -> f64 {
        self.cx - self.width / 2.0
    }
    pub fn max_x(&self) -> f64 {
        self.cx + self.width / 2.0
    }
    pub fn min_y(&self) -> f64 {
        self.cy - self.height / 2.0
    }
    pub fn max_y(&self) -> f64 {
        self.cy + self.height / 2.0
    }

    /// Euclidean distance from a point to the box surface, 0 inside.
    pub fn distance_to(&self, p: Point2) -> f64 {
        let dx = ((p.x - self.cx).abs() - self.width / 2.0).max(0.0);
        let dy = ((p.y - self.cy).abs() - self.height / 2.0).max(0.0);
        dx.hypot(dy)
    }

    /// Surface-to-surface gap between two boxes, 0 when they overlap.
    pub fn gap_to(&self, other: &ObstacleBox) -> f64 {
        let gx = ((self.cx - other.cx).abs() - (self.width + other.width) / 2.0).max(0.0);
        let gy = ((self.cy - other.cy).abs() - (self.height + other.height) / 2.0).max(0.0);
        gx.hypot(gy)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x() && p.x <= self.max_x() && p.y >= self.min_y() && p.y <= self.max_y()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn contains_box(&self, b: &ObstacleBox) -> bool {
        b.min_x() >= self.xmin && b.max_x() <= self.xmax && b.min_y() >= self.ymin && b.max_y() <= self.ymax
    }

    pub fn diagonal(&self) -> f64 {
        (self.xmax - self.xmin).hypot(self.ymax - self.ymin)
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self { xmin: 0.0, ymin: 0.0, xmax: 10.0, ymax: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub bounds: Bounds,
    pub goal: Point2,
    pub obstacles: Vec<ObstacleBox>,
}

impl World {
    pub fn new(bounds: Bounds, goal: Point2, obstacles: Vec<ObstacleBox>) -> Result<Self> {
        let world = Self { bounds, goal, obstacles };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        ensure_finite("bounds", &[b.xmin, b.ymin, b.xmax, b.ymax])?;
        ensure_finite("goal", &[self.goal.x, self.goal.y])?;
        if b.xmin >= b.xmax || b.ymin >= b.ymax {
            return Err(Error::Validation("bounds must have positive extent".into()));
        }
        if !b.contains(self.goal) {
            return Err(Error::Validation("goal lies outside bounds".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            ObstacleBox::new(o.cx, o.cy, o.width, o.height)?;
            if !b.contains_box(o) {
                return Err(Error::Validation(format!("obstacle {i} is not inside bounds")));
            }
        }
        Ok(())
    }

    /// Distance from `p` to the nearest obstacle surface; infinite when empty.
    pub fn clearance(&self, p: Point2) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let world: World = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepEvent {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "goal")]
    GoalReached,
    #[serde(rename = "collision")]
    Collision,
    #[serde(rename = "timeout")]
    Timeout,
}

impl StepEvent {
    pub fn is_terminal(self) -> bool {
        self != StepEvent::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepEvent::None => "none",
            StepEvent::GoalReached => "goal",
            StepEvent::Collision => "collision",
            StepEvent::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => StepEvent::None,
            "goal" => StepEvent::GoalReached,
            "collision" => StepEvent::Collision,
            "timeout" => StepEvent::Timeout,
            _ => return None,
        })
    }
}

/// Simulation constants shared by the physical world and every local twin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    pub limits: MotionLimits,
    pub safe_dist: f64,
    pub goal_tol: f64,
    pub max_steps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            limits: MotionLimits::default(),
            safe_dist: 0.5,
            goal_tol: 0.3,
            max_steps: 500,
        }
    }
}

/// One forward-Euler step of the unicycle model. Commands are clamped to
/// the motion limits and the clamped values are returned as the new v, w.
pub fn step_dynamics(
    state: &RobotState,
    cmd: (f64, f64),
    dt: f64,
    limits: &MotionLimits,
) -> Result<RobotState> {
    let p = &state.pose;
    ensure_finite("state", &[p.x, p.y, p.theta, state.v, state.w])?;
    ensure_finite("command", &[cmd.0, cmd.1, dt])?;
    if dt <= 0.0 {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let v = cmd.0.clamp(0.0, limits.v_max);
    let w = cmd.1.clamp(-limits.w_max, limits.w_max);
    let pose = Pose {
        x: p.x + v * p.theta.cos() * dt,
        y: p.y + v * p.theta.sin() * dt,
        theta: normalize_angle(p.theta + w * dt),
    };
    Ok(RobotState { pose, v, w })
}

/// True when the robot is closer than `safe_dist` to any obstacle surface or
/// has left the world bounds.
pub fn check_collision(world: &World, pose: &Pose, safe_dist: f64) -> bool {
    let p = pose.position();
    !world.bounds.contains(p) || world.clearance(p) < safe_dist
}

pub fn goal_reached(pose: &Pose, goal: Point2, goal_tol: f64) -> bool {
    pose.position().distance(&goal) < goal_tol
}

/// Terminal classification after `steps_taken` integrated steps. Collision
/// takes precedence over goal; timeout only fires at the step budget.
pub fn classify(world: &World, pose: &Pose, steps_taken: usize, sim: &SimParams) -> StepEvent {
    if check_collision(world, pose, sim.safe_dist) {
        StepEvent::Collision
    } else if goal_reached(pose, world.goal, sim.goal_tol) {
        StepEvent::GoalReached
    } else if steps_taken >= sim.max_steps {
        StepEvent::Timeout
    } else {
        StepEvent::None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub bounds: Bounds,
    pub n_obstacles: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Minimum surface-to-surface gap between two obstacles.
    pub min_separation: f64,
    pub safe_dist: f64,
    /// Extra clearance beyond `safe_dist` required around start and goal.
    pub spawn_clearance: f64,
    /// Start and goal keep this distance from the bounds.
    pub edge_margin: f64,
    pub min_goal_distance: f64,
    pub max_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            bounds: Bounds::default(),
            n_obstacles: 4,
            min_size: 0.5,
            max_size: 1.5,
            min_separation: 1.2,
            safe_dist: 0.5,
            spawn_clearance: 0.5,
            edge_margin: 1.0,
            min_goal_distance: 4.0,
            max_attempts: 10_000,
        }
    }
}

/// A sampled world together with the robot's starting pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub world: World,
    pub start: Pose,
}

pub fn sample_world(config: &WorldConfig, seed: u64) -> Result<World> {
    Ok(sample_scenario(config, seed)?.world)
}

/// Rejection-samples a sparse world, then a start and goal with clearance.
pub fn sample_scenario(config: &WorldConfig, seed: u64) -> Result<Scenario> {
    let b = config.bounds;
    if config.min_size <= 0.0 || config.max_size < config.min_size {
        return Err(Error::Infeasible("obstacle size range is empty".into()));
    }
    if config.max_size >= (b.xmax - b.xmin).min(b.ymax - b.ymin) {
        return Err(Error::Infeasible("obstacles do not fit inside bounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacles: Vec<ObstacleBox> = Vec::with_capacity(config.n_obstacles);
    for i in 0..config.n_obstacles {
        let mut placed = false;
        for _ in 0..config.max_attempts {
            let width = rng.gen_range(config.min_size..=config.max_size);
            let height = rng.gen_range(config.min_size..=config.max_size);
            let cx = rng.gen_range(b.xmin + width / 2.0..=b.xmax - width / 2.0);
            let cy = rng.gen_range(b.ymin + height / 2.0..=b.ymax - height / 2.0);
            let candidate = ObstacleBox { cx, cy, width, height };
            if obstacles.iter().all(|o| o.gap_to(&candidate) >= config.min_separation) {
                obstacles.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place obstacle {i} after {} attempts",
                config.max_attempts
            )));
        }
    }

    let clearance = config.safe_dist + config.spawn_clearance;
    let (lo_x, hi_x) = (b.xmin + config.edge_margin, b.xmax - config.edge_margin);
    let (lo_y, hi_y) = (b.ymin + config.edge_margin, b.ymax - config.edge_margin);
    if lo_x >= hi_x || lo_y >= hi_y {
        return Err(Error::Infeasible("edge margin leaves no room for start/goal".into()));
    }
    let free_point = |rng: &mut ChaCha8Rng| -> Option<Point2> {
        for _ in 0..config.max_attempts {
            let p = Point2::new(rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y));
            if obstacles.iter().all(|o| o.distance_to(p) >= clearance) {
                return Some(p);
            }
        }
        None
    };

    for _ in 0..config.max_attempts {
        let start = free_point(&mut rng)
            .ok_or_else(|| Error::Infeasible("no obstacle-free start position".into()))?;
        let goal = free_point(&mut rng)
            .ok_or_else(|| Error::Infeasible("no obstacle-free goal position".into()))?;
        if start.distance(&goal) < config.min_goal_distance {
            continue;
        }
        let theta = normalize_angle(rng.gen_range(-PI..PI));
        let world = World::new(b, goal, obstacles)?;
        return Ok(Scenario {
            world,
            start: Pose { x: start.x, y: start.y, theta },
        });
    }
    Err(Error::Infeasible(format!(
        "no start/goal pair at least {} m apart",
        config.min_goal_distance
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_box_world() -> World {
        World::new(
            Bounds { xmin: -5.0, ymin: -5.0, xmax: 10.0, ymax: 5.0 },
            Point2::new(5.0, 0.0),
            vec![ObstacleBox::new(3.0, 0.0, 1.0, 1.0).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn zero_command_keeps_pose() {
        let s = RobotState::at_rest(Pose::new(1.2, -3.4, 2.0));
        let out = step_dynamics(&s, (0.0, 0.0), 0.1, &MotionLimits::default()).unwrap();
        assert_eq!(out.pose, s.pose);
    }

    #[test]
    fn straight_line_step() {
        let s = RobotState::at_rest(Pose::new(0.0, 0.0, 0.0));
        let out = step_dynamics(&s, (1.0, 0.0), 0.1, &MotionLimits::default()).unwrap();
        assert_abs_diff_eq!(out.pose.x, 0.1, epsilon = 1e-15);
        assert_eq!(out.pose.y, 0.0);
        assert_eq!(out.pose.theta, 0.0);
        assert_eq!((out.v, out.w), (1.0, 0.0));
    }

    #[test]
    fn pure_rotation_quarter_turn() {
        let limits = MotionLimits { v_max: 1.0, w_max: 4.0 };
        let s = RobotState::at_rest(Pose::new(0.0, 0.0, 0.0));
        let out = step_dynamics(&s, (0.0, PI), 0.5, &limits).unwrap();
        assert_eq!((out.pose.x, out.pose.y), (0.0, 0.0));
        assert_abs_diff_eq!(out.pose.theta, PI / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn commands_are_clamped() {
        let s = RobotState::at_rest(Pose::new(0.0, 0.0, 0.0));
        let out = step_dynamics(&s, (5.0, -9.0), 0.1, &MotionLimits::default()).unwrap();
        assert_eq!((out.v, out.w), (1.0, -1.0));
        let back = step_dynamics(&s, (-1.0, 0.0), 0.1, &MotionLimits::default()).unwrap();
        assert_eq!(back.v, 0.0);
    }

    #[test]
    fn non_finite_input_rejected() {
        let s = RobotState::at_rest(Pose::new(0.0, 0.0, 0.0));
        let lim = MotionLimits::default();
        assert!(step_dynamics(&s, (f64::NAN, 0.0), 0.1, &lim).is_err());
        assert!(step_dynamics(&s, (0.0, 0.0), f64::INFINITY, &lim).is_err());
        assert!(step_dynamics(&s, (0.0, 0.0), 0.0, &lim).is_err());
        let bad = RobotState { pose: Pose { x: f64::NAN, y: 0.0, theta: 0.0 }, v: 0.0, w: 0.0 };
        assert!(step_dynamics(&bad, (0.0, 0.0), 0.1, &lim).is_err());
    }

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn collision_cases() {
        let empty = World::new(Bounds::default(), Point2::new(5.0, 5.0), vec![]).unwrap();
        assert!(!check_collision(&empty, &Pose::new(1.0, 1.0, 0.0), 0.5));
        assert!(check_collision(&empty, &Pose::new(-0.1, 1.0, 0.0), 0.5));

        let w = unit_box_world();
        assert!(check_collision(&w, &Pose::new(3.0, 0.0, 0.0), 0.5));
        // surface distance 0.49
        assert!(check_collision(&w, &Pose::new(3.0, 0.99, 0.0), 0.5));
        assert!(!check_collision(&w, &Pose::new(3.0, 1.01, 0.0), 0.5));
        // corner offset (0.375, 0.5) is exactly 0.625 from the surface
        assert!(!check_collision(&w, &Pose::new(3.875, 1.0, 0.0), 0.625));
        assert!(check_collision(&w, &Pose::new(3.875, 1.0, 0.0), 0.626));
    }

    #[test]
    fn goal_predicate() {
        let g = Point2::new(5.0, 0.0);
        assert!(goal_reached(&Pose::new(5.0, 0.0, 0.0), g, 0.3));
        assert!(!goal_reached(&Pose::new(5.25, 0.0, 0.0), g, 0.25));
        assert!(goal_reached(&Pose::new(4.8, 0.0, 0.0), g, 0.3));
    }

    #[test]
    fn empty_world_sample() {
        let cfg = WorldConfig { n_obstacles: 0, ..Default::default() };
        let w = sample_world(&cfg, 3).unwrap();
        assert!(w.obstacles.is_empty());
        assert!(w.bounds.contains(w.goal));
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = WorldConfig::default();
        assert_eq!(sample_scenario(&cfg, 42).unwrap(), sample_scenario(&cfg, 42).unwrap());
        assert_ne!(sample_world(&cfg, 42).unwrap(), sample_world(&cfg, 43).unwrap());
    }

    #[test]
    fn infeasible_config_reports_error() {
        let cfg = WorldConfig { n_obstacles: 60, max_attempts: 200, ..Default::default() };
        assert!(matches!(sample_world(&cfg, 1), Err(Error::Infeasible(_))));
    }

    #[test]
    fn world_json_field_names() {
        let w = unit_box_world();
        let v: serde_json::Value = serde_json::from_str(&w.to_json().unwrap()).unwrap();
        assert_eq!(v["bounds"]["xmin"], -5.0);
        assert_eq!(v["goal"]["x"], 5.0);
        assert_eq!(v["obstacles"][0]["width"], 1.0);
        assert_eq!(World::from_json(&w.to_json().unwrap()).unwrap(), w);
        let bad = r#"{"bounds":{"xmin":0,"ymin":0,"xmax":1,"ymax":1},"goal":{"x":5,"y":5},"obstacles":[]}"#;
        assert!(World::from_json(bad).is_err());
    }

    proptest! {
        #[test]
        fn theta_stays_normalized(
            theta in -10.0f64..10.0,
            cmds in proptest::collection::vec((0.0f64..1.0, -1.0f64..1.0), 1..60),
        ) {
            let mut s = RobotState::at_rest(Pose::new(0.0, 0.0, theta));
            let lim = MotionLimits { v_max: 1.0, w_max: 50.0 };
            for (v, w) in cmds {
                s = step_dynamics(&s, (v, w * 50.0), 0.1, &lim).unwrap();
                prop_assert!(s.pose.theta > -PI && s.pose.theta <= PI);
            }
        }

        #[test]
        fn step_is_pure(x in -5.0f64..5.0, y in -5.0f64..5.0, t in -3.0f64..3.0, v in 0.0f64..1.0, w in -1.0f64..1.0) {
            let s = RobotState::at_rest(Pose::new(x, y, t));
            let a = step_dynamics(&s, (v, w), 0.1, &MotionLimits::default()).unwrap();
            let b = step_dynamics(&s, (v, w), 0.1, &MotionLimits::default()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn collision_monotone_in_safe_dist(x in 0.0f64..10.0, y in 0.0f64..10.0, d in 0.0f64..2.0, extra in 0.0f64..2.0) {
            let w = World::new(Bounds::default(), Point2::new(1.0, 1.0),
                vec![ObstacleBox::new(5.0, 5.0, 1.0, 2.0).unwrap()]).unwrap();
            let pose = Pose::new(x, y, 0.0);
            if check_collision(&w, &pose, d) {
                prop_assert!(check_collision(&w, &pose, d + extra));
            }
        }

        #[test]
        fn sampled_worlds_satisfy_postconditions(seed in any::<u64>()) {
            let cfg = WorldConfig::default();
            let sc = sample_scenario(&cfg, seed).unwrap();
            let obs = &sc.world.obstacles;
            prop_assert_eq!(obs.len(), cfg.n_obstacles);
            for i in 0..obs.len() {
                prop_assert!(cfg.bounds.contains_box(&obs[i]));
                for j in (i + 1)..obs.len() {
                    prop_assert!(obs[i].gap_to(&obs[j]) >= 1.2);
                }
            }
            let need = cfg.safe_dist + 0.5;
            prop_assert!(sc.world.clearance(sc.start.position()) >= need);
            prop_assert!(sc.world.clearance(sc.world.goal) >= need);
        }
    }
}
