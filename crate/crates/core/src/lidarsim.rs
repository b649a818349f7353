//! Planar LIDAR model: raycasts from the robot pose against the obstacle
//! boxes of a world. World bounds are transparent to beams.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::worldsim::{ObstacleBox, Point2, Pose, World};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanParams {
    pub n_beams: usize,
    pub angle_min: f64,
    pub angle_max: f64,
    pub max_range: f64,
}

impl Default for ScanParams {
    /// 180 beams over the full circle at 2 degree spacing, 10 m range.
    fn default() -> Self {
        Self {
            n_beams: 180,
            angle_min: -PI,
            angle_max: PI - 2.0 * PI / 180.0,
            max_range: 10.0,
        }
    }
}

impl ScanParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_beams < 2 {
            return Err(Error::Validation("a scan needs at least 2 beams".into()));
        }
        if !(self.angle_min < self.angle_max) || !self.angle_min.is_finite() || !self.angle_max.is_finite() {
            return Err(Error::Validation("angle_min must be below angle_max".into()));
        }
        if !(self.max_range > 0.0) || !self.max_range.is_finite() {
            return Err(Error::Validation("max_range must be positive".into()));
        }
        Ok(())
    }

    pub fn increment(&self) -> f64 {
        (self.angle_max - self.angle_min) / (self.n_beams - 1) as f64
    }

    /// Beam angle relative to the robot heading.
    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.increment()
    }
}

/// One sweep of range readings. `None` marks a beam without a return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    pub ranges: Vec<Option<f64>>,
    pub params: ScanParams,
}

impl LaserScan {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.ranges.len() != self.params.n_beams {
            return Err(Error::Shape { expected: self.params.n_beams, got: self.ranges.len() });
        }
        for r in self.ranges.iter().flatten() {
            if !r.is_finite() || *r < 0.0 || *r > self.params.max_range {
                return Err(Error::Validation(format!("range {r} outside [0, max_range]")));
            }
        }
        Ok(())
    }

    /// Smallest finite range, if any beam returned.
    pub fn min_range(&self) -> Option<f64> {
        self.ranges.iter().flatten().copied().reduce(f64::min)
    }
}

/// Slab-method intersection of a ray with a box. Returns the smallest
/// non-negative `t` where `origin + t * direction` touches the box; an origin
/// inside (or on) the box yields 0.
pub fn ray_box_intersect(origin: Point2, direction: (f64, f64), b: &ObstacleBox) -> Option<f64> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for (o, d, lo, hi) in [
        (origin.x, direction.0, b.min_x(), b.max_x()),
        (origin.y, direction.1, b.min_y(), b.max_y()),
    ] {
        if d == 0.0 {
            if o < lo || o > hi {
                return None;
            }
        } else {
            let t1 = (lo - o) / d;
            let t2 = (hi - o) / d;
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
    }
    if t_near > t_far || t_far < 0.0 {
        return None;
    }
    Some(t_near.max(0.0))
}

pub fn simulate_scan(world: &World, pose: &Pose, params: &ScanParams) -> LaserScan {
    simulate_scan_obstacles(&world.obstacles, pose, params)
}

pub(crate) fn simulate_scan_obstacles(obstacles: &[ObstacleBox], pose: &Pose, params: &ScanParams) -> LaserScan {
    let origin = pose.position();
    let ranges = (0..params.n_beams)
        .map(|i| {
            let a = pose.theta + params.beam_angle(i);
            let dir = (a.cos(), a.sin());
            obstacles
                .iter()
                .filter_map(|b| ray_box_intersect(origin, dir, b))
                .reduce(f64::min)
                .filter(|&t| t <= params.max_range)
        })
        .collect();
    LaserScan { ranges, params: *params }
}

/// Scans from many poses at once.
pub fn simulate_scans(world: &World, poses: &[Pose], params: &ScanParams, exec: Exec) -> Vec<LaserScan> {
    exec.map_slice(poses, |p| simulate_scan(world, p, params))
}

/// Adds uniform noise in `[-amplitude, amplitude]` to every return, keeping
/// ranges inside `(0, max_range]`. Not used by default.
pub fn add_range_jitter<R: Rng>(scan: &mut LaserScan, amplitude: f64, rng: &mut R) {
    if amplitude <= 0.0 {
        return;
    }
    let max = scan.params.max_range;
    for r in scan.ranges.iter_mut().flatten() {
        *r = (*r + rng.gen_range(-amplitude..=amplitude)).clamp(1e-6, max);
    }
}
