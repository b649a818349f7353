//! Scan-to-world reconstruction: polar projection, DBSCAN clustering and
//! per-cluster bounding boxes.
//!
//! The clustering follows the classic visit-order formulation: points are
//! visited in input order, a cluster is seeded from the first unvisited core
//! point, and its seed set grows only through neighbourhoods of core points.
//! A border point reachable from several clusters stays with the first one
//! that claims it, and points first marked as noise may later be claimed as
//! border points.

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::lidarsim::LaserScan;
pub use crate::worldsim::Point2;
use crate::worldsim::{Bounds, ObstacleBox, Pose, World};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    pub eps: f64,
    pub min_pts: usize,
    pub min_spawn_size: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self { eps: 0.35, min_pts: 3, min_spawn_size: 0.2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClusterLabel {
    Unvisited,
    Noise,
    Cluster(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    pub labels: Vec<ClusterLabel>,
    pub n_clusters: usize,
}

impl Clustering {
    /// Point indices of every cluster, in cluster-id order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let ClusterLabel::Cluster(k) = l {
                out[*k].push(i);
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == ClusterLabel::Noise).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleEstimate {
    pub center: Point2,
    pub width: f64,
    pub height: f64,
    pub distance_to_robot: f64,
}

impl ObstacleEstimate {
    pub fn to_box(&self) -> ObstacleBox {
        ObstacleBox { cx: self.center.x, cy: self.center.y, width: self.width, height: self.height }
    }
}

/// Projects every beam with a positive return into world coordinates.
/// Beams without a return produce no point.
pub fn scan_to_points(scan: &LaserScan, robot_pose: &Pose) -> Vec<Point2> {
    scan.ranges
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match r {
            Some(r) if r.is_finite() && *r > 0.0 => {
                let a = robot_pose.theta + scan.params.beam_angle(i);
                Some(Point2::new(robot_pose.x + r * a.cos(), robot_pose.y + r * a.sin()))
            }
            _ => None,
        })
        .collect()
}

/// Indices of all points within `eps` of `p` (inclusive), in input order.
pub fn region_query(p: &Point2, points: &[Point2], eps: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, q)| p.distance(q) <= eps)
        .map(|(i, _)| i)
        .collect()
}

pub fn dbscan(points: &[Point2], eps: f64, min_pts: usize) -> Clustering {
    dbscan_with(points, eps, min_pts, Exec::default())
}

/// DBSCAN with the neighbourhood queries spread over `exec`. The labelling
/// pass itself is sequential, so the result does not depend on `exec`.
pub fn dbscan_with(points: &[Point2], eps: f64, min_pts: usize, exec: Exec) -> Clustering {
    let n = points.len();
    let neighbourhoods: Vec<Vec<usize>> = exec.map_slice(points, |p| region_query(p, points, eps));

    let mut visited = vec![false; n];
    let mut labels = vec![ClusterLabel::Unvisited; n];
    let mut n_clusters = 0;

    for p in 0..n {
        if visited[p] {
            continue;
        }
        visited[p] = true;
        let seeds = &neighbourhoods[p];
        if seeds.len() >= min_pts {
            expand_cluster(p, seeds, &neighbourhoods, min_pts, n_clusters, &mut visited, &mut labels);
            n_clusters += 1;
        } else {
            labels[p] = ClusterLabel::Noise;
        }
    }
    Clustering { labels, n_clusters }
}

fn expand_cluster(
    core: usize,
    seeds: &[usize],
    neighbourhoods: &[Vec<usize>],
    min_pts: usize,
    id: usize,
    visited: &mut [bool],
    labels: &mut [ClusterLabel],
) {
    labels[core] = ClusterLabel::Cluster(id);
    let mut in_seed_set = vec![false; labels.len()];
    let mut queue: Vec<usize> = Vec::with_capacity(seeds.len());
    for &q in seeds {
        in_seed_set[q] = true;
        queue.push(q);
    }
    let mut i = 0;
    while i < queue.len() {
        let q = queue[i];
        i += 1;
        if !visited[q] {
            visited[q] = true;
            let grown = &neighbourhoods[q];
            if grown.len() >= min_pts {
                for &r in grown {
                    if !in_seed_set[r] {
                        in_seed_set[r] = true;
                        queue.push(r);
                    }
                }
            }
        }
        if !matches!(labels[q], ClusterLabel::Cluster(_)) {
            labels[q] = ClusterLabel::Cluster(id);
        }
    }
}

/// Axis-aligned bounding box of a cluster, inflated to `min_spawn_size`.
pub fn cluster_properties(cluster_points: &[Point2], robot_pose: &Pose, min_spawn_size: f64) -> ObstacleEstimate {
    assert!(!cluster_points.is_empty(), "cluster must not be empty");
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in cluster_points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let center = Point2::new((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    ObstacleEstimate {
        center,
        width: (x1 - x0).max(min_spawn_size),
        height: (y1 - y0).max(min_spawn_size),
        distance_to_robot: robot_pose.position().distance(&center),
    }
}

/// Every cluster estimate for a scan, in cluster-id order.
pub fn estimate_obstacles(scan: &LaserScan, robot_pose: &Pose, params: &PerceptionParams) -> Vec<ObstacleEstimate> {
    let points = scan_to_points(scan, robot_pose);
    let clustering = dbscan(&points, params.eps, params.min_pts);
    clustering
        .members()
        .into_iter()
        .map(|idx| {
            let pts: Vec<Point2> = idx.iter().map(|&i| points[i]).collect();
            cluster_properties(&pts, robot_pose, params.min_spawn_size)
        })
        .collect()
}

/// Builds the twin's world from one scan. Boxes are clipped to `bounds`;
/// noise points are dropped.
pub fn reconstruct_world(
    scan: &LaserScan,
    robot_pose: &Pose,
    goal: Point2,
    bounds: Bounds,
    params: &PerceptionParams,
) -> World {
    let obstacles = estimate_obstacles(scan, robot_pose, params)
        .iter()
        .filter_map(|e| clip_to_bounds(&e.to_box(), &bounds))
        .collect();
    World { bounds, goal, obstacles }
}

fn clip_to_bounds(b: &ObstacleBox, bounds: &Bounds) -> Option<ObstacleBox> {
    let x0 = b.min_x().max(bounds.xmin);
    let x1 = b.max_x().min(bounds.xmax);
    let y0 = b.min_y().max(bounds.ymin);
    let y1 = b.max_y().min(bounds.ymax);
    (x1 > x0 && y1 > y0).then(|| ObstacleBox {
        cx: (x0 + x1) / 2.0,
        cy: (y0 + y1) / 2.0,
        width: x1 - x0,
        height: y1 - y0,
    })
}
