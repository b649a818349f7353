//! Static SVG figures: trajectories over the world, and the average-Q curve.

use std::fmt::Write;

use twinnav_core::td3::UpdateLog;
use twinnav_core::td3::{EpisodeResult, TrajectoryRecord};
use twinnav_core::worldsim::{Bounds, ObstacleBox, Point2, StepEvent, World};

const SIZE: f64 = 640.0;
const MARGIN: f64 = 24.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PlotPath {
    pub points: Vec<(f64, f64)>,
    pub collided: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub bounds: Option<Bounds>,
    pub obstacles: Vec<ObstacleBox>,
    pub goals: Vec<Point2>,
    pub paths: Vec<PlotPath>,
}

impl Scene {
    /// One path per trajectory group. Outcomes, goals and obstacles come
    /// from the matching episode records when given, otherwise from `world`.
    pub fn build(
        groups: &[(usize, Vec<TrajectoryRecord>)],
        episodes: Option<&[EpisodeResult]>,
        world: Option<&World>,
    ) -> Scene {
        let mut scene = Scene { bounds: world.map(|w| w.bounds), ..Scene::default() };
        let add_world = |scene: &mut Scene, w: &World| {
            for b in &w.obstacles {
                if !scene.obstacles.contains(b) {
                    scene.obstacles.push(*b);
                }
            }
            if !scene.goals.contains(&w.goal) {
                scene.goals.push(w.goal);
            }
            scene.bounds.get_or_insert(w.bounds);
        };
        if let Some(w) = world {
            add_world(&mut scene, w);
        }
        for (episode, recs) in groups {
            let meta = episodes.and_then(|eps| eps.iter().find(|e| e.episode == *episode));
            if let Some(m) = meta {
                add_world(&mut scene, &m.world);
            }
            scene.paths.push(PlotPath {
                points: recs.iter().map(|r| (r.x, r.y)).collect(),
                collided: meta.is_some_and(|m| m.outcome == StepEvent::Collision),
            });
        }
        scene
    }

    fn extent(&self) -> Bounds {
        if let Some(b) = self.bounds {
            return b;
        }
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for p in self.paths.iter().flat_map(|p| p.points.iter()) {
            xs.push(p.0);
            ys.push(p.1);
        }
        for b in &self.obstacles {
            xs.extend([b.min_x(), b.max_x()]);
            ys.extend([b.min_y(), b.max_y()]);
        }
        for g in &self.goals {
            xs.push(g.x);
            ys.push(g.y);
        }
        let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if xs.is_empty() {
            return Bounds::default();
        }
        Bounds { xmin: lo(&xs) - 0.5, ymin: lo(&ys) - 0.5, xmax: hi(&xs) + 0.5, ymax: hi(&ys) + 0.5 }
    }
}

struct Frame {
    b: Bounds,
    scale: f64,
}

impl Frame {
    fn new(b: Bounds) -> Self {
        let span = (b.xmax - b.xmin).max(b.ymax - b.ymin).max(1e-9);
        Self { b, scale: (SIZE - 2.0 * MARGIN) / span }
    }

    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.b.xmin) * self.scale
    }

    fn y(&self, y: f64) -> f64 {
        SIZE - MARGIN - (y - self.b.ymin) * self.scale
    }
}

/// Obstacles as rectangles, goals as points, one polyline per path.
/// Collision-terminated paths are solid red; the rest dashed blue.
pub fn render_trajectories(scene: &Scene) -> String {
    let f = Frame::new(scene.extent());
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let b = f.b;
    let _ = writeln!(
        s,
        r#"<rect class="bounds" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="black"/>"#,
        f.x(b.xmin),
        f.y(b.ymax),
        (b.xmax - b.xmin) * f.scale,
        (b.ymax - b.ymin) * f.scale
    );
    for o in &scene.obstacles {
        let _ = writeln!(
            s,
            r##"<rect class="obstacle" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#7f7f7f"/>"##,
            f.x(o.min_x()),
            f.y(o.max_y()),
            o.width * f.scale,
            o.height * f.scale
        );
    }
    for p in &scene.paths {
        let pts: Vec<String> = p.points.iter().map(|&(x, y)| format!("{:.3},{:.3}", f.x(x), f.y(y))).collect();
        let style = if p.collided {
            r##"class="path collision" stroke="#d62728""##
        } else {
            r##"class="path" stroke="#1f77b4" stroke-dasharray="6 4""##
        };
        let _ = writeln!(s, r#"<polyline {style} fill="none" stroke-width="2" points="{}"/>"#, pts.join(" "));
    }
    for g in &scene.goals {
        let _ = writeln!(s, r##"<circle class="goal" cx="{:.3}" cy="{:.3}" r="5" fill="#2ca02c"/>"##, f.x(g.x), f.y(g.y));
    }
    s.push_str("</svg>\n");
    s
}

/// Average-Q per update, bucket-averaged down to at most `max_points`.
pub fn render_q_curve(updates: &[UpdateLog], max_points: usize) -> String {
    let (w, h) = (SIZE, 400.0);
    let n = updates.len();
    let buckets = n.min(max_points.max(2));
    let pts: Vec<(f64, f64)> = (0..buckets)
        .map(|i| {
            let (a, z) = (i * n / buckets, ((i + 1) * n / buckets).max(i * n / buckets + 1));
            let slice = &updates[a..z.min(n)];
            let q = slice.iter().map(|u| u.avg_q).sum::<f64>() / slice.len() as f64;
            let x = slice.iter().map(|u| u.update as f64).sum::<f64>() / slice.len() as f64;
            (x, q)
        })
        .collect();
    let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if pts.is_empty() { (0.0, 1.0) } else if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let xmax = pts.last().map_or(1.0, |p| p.0.max(1.0));
    let px = |x: f64| 60.0 + x / xmax * (w - 80.0);
    let py = |q: f64| h - 40.0 - (q - lo) / (hi - lo) * (h - 60.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="60" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, h - 40.0, w - 20.0);
    let _ = writeln!(s, r#"<line x1="60" y1="20" x2="60" y2="{}" stroke="black"/>"#, h - 40.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">update</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">average Q</text>"#, h / 2.0, h / 2.0);
    let _ = writeln!(s, r#"<text x="56" y="24" font-size="10" text-anchor="end">{hi:.2}</text>"#);
    let _ = writeln!(s, r#"<text x="56" y="{}" font-size="10" text-anchor="end">{lo:.2}</text>"#, h - 40.0);
    let line: Vec<String> = pts.iter().map(|&(x, q)| format!("{:.3},{:.3}", px(x), py(q))).collect();
    let _ = writeln!(s, r##"<polyline class="avg-q" fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##, line.join(" "));
    s.push_str("</svg>\n");
    s
}
