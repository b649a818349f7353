//! Deterministic policy evaluation: success / collision / timeout rates and
//! per-episode trajectories.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::td3::agent::Td3Agent;
use crate::td3::env::{EnvConfig, Environment, NavEnv, ScenarioSource};
use crate::td3::state::{Action, StateVector};
use crate::worldsim::{Point2, Pose, Scenario, StepEvent, World};

pub trait Policy: Sync {
    fn act(&self, state: &StateVector) -> Result<Action>;
}

impl Policy for Td3Agent {
    fn act(&self, state: &StateVector) -> Result<Action> {
        Td3Agent::act(self, state)
    }
}

impl<F> Policy for F
where
    F: Fn(&StateVector) -> Action + Sync,
{
    fn act(&self, state: &StateVector) -> Result<Action> {
        Ok(self(state))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    /// `1 - (success + collision)`, so the three rates sum to exactly 1.
    pub timeout_rate: f64,
}

impl Metrics {
    pub fn from_outcomes(outcomes: &[StepEvent]) -> Self {
        let n = outcomes.len();
        if n == 0 {
            return Self { episodes: 0, success_rate: 0.0, collision_rate: 0.0, timeout_rate: 0.0 };
        }
        let count = |k| outcomes.iter().filter(|&&e| e == k).count() as f64 / n as f64;
        let success_rate = count(StepEvent::GoalReached);
        let collision_rate = count(StepEvent::Collision);
        Self { episodes: n, success_rate, collision_rate, timeout_rate: 1.0 - (success_rate + collision_rate) }
    }
}

/// Metrics file layout shared by evaluation and twin runs. `halted` counts
/// runs that stopped without a terminal event and so are not episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub halted: usize,
}

impl MetricsReport {
    pub fn new(metrics: Metrics, halted: usize) -> Self {
        Self { metrics, halted }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub w: f64,
    pub reward: f64,
    pub min_scan_range: Option<f64>,
    pub phase: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub world: World,
    pub start: Pose,
    pub outcome: StepEvent,
    pub steps: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub episodes: Vec<EpisodeResult>,
}

/// Runs one noise-free episode. Row 0 of the trajectory is the start pose.
pub fn run_episode<P: Policy + ?Sized>(
    policy: &P,
    config: &EnvConfig,
    scenario: Scenario,
    episode: usize,
    phase: &str,
) -> Result<EpisodeResult> {
    let mut env = NavEnv::new(*config, ScenarioSource::Fixed(scenario.clone()));
    let mut state = env.reset()?;
    let dt = config.sim.dt;
    let row = |env: &NavEnv, t: f64, reward: f64| {
        let info = env.info().expect("observed");
        TrajectoryRecord {
            t,
            x: info.robot.pose.x,
            y: info.robot.pose.y,
            theta: info.robot.pose.theta,
            v: info.robot.v,
            w: info.robot.w,
            reward,
            min_scan_range: info.scan.min_range(),
            phase: phase.to_string(),
        }
    };
    let mut trajectory = vec![row(&env, 0.0, 0.0)];
    let mut ret = 0.0;
    let mut steps = 0;
    loop {
        let action = policy.act(&state)?;
        let out = env.step(&action)?;
        steps += 1;
        ret += out.reward;
        trajectory.push(row(&env, steps as f64 * dt, out.reward));
        if out.event.is_terminal() {
            return Ok(EpisodeResult {
                episode,
                world: scenario.world,
                start: scenario.start,
                outcome: out.event,
                steps,
                episode_return: ret,
                trajectory,
            });
        }
        state = out.state;
    }
}

/// Evaluates `n_episodes` scenarios from `source`; episodes are independent
/// and spread over `exec`.
pub fn evaluate<P: Policy>(
    policy: &P,
    source: &ScenarioSource,
    config: &EnvConfig,
    n_episodes: usize,
    exec: Exec,
) -> Result<EvalReport> {
    assert!(n_episodes >= 1, "evaluation needs at least one episode");
    let results = exec.map_range(n_episodes, |i| {
        let sc = source.scenario(i as u64)?;
        run_episode(policy, config, sc, i, "navigating")
    });
    let episodes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<StepEvent> = episodes.iter().map(|e| e.outcome).collect();
    Ok(EvalReport { metrics: Metrics::from_outcomes(&outcomes), episodes })
}

/// Chains goals: each leg starts where the previous one ended, one episode
/// per goal. Stops after the first leg that fails.
pub fn run_waypoints<P: Policy>(
    policy: &P,
    config: &EnvConfig,
    world: &World,
    start: Pose,
    goals: &[Point2],
) -> Result<Vec<EpisodeResult>> {
    let mut pose = start;
    let mut legs = Vec::with_capacity(goals.len());
    for (i, g) in goals.iter().enumerate() {
        let leg_world = World { goal: *g, ..world.clone() };
        let res = run_episode(policy, config, Scenario { world: leg_world, start: pose }, i, "navigating")?;
        let end = res.trajectory.last().expect("non-empty");
        pose = Pose::new(end.x, end.y, end.theta);
        let ok = res.outcome == StepEvent::GoalReached;
        legs.push(res);
        if !ok {
            break;
        }
    }
    Ok(legs)
}

/// CSV with one row per control tick and an `episode` column.
pub fn write_trajectories_csv<W: Write>(episodes: &[EpisodeResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["episode", "t", "x", "y", "theta", "v", "w", "reward", "min_scan_range", "phase"])?;
    for e in episodes {
        for r in &e.trajectory {
            out.write_record([
                e.episode.to_string(),
                r.t.to_string(),
                r.x.to_string(),
                r.y.to_string(),
                r.theta.to_string(),
                r.v.to_string(),
                r.w.to_string(),
                r.reward.to_string(),
                r.min_scan_range.map(|m| m.to_string()).unwrap_or_default(),
                r.phase.clone(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct CsvRow {
    episode: usize,
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
    v: f64,
    w: f64,
    reward: f64,
    min_scan_range: Option<f64>,
    phase: String,
}

/// Parses a trajectory CSV into `(episode, records)` groups in file order.
pub fn read_trajectories_csv<R: std::io::Read>(r: R) -> Result<Vec<(usize, Vec<TrajectoryRecord>)>> {
    let mut groups: Vec<(usize, Vec<TrajectoryRecord>)> = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize::<CsvRow>() {
        let row = row?;
        let rec = TrajectoryRecord {
            t: row.t,
            x: row.x,
            y: row.y,
            theta: row.theta,
            v: row.v,
            w: row.w,
            reward: row.reward,
            min_scan_range: row.min_scan_range,
            phase: row.phase,
        };
        match groups.last_mut() {
            Some((ep, recs)) if *ep == row.episode => recs.push(rec),
            _ => groups.push((row.episode, vec![rec])),
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{Bounds, WorldConfig};

    fn towards_goal(s: &StateVector) -> Action {
        Action::new(1.0, (s.goal_heading * 4.0).clamp(-1.0, 1.0))
    }

    fn fixed(start: Pose, goal: Point2) -> ScenarioSource {
        ScenarioSource::Fixed(Scenario { world: World::new(Bounds::default(), goal, vec![]).unwrap(), start })
    }

    #[test]
    fn adjacent_goal_success() {
        let src = fixed(Pose::new(5.0, 5.0, 0.0), Point2::new(5.4, 5.0));
        let r = evaluate(&towards_goal, &src, &EnvConfig::default(), 3, Exec::Sequential).unwrap();
        assert_eq!(r.metrics.success_rate, 1.0);
        assert!(r.episodes.iter().all(|e| e.steps <= 2));
    }

    #[test]
    fn zero_action_times_out() {
        let src = fixed(Pose::new(2.0, 5.0, 0.0), Point2::new(8.0, 5.0));
        let stop = |_: &StateVector| Action::STOP;
        let r = evaluate(&stop, &src, &EnvConfig::default(), 2, Exec::Sequential).unwrap();
        assert_eq!(r.metrics.timeout_rate, 1.0);
        assert_eq!(r.episodes[0].steps, 500);
        assert_eq!(r.episodes[0].trajectory.len(), 501);
    }

    #[test]
    fn rates_partition_outcomes() {
        let src = ScenarioSource::Sampled { config: WorldConfig::default(), base_seed: 77 };
        let r = evaluate(&towards_goal, &src, &EnvConfig::default(), 50, Exec::Parallel).unwrap();
        let m = r.metrics;
        assert_eq!(m.success_rate + m.collision_rate + m.timeout_rate, 1.0);
        let seq = evaluate(&towards_goal, &src, &EnvConfig::default(), 50, Exec::Sequential).unwrap();
        assert_eq!(seq, r);
    }

    #[test]
    fn rates_sum_exactly_for_all_small_counts() {
        for n in 1..=120usize {
            for s in 0..=n {
                for c in 0..=(n - s) {
                    let mut v = vec![StepEvent::GoalReached; s];
                    v.extend(std::iter::repeat_n(StepEvent::Collision, c));
                    v.extend(std::iter::repeat_n(StepEvent::Timeout, n - s - c));
                    let m = Metrics::from_outcomes(&v);
                    assert_eq!(m.success_rate + m.collision_rate + m.timeout_rate, 1.0);
                    assert!(m.timeout_rate >= 0.0);
                }
            }
        }
    }

    #[test]
    fn waypoint_legs_chain() {
        let world = World::new(Bounds::default(), Point2::new(5.0, 5.0), vec![]).unwrap();
        let goals = [Point2::new(3.0, 2.0), Point2::new(7.0, 3.0), Point2::new(6.0, 7.0)];
        let legs = run_waypoints(&towards_goal, &EnvConfig::default(), &world, Pose::new(1.0, 1.0, 0.0), &goals).unwrap();
        assert_eq!(legs.len(), 3);
        assert!(legs.iter().all(|l| l.outcome == StepEvent::GoalReached));
        let end0 = legs[0].trajectory.last().unwrap();
        assert_eq!((legs[1].trajectory[0].x, legs[1].trajectory[0].y), (end0.x, end0.y));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let src = fixed(Pose::new(5.0, 5.0, 0.0), Point2::new(6.0, 5.0));
        let r = evaluate(&towards_goal, &src, &EnvConfig::default(), 2, Exec::Sequential).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&r.episodes, &mut buf).unwrap();
        let groups = read_trajectories_csv(buf.as_slice()).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[1].1, r.episodes[1].trajectory);
        assert!(groups[0].1.windows(2).all(|w| w[1].t > w[0].t));
    }
}
