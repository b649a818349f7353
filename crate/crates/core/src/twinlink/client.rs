//! The twin side: drives the physical robot with the pre-trained policy
//! and takes over with pause / retrain / resume inside the danger zone.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidarsim::LaserScan;
use crate::perception::reconstruct_world;
use crate::td3::{Action, EnvConfig, MetricsReport, Metrics, ReplayBuffer, Td3Agent, TrajectoryRecord, build_state};
use crate::twinlink::phase::{Trace, TraceEntry, TwinPhase};
use crate::twinlink::protocol::{Connection, TwinMessage};
use crate::twinlink::retrain::{retrain_procedure, RetrainOutcome};
use crate::twinlink::{danger_monitor, StallMonitor, TwinConfig};
use crate::worldsim::{Point2, Pose, StepEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwinOutcome {
    Goal,
    Collision,
    Timeout,
    /// Retraining could not verify a path; the robot was left paused.
    RetrainFailed,
    /// Protocol or transport failure; the robot was sent Pause then Bye.
    Aborted,
}

impl TwinOutcome {
    fn from_event(e: StepEvent) -> Self {
        match e {
            StepEvent::GoalReached => TwinOutcome::Goal,
            StepEvent::Collision => TwinOutcome::Collision,
            _ => TwinOutcome::Timeout,
        }
    }
}

/// One danger-zone intervention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainSummary {
    pub step: usize,
    pub pose: Pose,
    pub obstacles: usize,
    pub verified: bool,
    pub env_steps: usize,
    pub gradient_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwinReport {
    pub outcome: TwinOutcome,
    pub diagnostic: Option<String>,
    /// Integrated physical steps, the bootstrap command included.
    pub physical_steps: usize,
    pub trajectory: Vec<TrajectoryRecord>,
    pub trace: Trace,
    pub retrains: Vec<RetrainSummary>,
}

impl TwinReport {
    /// Same schema as evaluation metrics; a run that ended paused or
    /// aborted counts as halted rather than as an episode.
    pub fn metrics(&self) -> MetricsReport {
        match self.outcome {
            TwinOutcome::Goal => MetricsReport::new(Metrics::from_outcomes(&[StepEvent::GoalReached]), 0),
            TwinOutcome::Collision => MetricsReport::new(Metrics::from_outcomes(&[StepEvent::Collision]), 0),
            TwinOutcome::Timeout => MetricsReport::new(Metrics::from_outcomes(&[StepEvent::Timeout]), 0),
            TwinOutcome::RetrainFailed | TwinOutcome::Aborted => MetricsReport::new(Metrics::from_outcomes(&[]), 1),
        }
    }
}

/// Connection plus the trace of everything that crossed it.
struct Link {
    conn: Connection,
    trace: Trace,
    phase: TwinPhase,
}

struct Observation {
    pose: Pose,
    scan: LaserScan,
    event: StepEvent,
    goal: Point2,
}

impl Link {
    fn send(&mut self, msg: TwinMessage) -> Result<()> {
        self.trace.entries.push(TraceEntry::Sent { phase: self.phase, msg: msg.clone() });
        self.conn.send(&msg)
    }

    fn recv(&mut self, tag: &str) -> Result<TwinMessage> {
        let msg = self.conn.recv()?.ok_or_else(|| Error::Protocol {
            reason: format!("server closed the connection while {tag} was expected"),
            line: String::new(),
        })?;
        self.trace.entries.push(TraceEntry::Received { phase: self.phase, msg: msg.clone() });
        if msg.tag() != tag {
            return Err(Error::Protocol { reason: format!("expected {tag}, got {}", msg.tag()), line: String::new() });
        }
        Ok(msg)
    }

    fn status(&mut self) -> Result<(StepEvent, Pose, Point2)> {
        match self.recv("status")? {
            TwinMessage::Status { event, pose, goal } => Ok((event, pose, goal)),
            _ => unreachable!("tag checked"),
        }
    }

    fn command(&mut self, v: f64, w: f64) -> Result<Observation> {
        self.send(TwinMessage::CmdVel { v, w })?;
        let (pose, scan) = self.recv("scan")?.to_laser_scan().expect("tag checked")?;
        let (event, _, goal) = self.status()?;
        Ok(Observation { pose, scan, event, goal })
    }

    fn control(&mut self, msg: TwinMessage) -> Result<()> {
        self.send(msg)?;
        self.status().map(|_| ())
    }

    fn advance(&mut self, to: TwinPhase) {
        assert!(self.phase.can_transition_to(to), "illegal phase change {:?} -> {:?}", self.phase, to);
        self.trace.entries.push(TraceEntry::Phase { from: self.phase, to });
        self.phase = to;
    }
}

/// Connects to `config.endpoint` and runs one twin session.
pub fn run_twin(
    agent: &mut Td3Agent,
    buffer: &mut ReplayBuffer,
    env: &EnvConfig,
    config: &TwinConfig,
    seed: u64,
) -> Result<TwinReport> {
    config.validate(env.sim.safe_dist)?;
    let addr = config
        .endpoint
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::Validation(format!("endpoint {:?} did not resolve", config.endpoint)))?;
    let stream = TcpStream::connect_timeout(&addr, Duration::from_millis(config.connect_timeout_ms))?;
    run_twin_on(stream, agent, buffer, env, config, seed)
}

/// Runs one twin session over an established stream. Transport and
/// protocol failures end in a safe stop and an `Aborted` report.
pub fn run_twin_on(
    stream: TcpStream,
    agent: &mut Td3Agent,
    buffer: &mut ReplayBuffer,
    env: &EnvConfig,
    config: &TwinConfig,
    seed: u64,
) -> Result<TwinReport> {
    stream.set_read_timeout(Some(Duration::from_millis(config.io_timeout_ms)))?;
    stream.set_write_timeout(Some(Duration::from_millis(config.io_timeout_ms)))?;
    let mut link = Link { conn: Connection::new(stream)?, trace: Trace::default(), phase: TwinPhase::Bootstrapping };
    let mut report = TwinReport {
        outcome: TwinOutcome::Aborted,
        diagnostic: None,
        physical_steps: 0,
        trajectory: Vec::new(),
        trace: Trace::default(),
        retrains: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match session(&mut link, &mut report, agent, buffer, env, config, &mut rng) {
        Ok(outcome) => report.outcome = outcome,
        Err(e) => {
            log::error!("twin session failed: {e}; stopping the robot");
            // best effort: the server may already be gone
            let _ = link.send(TwinMessage::Pause);
            let _ = link.send(TwinMessage::Bye);
            report.outcome = TwinOutcome::Aborted;
            report.diagnostic = Some(e.to_string());
        }
    }
    report.trace = link.trace;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn session(
    link: &mut Link,
    report: &mut TwinReport,
    agent: &mut Td3Agent,
    buffer: &mut ReplayBuffer,
    env: &EnvConfig,
    config: &TwinConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TwinOutcome> {
    let sim = env.sim;
    let mut obs = link.command(0.0, 0.0)?;
    report.physical_steps = 1;
    let mut prev = Action::from_velocity(0.0, 0.0, &sim.limits);
    let record = |report: &mut TwinReport, obs: &Observation, action: &Action, phase: TwinPhase| -> Result<()> {
        let (v, w) = action.to_velocity(&sim.limits);
        let pos = obs.pose.position();
        let reward = if report.trajectory.is_empty() {
            0.0
        } else {
            env.reward.compute(obs.event, pos.distance(&obs.goal), action, obs.pose.heading(), obs.goal, pos)?
        };
        report.trajectory.push(TrajectoryRecord {
            t: (report.physical_steps - 1) as f64 * sim.dt,
            x: obs.pose.x,
            y: obs.pose.y,
            theta: obs.pose.theta,
            v,
            w,
            reward,
            min_scan_range: obs.scan.min_range(),
            phase: phase.as_str().to_string(),
        });
        Ok(())
    };
    record(report, &obs, &prev, link.phase)?;
    link.advance(TwinPhase::Navigating);
    let mut stall = StallMonitor::new(config);

    loop {
        if obs.event.is_terminal() {
            link.advance(TwinPhase::Done);
            return Ok(TwinOutcome::from_event(obs.event));
        }
        let stalled = stall.observe(obs.pose.position().distance(&obs.goal));
        let action = if danger_monitor(&obs.scan, config) || stalled {
            if stalled {
                log::info!("no progress over {} steps; pausing", config.stall_window);
            }
            stall.reset();
            link.control(TwinMessage::Pause)?;
            link.advance(TwinPhase::DangerPaused);
            link.advance(TwinPhase::Retraining);
            let plan = loop {
                let local = reconstruct_world(&obs.scan, &obs.pose, obs.goal, config.bounds, &config.perception);
                let step_limit = sim.max_steps.saturating_sub(report.physical_steps);
                let out = retrain_procedure(agent, buffer, &local, obs.pose, prev, env, config, step_limit, rng)?;
                let (verified, env_steps, gradient_steps) = match &out {
                    RetrainOutcome::Verified { env_steps, gradient_steps, .. } => (true, *env_steps, *gradient_steps),
                    RetrainOutcome::Failed { env_steps, gradient_steps, .. } => (false, *env_steps, *gradient_steps),
                };
                report.retrains.push(RetrainSummary {
                    step: report.physical_steps,
                    pose: obs.pose,
                    obstacles: local.obstacles.len(),
                    verified,
                    env_steps,
                    gradient_steps,
                });
                let RetrainOutcome::Verified { plan, .. } = out else {
                    log::warn!("no verified path from ({:.2}, {:.2}); staying paused", obs.pose.x, obs.pose.y);
                    link.send(TwinMessage::Bye)?;
                    return Ok(TwinOutcome::RetrainFailed);
                };
                // re-check before resuming: the frozen robot must still see
                // the world the plan was verified in
                let fresh = link.command(0.0, 0.0)?;
                let unchanged = fresh.pose == obs.pose && fresh.scan == obs.scan;
                obs = Observation { event: StepEvent::None, ..fresh };
                if unchanged {
                    break plan;
                }
                log::info!("scan changed while paused; retraining again");
            };
            link.advance(TwinPhase::Returning);
            link.advance(TwinPhase::Resuming);
            link.control(TwinMessage::Resume)?;
            link.advance(TwinPhase::Navigating);
            plan[0]
        } else {
            let state = build_state(&obs.scan, &obs.pose, obs.goal, &prev, &env.state)?;
            agent.act(&state)?
        };
        let (v, w) = action.to_velocity(&sim.limits);
        obs = link.command(v, w)?;
        report.physical_steps += 1;
        prev = action;
        record(report, &obs, &action, link.phase)?;
    }
}
