//! The physical side: a lockstep simulator that advances one tick per
//! received velocity command.

use std::net::TcpListener;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidarsim::{simulate_scan, ScanParams};
use crate::twinlink::protocol::{Connection, TwinMessage};
use crate::worldsim::{classify, step_dynamics, ObstacleBox, Pose, RobotState, SimParams, StepEvent, World};

/// An obstacle that appears once the robot has taken `at_step` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub obstacle: ObstacleBox,
    pub at_step: usize,
}

impl FromStr for Injection {
    type Err = Error;

    /// Parses `cx,cy,w,h@step`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Validation(format!("injection {s:?} is not cx,cy,w,h@step"));
        let (geom, step) = s.split_once('@').ok_or_else(bad)?;
        let v: Vec<f64> = geom.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        if v.len() != 4 {
            return Err(bad());
        }
        let at_step = step.trim().parse().map_err(|_| bad())?;
        Ok(Self { obstacle: ObstacleBox::new(v[0], v[1], v[2], v[3])?, at_step })
    }
}

impl std::fmt::Display for Injection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = &self.obstacle;
        write!(f, "{},{},{},{}@{}", b.cx, b.cy, b.width, b.height, self.at_step)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConfig {
    pub sim: SimParams,
    pub scan: ScanParams,
    pub start: Pose,
    pub injections: Vec<Injection>,
    /// Read timeout on the client connection; `None` waits forever.
    pub io_timeout_ms: Option<u64>,
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self {
            sim: SimParams::default(),
            scan: ScanParams::default(),
            start: Pose::new(0.0, 0.0, 0.0),
            injections: Vec::new(),
            io_timeout_ms: Some(600_000),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum SessionEnd {
    Bye,
    Terminal(StepEvent),
    ConnectionLost(String),
}

/// Final state of one session, kept for post-mortem dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub end: SessionEnd,
    pub robot: RobotState,
    pub steps: usize,
    pub collisions: usize,
    pub world: World,
}

/// Ground-truth robot and world driven by incoming messages.
#[derive(Clone, Debug)]
pub struct PhysicalSim {
    pub world: World,
    pub config: PhysicalConfig,
    pub robot: RobotState,
    pub steps: usize,
    pub paused: bool,
    pub event: StepEvent,
    injected: usize,
}

impl PhysicalSim {
    pub fn new(world: World, config: PhysicalConfig) -> Result<Self> {
        world.validate()?;
        config.scan.validate()?;
        let mut injections = config.injections.clone();
        injections.sort_by_key(|i| i.at_step);
        let config = PhysicalConfig { injections, ..config };
        let robot = RobotState::at_rest(config.start);
        let mut sim = Self { world, config, robot, steps: 0, paused: false, event: StepEvent::None, injected: 0 };
        sim.inject_due();
        Ok(sim)
    }

    fn inject_due(&mut self) {
        while let Some(inj) = self.config.injections.get(self.injected) {
            if inj.at_step > self.steps {
                break;
            }
            log::info!("injecting obstacle {inj} at step {}", self.steps);
            self.world.obstacles.push(inj.obstacle);
            self.injected += 1;
        }
    }

    fn scan(&self) -> TwinMessage {
        TwinMessage::scan(self.robot.pose, &simulate_scan(&self.world, &self.robot.pose, &self.config.scan))
    }

    fn status(&self) -> TwinMessage {
        TwinMessage::Status { event: self.event, pose: self.robot.pose, goal: self.world.goal }
    }

    /// Replies owed for `msg`. Velocity commands are integrated only while
    /// running; a paused robot still answers with a fresh scan.
    pub fn handle(&mut self, msg: &TwinMessage) -> Result<Vec<TwinMessage>> {
        if self.event.is_terminal() {
            return Err(Error::Protocol { reason: "session already ended".into(), line: msg.tag().into() });
        }
        match msg {
            TwinMessage::CmdVel { v, w } => {
                if !self.paused {
                    let sim = self.config.sim;
                    self.robot = step_dynamics(&self.robot, (*v, *w), sim.dt, &sim.limits)?;
                    self.steps += 1;
                    self.inject_due();
                    self.event = classify(&self.world, &self.robot.pose, self.steps, &sim);
                }
                Ok(vec![self.scan(), self.status()])
            }
            TwinMessage::Pause => {
                self.paused = true;
                self.robot.v = 0.0;
                self.robot.w = 0.0;
                Ok(vec![self.status()])
            }
            TwinMessage::Resume => {
                self.paused = false;
                Ok(vec![self.status()])
            }
            TwinMessage::Bye => Ok(vec![]),
            other => Err(Error::Protocol { reason: format!("server does not accept {}", other.tag()), line: String::new() }),
        }
    }

    pub fn outcome(&self, end: SessionEnd) -> SessionOutcome {
        SessionOutcome {
            end,
            robot: self.robot,
            steps: self.steps,
            collisions: usize::from(self.event == StepEvent::Collision),
            world: self.world.clone(),
        }
    }
}

/// Serves one client session on `listener`. Protocol errors from the client
/// end the session as a lost connection; the simulator state is returned
/// either way.
pub fn serve_physical(listener: &TcpListener, world: World, config: PhysicalConfig) -> Result<SessionOutcome> {
    let mut sim = PhysicalSim::new(world, config)?;
    let (stream, peer) = listener.accept()?;
    log::info!("twin connected from {peer}");
    stream.set_read_timeout(sim.config.io_timeout_ms.map(Duration::from_millis))?;
    let mut conn = Connection::new(stream)?;
    loop {
        let msg = match conn.recv() {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(sim.outcome(SessionEnd::ConnectionLost("peer closed the connection".into()))),
            Err(e) => return Ok(sim.outcome(SessionEnd::ConnectionLost(e.to_string()))),
        };
        if msg == TwinMessage::Bye {
            return Ok(sim.outcome(SessionEnd::Bye));
        }
        let replies = match sim.handle(&msg) {
            Ok(r) => r,
            Err(e) => return Ok(sim.outcome(SessionEnd::ConnectionLost(e.to_string()))),
        };
        for r in &replies {
            if let Err(e) = conn.send(r) {
                return Ok(sim.outcome(SessionEnd::ConnectionLost(e.to_string())));
            }
        }
        if sim.event.is_terminal() {
            log::info!("session ended: {} after {} steps", sim.event.as_str(), sim.steps);
            return Ok(sim.outcome(SessionEnd::Terminal(sim.event)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{Bounds, Point2};

    fn sim(obstacles: Vec<ObstacleBox>) -> PhysicalSim {
        let world = World::new(Bounds { xmin: -2.0, ymin: -5.0, xmax: 8.0, ymax: 5.0 }, Point2::new(5.0, 0.0), obstacles).unwrap();
        PhysicalSim::new(world, PhysicalConfig::default()).unwrap()
    }

    #[test]
    fn zero_command_returns_initial_scan() {
        let mut s = sim(vec![ObstacleBox::new(3.0, 0.0, 1.0, 1.0).unwrap()]);
        let replies = s.handle(&TwinMessage::CmdVel { v: 0.0, w: 0.0 }).unwrap();
        assert_eq!(replies.len(), 2);
        let (pose, scan) = replies[0].to_laser_scan().unwrap().unwrap();
        assert_eq!(pose, Pose::new(0.0, 0.0, 0.0));
        assert!((scan.ranges[90].unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(replies[1], TwinMessage::Status { event: StepEvent::None, .. }));
    }

    #[test]
    fn pause_freezes_pose() {
        let mut s = sim(vec![]);
        s.handle(&TwinMessage::CmdVel { v: 1.0, w: 0.0 }).unwrap();
        let before = s.robot.pose;
        s.handle(&TwinMessage::Pause).unwrap();
        for _ in 0..10 {
            s.handle(&TwinMessage::CmdVel { v: 1.0, w: 0.0 }).unwrap();
        }
        assert_eq!(s.robot.pose, before);
        assert_eq!(s.steps, 1);
        s.handle(&TwinMessage::Resume).unwrap();
        s.handle(&TwinMessage::CmdVel { v: 1.0, w: 0.0 }).unwrap();
        assert!(s.robot.pose.x > before.x);
    }

    #[test]
    fn driving_into_a_box_collides() {
        let mut s = sim(vec![ObstacleBox::new(3.0, 0.0, 1.0, 1.0).unwrap()]);
        let mut n = 0;
        while !s.event.is_terminal() {
            s.handle(&TwinMessage::CmdVel { v: 1.0, w: 0.0 }).unwrap();
            n += 1;
        }
        assert_eq!(s.event, StepEvent::Collision);
        // surface at x = 2.5, collision once closer than 0.5
        assert!((20..=21).contains(&n), "{n}");
        assert!(s.handle(&TwinMessage::CmdVel { v: 0.0, w: 0.0 }).is_err());
    }

    #[test]
    fn injection_appears_on_schedule() {
        let inj: Injection = "3,0,0.4,2@5".parse().unwrap();
        assert_eq!(inj.to_string(), "3,0,0.4,2@5");
        assert!("3,0,0.4@5".parse::<Injection>().is_err());
        assert!("3,0,0.4,2".parse::<Injection>().is_err());
        let world = World::new(Bounds { xmin: -2.0, ymin: -5.0, xmax: 8.0, ymax: 5.0 }, Point2::new(5.0, 0.0), vec![]).unwrap();
        let mut s = PhysicalSim::new(world, PhysicalConfig { injections: vec![inj], ..Default::default() }).unwrap();
        for _ in 0..4 {
            s.handle(&TwinMessage::CmdVel { v: 0.0, w: 0.0 }).unwrap();
        }
        assert!(s.world.obstacles.is_empty());
        let r = s.handle(&TwinMessage::CmdVel { v: 0.0, w: 0.0 }).unwrap();
        assert_eq!(s.world.obstacles.len(), 1);
        let (_, scan) = r[0].to_laser_scan().unwrap().unwrap();
        assert!((scan.ranges[90].unwrap() - 2.8).abs() < 1e-12);
    }

    #[test]
    fn client_only_messages_rejected() {
        let mut s = sim(vec![]);
        let status = s.status();
        assert!(matches!(s.handle(&status), Err(Error::Protocol { .. })));
    }
}
