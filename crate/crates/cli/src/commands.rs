//! One function per CLI verb. Each writes its outputs, including the exact
//! config, into the run's output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use serde::Serialize;
use twinnav_core::td3::{
    evaluate, read_trajectories_csv, run_waypoints, train, write_trajectories_csv, EpisodeResult, MetricsReport,
    NavEnv, ReplayBuffer, ScenarioSource, Td3Agent, TrainingLog,
};
use twinnav_core::twinlink::{
    run_twin, serve_physical, Injection, PhysicalConfig, RetrainSummary, SessionEnd, SessionOutcome, TwinOutcome,
};
use twinnav_core::worldsim::{Point2, Scenario, World};

use crate::config::RunConfig;
use crate::plot::{render_q_curve, render_trajectories, Scene};
use crate::Failure;

fn runtime<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{what}: {e}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime("serialize"))?;
    std::fs::write(path, text + "\n").map_err(runtime("write"))
}

fn load_world(path: &Path) -> Result<World, Failure> {
    World::load(path).map_err(|e| Failure::Usage(format!("world file {}: {e}", path.display())))
}

fn load_agent(path: &Path, cfg: &RunConfig) -> Result<Td3Agent, Failure> {
    Td3Agent::load(path, Some(&cfg.agent)).map_err(|e| match e {
        twinnav_core::Error::Architecture { .. } => Failure::Usage(format!("refusing checkpoint {}: {e}", path.display())),
        other => Failure::Runtime(format!("checkpoint {}: {other}", path.display())),
    })
}

pub struct TrainSummary {
    pub episodes: usize,
    pub updates: usize,
    pub q_trend: Option<(f64, f64)>,
}

/// Pre-trains on freshly sampled worlds; writes the checkpoint, replay
/// snapshot, CSV logs and the average-Q curve.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, Failure> {
    let dir = &cfg.output_dir;
    cfg.write_to(dir)?;
    let source = ScenarioSource::Sampled { config: cfg.world.clone(), base_seed: cfg.seed };
    let mut env = NavEnv::new(cfg.env, source);
    let mut agent = Td3Agent::new(cfg.agent.clone(), cfg.seed)?;
    let mut buffer = ReplayBuffer::new(cfg.train.buffer_capacity);
    let log = train(&mut env, &mut agent, &mut buffer, &cfg.train, cfg.seed)?;
    agent.save(dir.join("checkpoint.json"))?;
    buffer.save(dir.join("replay.bin"))?;
    log.save_csv(dir.join("episodes.csv"), dir.join("updates.csv"))?;
    std::fs::write(dir.join("avg_q.svg"), render_q_curve(&log.updates, 1000))?;
    Ok(TrainSummary { episodes: log.episodes.len(), updates: log.updates.len(), q_trend: log.q_trend(0.1) })
}

/// Evaluates a checkpoint on sampled worlds, on one world file, or along
/// a chain of waypoints in one world.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    world: Option<&Path>,
    waypoints: &[Point2],
) -> Result<MetricsReport, Failure> {
    let agent = load_agent(checkpoint, cfg)?;
    let dir = &cfg.output_dir;
    cfg.write_to(dir)?;
    let episodes: Vec<EpisodeResult> = match world {
        Some(path) if !waypoints.is_empty() => {
            run_waypoints(&agent, &cfg.env, &load_world(path)?, cfg.physical.start, waypoints)?
        }
        Some(path) => {
            let source = ScenarioSource::Fixed(Scenario { world: load_world(path)?, start: cfg.physical.start });
            evaluate(&agent, &source, &cfg.env, cfg.eval.episodes, cfg.exec.into())?.episodes
        }
        None => {
            let source = ScenarioSource::Sampled { config: cfg.world.clone(), base_seed: cfg.eval.seed };
            evaluate(&agent, &source, &cfg.env, cfg.eval.episodes, cfg.exec.into())?.episodes
        }
    };
    let outcomes: Vec<_> = episodes.iter().map(|e| e.outcome).collect();
    let report = MetricsReport::new(twinnav_core::td3::Metrics::from_outcomes(&outcomes), 0);
    write_json(&dir.join("metrics.json"), &report)?;
    write_json(&dir.join("episodes.json"), &episodes)?;
    write_trajectories_csv(&episodes, BufWriter::new(File::create(dir.join("trajectories.csv"))?))?;
    Ok(report)
}

/// Binds the endpoint, announces the bound address on the first stdout
/// line and serves one twin session.
pub fn cmd_physical(cfg: &RunConfig, world: &Path, endpoint: &str, injections: &[Injection]) -> Result<SessionOutcome, Failure> {
    let world = load_world(world)?;
    let mut physical = PhysicalConfig { sim: cfg.env.sim, scan: cfg.env.scan, ..cfg.physical.clone() };
    physical.injections.extend_from_slice(injections);
    cfg.write_to(&cfg.output_dir)?;
    let listener = TcpListener::bind(endpoint).map_err(|e| Failure::Runtime(format!("cannot bind {endpoint}: {e}")))?;
    let addr = listener.local_addr()?;
    {
        let mut out = std::io::stdout().lock();
        writeln!(out, "{addr}")?;
        out.flush()?;
    }
    let outcome = serve_physical(&listener, world, physical)?;
    write_json(&cfg.output_dir.join("session.json"), &outcome)?;
    if let SessionEnd::ConnectionLost(why) = &outcome.end {
        return Err(Failure::Protocol(format!("session aborted after {} steps: {why}", outcome.steps)));
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct TwinRecord<'a> {
    outcome: TwinOutcome,
    diagnostic: &'a Option<String>,
    physical_steps: usize,
    retrains: &'a [RetrainSummary],
}

/// Connects to the physical server and drives it with the checkpoint,
/// retraining locally when needed. The updated checkpoint is saved.
pub fn cmd_twin(cfg: &RunConfig, checkpoint: &Path, replay: Option<&Path>) -> Result<TwinOutcome, Failure> {
    let mut agent = load_agent(checkpoint, cfg)?;
    let mut buffer = match replay {
        Some(p) => ReplayBuffer::load(p).map_err(runtime("replay snapshot"))?,
        None => ReplayBuffer::new(cfg.train.buffer_capacity),
    };
    let dir = &cfg.output_dir;
    cfg.write_to(dir)?;
    let report = run_twin(&mut agent, &mut buffer, &cfg.env, &cfg.twin, cfg.seed)
        .map_err(|e| Failure::Protocol(format!("cannot reach {}: {e}", cfg.twin.endpoint)))?;
    write_json(&dir.join("metrics.json"), &report.metrics())?;
    write_json(
        &dir.join("report.json"),
        &TwinRecord {
            outcome: report.outcome,
            diagnostic: &report.diagnostic,
            physical_steps: report.physical_steps,
            retrains: &report.retrains,
        },
    )?;
    std::fs::write(dir.join("trace.ndjson"), report.trace.to_ndjson()?)?;
    let episode = EpisodeResult {
        episode: 0,
        world: World { bounds: cfg.twin.bounds, goal: goal_of(&report), obstacles: vec![] },
        start: cfg.physical.start,
        outcome: match report.outcome {
            TwinOutcome::Goal => twinnav_core::worldsim::StepEvent::GoalReached,
            TwinOutcome::Collision => twinnav_core::worldsim::StepEvent::Collision,
            TwinOutcome::Timeout => twinnav_core::worldsim::StepEvent::Timeout,
            _ => twinnav_core::worldsim::StepEvent::None,
        },
        steps: report.physical_steps,
        episode_return: report.trajectory.iter().map(|r| r.reward).sum(),
        trajectory: report.trajectory.clone(),
    };
    write_trajectories_csv(std::slice::from_ref(&episode), BufWriter::new(File::create(dir.join("trajectories.csv"))?))?;
    write_json(&dir.join("episodes.json"), &[&episode])?;
    agent.save(dir.join("checkpoint.json"))?;
    if report.outcome == TwinOutcome::Aborted {
        return Err(Failure::Protocol(report.diagnostic.unwrap_or_else(|| "session aborted".into())));
    }
    Ok(report.outcome)
}

fn goal_of(report: &twinnav_core::twinlink::TwinReport) -> Point2 {
    report
        .trace
        .entries
        .iter()
        .find_map(|e| match e {
            twinnav_core::twinlink::TraceEntry::Received {
                msg: twinnav_core::twinlink::TwinMessage::Status { goal, .. }, ..
            } => Some(*goal),
            _ => None,
        })
        .unwrap_or(Point2::new(0.0, 0.0))
}

/// Renders trajectory CSVs, or an update log's average-Q curve, to SVG.
pub fn cmd_plot(
    trajectories: &[PathBuf],
    episodes: Option<&Path>,
    world: Option<&Path>,
    updates: Option<&Path>,
    out: &Path,
) -> Result<(), Failure> {
    let svg = if let Some(u) = updates {
        let ups = TrainingLog::read_updates_csv(File::open(u).map_err(|e| Failure::Usage(format!("{}: {e}", u.display())))?)?;
        if ups.is_empty() {
            return Err(Failure::Usage(format!("{} holds no updates", u.display())));
        }
        render_q_curve(&ups, 1000)
    } else {
        let mut groups = Vec::new();
        for t in trajectories {
            let f = File::open(t).map_err(|e| Failure::Usage(format!("{}: {e}", t.display())))?;
            groups.extend(read_trajectories_csv(f)?);
        }
        groups.retain(|(_, recs)| !recs.is_empty());
        if groups.is_empty() {
            return Err(Failure::Usage("no trajectories to plot".into()));
        }
        let eps: Option<Vec<EpisodeResult>> = match episodes {
            Some(p) => Some(
                serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        let world = world.map(load_world).transpose()?;
        render_trajectories(&Scene::build(&groups, eps.as_deref(), world.as_ref()))
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, svg)?;
    Ok(())
}

/// Parses `x,y;x,y;...`.
pub fn parse_waypoints(s: &str) -> Result<Vec<Point2>, Failure> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (x, y) = p.split_once(',').ok_or_else(|| Failure::Usage(format!("waypoint {p:?} is not x,y")))?;
            let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| Failure::Usage(format!("waypoint {p:?} is not x,y")));
            Ok(Point2::new(parse(x)?, parse(y)?))
        })
        .collect()
}
