use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twinnav_cli::commands::{cmd_eval, cmd_physical, cmd_plot, cmd_train, cmd_twin, parse_waypoints};
use twinnav_cli::config::{ExecMode, RunConfig};
use twinnav_cli::Failure;
use twinnav_core::twinlink::Injection;

/// Digital-twin robot navigation: pre-train, evaluate, and run the
/// physical / twin process pair.
#[derive(Parser)]
#[command(name = "twinnav", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; missing keys take the desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.batch_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (config key `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run single-threaded.
    #[arg(long)]
    sequential: bool,
    /// Validate the configuration, print it and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pre-train a TD3 policy on randomly sampled worlds.
    Train {
        #[command(flatten)]
        common: Common,
        /// Environment steps (`train.total_steps`).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episodes (`eval.episodes`).
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluate in this world file instead of sampled worlds.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Chain of goals `x,y;x,y;...` driven in order through `--world`.
        #[arg(long, requires = "world")]
        waypoints: Option<String>,
    },
    /// Run the physical-robot server for one session.
    Physical {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: PathBuf,
        /// Listen address; port 0 picks a free port.
        #[arg(long, default_value = "127.0.0.1:0")]
        endpoint: String,
        /// `cx,cy,w,h@step`: obstacle appearing once the robot has moved `step` ticks.
        #[arg(long = "inject-obstacle", value_name = "CX,CY,W,H@STEP")]
        inject_obstacle: Vec<String>,
    },
    /// Run the twin client against a physical server.
    Twin {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Replay snapshot to continue from when retraining.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Server address (`twin.endpoint`).
        #[arg(long)]
        endpoint: Option<String>,
        /// Metres (`twin.danger_threshold`).
        #[arg(long)]
        danger_threshold: Option<f64>,
        /// Steps (`twin.retrain_step_budget`).
        #[arg(long)]
        retrain_budget: Option<usize>,
    },
    /// Render trajectories or an average-Q curve as SVG.
    Plot {
        #[arg(long = "trajectories", num_args = 1..)]
        trajectories: Vec<PathBuf>,
        /// `episodes.json` from the same run, for outcomes and obstacles.
        #[arg(long)]
        episodes: Option<PathBuf>,
        #[arg(long)]
        world: Option<PathBuf>,
        /// `updates.csv` from a training run; plots average Q instead.
        #[arg(long, conflicts_with = "trajectories")]
        updates: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(common: &Common, mut extra: Vec<String>) -> Result<RunConfig, Failure> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut sets = common.set.clone();
    sets.append(&mut extra);
    let mut cfg = base.with_overrides(&sets)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if common.sequential {
        cfg.exec = ExecMode::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt<T: ToString>(key: &str, v: &Option<T>) -> Vec<String> {
    v.iter().map(|v| format!("{key}={}", v.to_string())).collect()
}

fn quoted(key: &str, v: &Option<String>) -> Vec<String> {
    v.iter().map(|v| format!("{key}={}", toml::Value::String(v.clone()))).collect()
}

/// Prints the resolved config and stops when `--dry-run` is given.
fn dry(common: &Common, cfg: &RunConfig) -> bool {
    if common.dry_run {
        print!("{}", cfg.to_toml());
    }
    common.dry_run
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Train { common, steps } => {
            let cfg = resolve(&common, opt("train.total_steps", &steps))?;
            if dry(&common, &cfg) {
                return Ok(());
            }
            let s = cmd_train(&cfg)?;
            println!("trained: {} episodes, {} updates", s.episodes, s.updates);
            if let Some((first, last)) = s.q_trend {
                println!("avg_q first decile {first:.4}, last decile {last:.4}");
            }
            println!("outputs in {}", cfg.output_dir.display());
        }
        Cmd::Eval { common, checkpoint, episodes, world, waypoints } => {
            let cfg = resolve(&common, opt("eval.episodes", &episodes))?;
            let goals = waypoints.as_deref().map(parse_waypoints).transpose()?.unwrap_or_default();
            if dry(&common, &cfg) {
                return Ok(());
            }
            let r = cmd_eval(&cfg, &checkpoint, world.as_deref(), &goals)?;
            println!("{}", serde_json::to_string(&r).expect("metrics serialize"));
        }
        Cmd::Physical { common, world, endpoint, inject_obstacle } => {
            let cfg = resolve(&common, vec![])?;
            let injections = inject_obstacle
                .iter()
                .map(|s| s.parse::<Injection>().map_err(|e| Failure::Usage(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            if dry(&common, &cfg) {
                return Ok(());
            }
            let o = cmd_physical(&cfg, &world, &endpoint, &injections)?;
            log::info!("session over after {} steps: {:?}", o.steps, o.end);
        }
        Cmd::Twin { common, checkpoint, replay, endpoint, danger_threshold, retrain_budget } => {
            let mut extra = quoted("twin.endpoint", &endpoint);
            extra.extend(opt("twin.danger_threshold", &danger_threshold));
            extra.extend(opt("twin.retrain_step_budget", &retrain_budget));
            let cfg = resolve(&common, extra)?;
            if dry(&common, &cfg) {
                return Ok(());
            }
            let outcome = cmd_twin(&cfg, &checkpoint, replay.as_deref())?;
            println!("outcome: {}", serde_json::to_value(outcome).expect("outcome serializes").as_str().unwrap_or("?"));
        }
        Cmd::Plot { trajectories, episodes, world, updates, out } => {
            cmd_plot(&trajectories, episodes.as_deref(), world.as_deref(), updates.as_deref(), &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("twinnav: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
