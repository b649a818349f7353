//! Run configuration: every tunable of a run in one TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twinnav_core::td3::{EnvConfig, Td3Config, TrainConfig};
use twinnav_core::twinlink::{PhysicalConfig, TwinConfig};
use twinnav_core::worldsim::{Bounds, Pose, WorldConfig};
use twinnav_core::Exec;

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Base seed of the evaluation worlds, kept apart from training seeds.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 50, seed: 0x5EED_E7A1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// "parallel" or "sequential"; only evaluation and scans fan out.
    pub exec: ExecMode,
    pub world: WorldConfig,
    pub env: EnvConfig,
    pub agent: Td3Config,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub twin: TwinConfig,
    pub physical: PhysicalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Parallel,
    Sequential,
}

impl From<ExecMode> for Exec {
    fn from(m: ExecMode) -> Exec {
        match m {
            ExecMode::Parallel => Exec::Parallel,
            ExecMode::Sequential => Exec::Sequential,
        }
    }
}

/// The desk-scale preset: small networks, a rescaled orientation reward
/// and a 150k-step budget that fits a single CPU core.
impl Default for RunConfig {
    fn default() -> Self {
        let mut env = EnvConfig::default();
        env.reward.orientation_scale = 1.0;
        let total = 150_000;
        let bounds = Bounds { xmin: -2.0, ymin: -5.0, xmax: 8.0, ymax: 5.0 };
        Self {
            seed: 7,
            output_dir: PathBuf::from("runs/latest"),
            exec: ExecMode::Parallel,
            world: WorldConfig::default(),
            env,
            agent: Td3Config { hidden: vec![64, 64], ..Td3Config::default() },
            train: TrainConfig {
                total_steps: total,
                warmup_steps: 2_000,
                expl_decay_steps: total,
                log_every_episodes: 100,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            twin: TwinConfig { bounds, ..TwinConfig::default() },
            physical: PhysicalConfig { start: Pose::new(0.0, 0.0, 0.0), ..PhysicalConfig::default() },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::Usage(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML,
    /// falling back to a bare string.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self, Failure> {
        if sets.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).expect("config always serializes");
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("override {set:?} is not key=value")))?;
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut node = &mut doc;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Failure::Usage(format!("unknown config key {key:?}")))?;
                if i + 1 == parts.len() {
                    if !table.contains_key(*part) && !optional_key(part) {
                        return Err(Failure::Usage(format!("unknown config key {key:?}")));
                    }
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table.get_mut(*part).ok_or_else(|| Failure::Usage(format!("unknown config key {key:?}")))?;
            }
        }
        let text = toml::to_string(&doc).expect("toml value serializes");
        Self::from_toml(&text)
    }

    /// Cross-module checks a single section cannot make on its own.
    pub fn validate(&self) -> Result<(), Failure> {
        let usage = |key: &str, e: twinnav_core::Error| Failure::Usage(format!("{key}: {e}"));
        self.agent.validate().map_err(|e| usage("agent", e))?;
        self.env.scan.validate().map_err(|e| usage("env.scan", e))?;
        self.twin.validate(self.env.sim.safe_dist).map_err(|e| usage("twin", e))?;
        if self.agent.state_dim != self.env.state.dim() {
            return Err(Failure::Usage(format!(
                "agent.state_dim is {} but env.state yields {}",
                self.agent.state_dim,
                self.env.state.dim()
            )));
        }
        if self.env.state.n_bins == 0 || !self.env.scan.n_beams.is_multiple_of(self.env.state.n_bins) {
            return Err(Failure::Usage("env.state.n_bins must divide env.scan.n_beams".into()));
        }
        if self.train.batch_size == 0 || self.train.batch_size > self.train.buffer_capacity {
            return Err(Failure::Usage("train.batch_size must be in 1..=train.buffer_capacity".into()));
        }
        if self.eval.episodes == 0 {
            return Err(Failure::Usage("eval.episodes must be at least 1".into()));
        }
        let sim = &self.env.sim;
        if !(sim.dt > 0.0 && sim.safe_dist >= 0.0 && sim.goal_tol > 0.0 && sim.max_steps > 0) {
            return Err(Failure::Usage("env.sim: dt, goal_tol and max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Writes the exact config next to a run's outputs.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.to_toml())
    }
}

/// Keys that serialize to nothing when unset.
fn optional_key(key: &str) -> bool {
    key == "io_timeout_ms"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_toml("seed = 3\n[train]\ntotal_steps = 10\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.total_steps, 10);
        assert_eq!(c.train.batch_size, 128);
    }

    #[test]
    fn unknown_keys_name_the_offender() {
        match RunConfig::from_toml("[train]\ntotal_stepz = 10\n") {
            Err(Failure::Usage(m)) => assert!(m.contains("total_stepz"), "{m}"),
            other => panic!("{other:?}"),
        }
        match RunConfig::default().with_overrides(&["agent.hiden=[8]".into()]) {
            Err(Failure::Usage(m)) => assert!(m.contains("agent.hiden")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides() {
        let c = RunConfig::default()
            .with_overrides(&[
                "train.total_steps=5".into(),
                "agent.hidden=[8, 8]".into(),
                "twin.endpoint=127.0.0.1:9000".into(),
                "exec=sequential".into(),
            ])
            .unwrap();
        assert_eq!(c.train.total_steps, 5);
        assert_eq!(c.agent.hidden, vec![8, 8]);
        assert_eq!(c.twin.endpoint, "127.0.0.1:9000");
        assert_eq!(c.exec, ExecMode::Sequential);
    }

    #[test]
    fn cross_checks() {
        let mut c = RunConfig::default();
        c.agent.state_dim = 30;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.twin.danger_threshold = 0.4;
        assert!(c.validate().is_err());
    }
}
