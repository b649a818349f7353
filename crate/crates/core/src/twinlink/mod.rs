//! Digital-twin link: wire protocol, the physical server, the twin client
//! and its pause / retrain / resume cycle.

mod client;
mod phase;
mod protocol;
mod retrain;
mod server;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lidarsim::LaserScan;
use crate::perception::PerceptionParams;
use crate::worldsim::Bounds;

pub use client::{run_twin, run_twin_on, RetrainSummary, TwinOutcome, TwinReport};
pub use phase::{is_legal_path, Trace, TraceEntry, TwinPhase};
pub use protocol::{decode_message, encode_message, read_frame, Connection, TwinMessage, MAX_LINE_BYTES};
pub use retrain::{retrain_procedure, verify_policy, RetrainConfig, RetrainOutcome};
pub use server::{serve_physical, Injection, PhysicalConfig, PhysicalSim, SessionEnd, SessionOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    /// Pause once any beam returns closer than this.
    pub danger_threshold: f64,
    /// Also pause when the goal distance shrank by less than
    /// `stall_progress` over the last `stall_window` steps. 0 disables.
    pub stall_window: usize,
    pub stall_progress: f64,
    /// Environment steps allowed per retraining attempt.
    pub retrain_step_budget: usize,
    /// Extra clearance demanded of verified paths in the local world, on
    /// top of the collision distance, to absorb reconstruction error.
    pub verify_margin: f64,
    pub endpoint: String,
    pub connect_timeout_ms: u64,
    pub io_timeout_ms: u64,
    /// Extent of the physical world; reconstructed boxes are clipped to it.
    pub bounds: Bounds,
    pub perception: PerceptionParams,
    pub retrain: RetrainConfig,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            danger_threshold: 1.0,
            stall_window: 30,
            stall_progress: 0.3,
            retrain_step_budget: 20_000,
            verify_margin: 0.05,
            endpoint: "127.0.0.1:7878".into(),
            connect_timeout_ms: 5_000,
            io_timeout_ms: 30_000,
            bounds: Bounds::default(),
            perception: PerceptionParams::default(),
            retrain: RetrainConfig::default(),
        }
    }
}

impl TwinConfig {
    pub fn validate(&self, safe_dist: f64) -> Result<()> {
        if !(self.danger_threshold > safe_dist) {
            return Err(Error::Validation(format!(
                "danger_threshold {} must exceed the collision distance {safe_dist}",
                self.danger_threshold
            )));
        }
        if !(self.stall_progress >= 0.0) || !self.stall_progress.is_finite() {
            return Err(Error::Validation("stall_progress must be non-negative".into()));
        }
        if !(self.verify_margin >= 0.0) {
            return Err(Error::Validation("verify_margin must be non-negative".into()));
        }
        if self.io_timeout_ms == 0 || self.connect_timeout_ms == 0 {
            return Err(Error::Validation("timeouts must be positive".into()));
        }
        Ok(())
    }
}

/// Sliding record of goal distances for spotting a policy that has stopped
/// making headway.
#[derive(Clone, Debug, Default)]
pub struct StallMonitor {
    window: usize,
    progress: f64,
    history: std::collections::VecDeque<f64>,
}

impl StallMonitor {
    pub fn new(config: &TwinConfig) -> Self {
        Self { window: config.stall_window, progress: config.stall_progress, history: Default::default() }
    }

    /// Records the current goal distance; true once a full window has passed
    /// with too little progress.
    pub fn observe(&mut self, goal_dist: f64) -> bool {
        if self.window == 0 {
            return false;
        }
        self.history.push_back(goal_dist);
        if self.history.len() > self.window + 1 {
            self.history.pop_front();
        }
        self.history.len() == self.window + 1 && self.history[0] - goal_dist < self.progress
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

/// True iff the nearest return is closer than the danger threshold.
pub fn danger_monitor(scan: &LaserScan, config: &TwinConfig) -> bool {
    scan.min_range().is_some_and(|r| r < config.danger_threshold)
}
