//! Off-policy training loop and its log.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::td3::agent::Td3Agent;
use crate::td3::env::Environment;
use crate::td3::replay::{ReplayBuffer, Transition};
use crate::td3::state::Action;
use crate::worldsim::StepEvent;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    /// Uniformly random actions before the first update.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub expl_noise_start: f64,
    pub expl_noise_end: f64,
    /// Steps (after warmup) over which exploration noise decays linearly.
    pub expl_decay_steps: usize,
    pub log_every_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            warmup_steps: 1_000,
            batch_size: 128,
            buffer_capacity: 100_000,
            expl_noise_start: 0.1,
            expl_noise_end: 0.02,
            expl_decay_steps: 100_000,
            log_every_episodes: 100,
        }
    }
}

impl TrainConfig {
    pub fn exploration_sigma(&self, step: usize) -> f64 {
        let k = step.saturating_sub(self.warmup_steps);
        if self.expl_decay_steps == 0 || k >= self.expl_decay_steps {
            return self.expl_noise_end;
        }
        let frac = k as f64 / self.expl_decay_steps as f64;
        self.expl_noise_start + (self.expl_noise_end - self.expl_noise_start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub outcome: StepEvent,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub avg_q: f64,
}

/// Append-only record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
    pub updates: Vec<UpdateLog>,
}

impl TrainingLog {
    /// Mean avg-Q over the first and last `fraction` of updates.
    pub fn q_trend(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.updates.len();
        let k = ((n as f64) * fraction).floor() as usize;
        if k == 0 {
            return None;
        }
        let mean = |s: &[UpdateLog]| s.iter().map(|u| u.avg_q).sum::<f64>() / s.len() as f64;
        Some((mean(&self.updates[..k]), mean(&self.updates[n - k..])))
    }

    pub fn write_episodes_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["episode", "return", "outcome", "steps"])?;
        for e in &self.episodes {
            out.write_record([
                e.episode.to_string(),
                e.episode_return.to_string(),
                e.outcome.as_str().to_string(),
                e.steps.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_updates_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["update", "critic1_loss", "critic2_loss", "avg_q"])?;
        for u in &self.updates {
            out.write_record([
                u.update.to_string(),
                u.critic1_loss.to_string(),
                u.critic2_loss.to_string(),
                u.avg_q.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_updates_csv<R: std::io::Read>(r: R) -> Result<Vec<UpdateLog>> {
        Ok(csv::Reader::from_reader(r).deserialize().collect::<std::result::Result<_, _>>()?)
    }

    pub fn read_episodes_csv<R: std::io::Read>(r: R) -> Result<Vec<EpisodeLog>> {
        Ok(csv::Reader::from_reader(r).deserialize().collect::<std::result::Result<_, _>>()?)
    }

    pub fn save_csv(&self, episodes: impl AsRef<Path>, updates: impl AsRef<Path>) -> Result<()> {
        self.write_episodes_csv(std::fs::File::create(episodes)?)?;
        self.write_updates_csv(std::fs::File::create(updates)?)?;
        Ok(())
    }
}

/// Runs `config.total_steps` environment steps with one TD3 update per step
/// once warmup is over and the buffer holds a full batch.
pub fn train<E: Environment>(
    env: &mut E,
    agent: &mut Td3Agent,
    buffer: &mut ReplayBuffer,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainingLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrainingLog::default();
    if config.total_steps == 0 {
        return Ok(log);
    }
    let mut state = env.reset()?;
    let mut ep_return = 0.0;
    let mut ep_steps = 0;

    for step in 0..config.total_steps {
        let action = if step < config.warmup_steps {
            Action::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
        } else {
            let a = agent.act(&state)?;
            let sigma = config.exploration_sigma(step);
            if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).expect("positive std-dev");
                Action::new(a.linear + n.sample(&mut rng), a.angular + n.sample(&mut rng))
            } else {
                a
            }
        };
        let out = env.step(&action)?;
        // a timeout truncates the episode but is not a terminal state
        let done = matches!(out.event, StepEvent::GoalReached | StepEvent::Collision);
        buffer.push(Transition { s: state, a: action, r: out.reward, s_next: out.state.clone(), done });
        ep_return += out.reward;
        ep_steps += 1;

        if step >= config.warmup_steps {
            if let Some(batch) = buffer.sample(config.batch_size, &mut rng) {
                let stats = agent.update(&batch, &mut rng)?;
                log.updates.push(UpdateLog {
                    update: log.updates.len(),
                    critic1_loss: stats.critic1_loss,
                    critic2_loss: stats.critic2_loss,
                    avg_q: stats.avg_q,
                });
            }
        }

        if out.event.is_terminal() {
            log.episodes.push(EpisodeLog {
                episode: log.episodes.len(),
                episode_return: ep_return,
                outcome: out.event,
                steps: ep_steps,
            });
            if config.log_every_episodes > 0 && log.episodes.len() % config.log_every_episodes == 0 {
                let recent = &log.episodes[log.episodes.len() - config.log_every_episodes..];
                let goals = recent.iter().filter(|e| e.outcome == StepEvent::GoalReached).count();
                let avg_q = log.updates.last().map_or(0.0, |u| u.avg_q);
                log::info!(
                    "step {step}: episodes {} recent success {goals}/{} avg_q {avg_q:.2}",
                    log.episodes.len(),
                    recent.len()
                );
            }
            state = env.reset()?;
            ep_return = 0.0;
            ep_steps = 0;
        } else {
            state = out.state;
        }
    }
    Ok(log)
}
