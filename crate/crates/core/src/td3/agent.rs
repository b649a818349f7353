//! TD3 agent: deterministic actor, twin critics, target networks and the
//! clipped double-Q update with delayed policy steps.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::td3::nn::{Activation, Adam, AdamConfig, Mlp, MlpSpec};
use crate::td3::replay::Transition;
use crate::td3::state::{Action, StateVector};

pub const ACTION_DIM: usize = 2;
const CHECKPOINT_FORMAT: &str = "twinnav-td3-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub state_dim: usize,
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: usize,
    /// Std-dev of the target-policy smoothing noise.
    pub policy_noise: f64,
    pub noise_clip: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            state_dim: 24,
            hidden: vec![256, 256],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            policy_noise: 0.2,
            noise_clip: 0.5,
        }
    }
}

impl Td3Config {
    pub fn actor_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.state_dim];
        sizes.extend(&self.hidden);
        sizes.push(ACTION_DIM);
        MlpSpec::new(sizes, Activation::Relu, Activation::Tanh)
    }

    pub fn critic_spec(&self) -> MlpSpec {
        let mut sizes = vec![self.state_dim + ACTION_DIM];
        sizes.extend(&self.hidden);
        sizes.push(1);
        MlpSpec::new(sizes, Activation::Relu, Activation::Identity)
    }

    pub fn architecture(&self) -> String {
        format!("actor={} critic={}", self.actor_spec().describe(), self.critic_spec().describe())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.state_dim == 0 || self.hidden.contains(&0) {
            return bad("network widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1");
        }
        if self.actor_lr <= 0.0 || self.critic_lr <= 0.0 {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

/// Per-update diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    /// Batch mean of the clipped double-Q target estimate.
    pub avg_q: f64,
    pub actor_updated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    updates: u64,
}

/// Column-stacked batch arrays.
struct Batch {
    s: Array2<f64>,
    a: Array2<f64>,
    r: Array1<f64>,
    s_next: Array2<f64>,
    done: Array1<f64>,
}

impl Batch {
    fn gather(batch: &[&Transition], dim: usize) -> Result<Self> {
        let n = batch.len();
        let mut s = Vec::with_capacity(n * dim);
        let mut s_next = Vec::with_capacity(n * dim);
        let mut a = Vec::with_capacity(n * ACTION_DIM);
        for t in batch {
            if t.s.dim() != dim || t.s_next.dim() != dim {
                return Err(Error::Shape { expected: dim, got: t.s.dim() });
            }
            t.s.write_into(&mut s);
            t.s_next.write_into(&mut s_next);
            a.extend_from_slice(&t.a.as_array());
        }
        let shape = |v: Vec<f64>, cols| Array2::from_shape_vec((n, cols), v).expect("sizes checked");
        Ok(Self {
            s: shape(s, dim),
            a: shape(a, ACTION_DIM),
            r: batch.iter().map(|t| t.r).collect(),
            s_next: shape(s_next, dim),
            done: batch.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        })
    }
}

fn concat(s: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[s.view(), a.view()]).expect("row counts match")
}

impl Td3Agent {
    pub fn new(config: Td3Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::new(config.actor_spec(), &mut rng);
        let critic1 = Mlp::new(config.critic_spec(), &mut rng);
        let critic2 = Mlp::new(config.critic_spec(), &mut rng);
        Ok(Self::from_networks(config, actor, critic1, critic2))
    }

    /// Wraps explicit networks; targets start as exact copies.
    pub fn from_networks(config: Td3Config, actor: Mlp, critic1: Mlp, critic2: Mlp) -> Self {
        Self {
            actor_opt: Adam::new(&actor, AdamConfig::with_lr(config.actor_lr)),
            critic1_opt: Adam::new(&critic1, AdamConfig::with_lr(config.critic_lr)),
            critic2_opt: Adam::new(&critic2, AdamConfig::with_lr(config.critic_lr)),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            config,
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Deterministic policy action.
    pub fn act(&self, state: &StateVector) -> Result<Action> {
        let out = self.actor.forward(&state.to_vec())?;
        Ok(Action::new(out[0], out[1]))
    }

    pub fn q_values(&self, state: &StateVector, action: &Action) -> Result<(f64, f64)> {
        let mut x = state.to_vec();
        x.extend_from_slice(&action.as_array());
        Ok((self.critic1.forward(&x)?[0], self.critic2.forward(&x)?[0]))
    }

    /// Clipped double-Q targets `r + gamma (1 - done) min(Q1', Q2')(s', a~)`
    /// with the given smoothing noise (already clipped). Returns the targets
    /// and the min target-critic values.
    fn targets(&self, b: &Batch, noise: &Array2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let mut next_a = self.actor_target.forward_batch(b.s_next.view())?;
        next_a += noise;
        next_a.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        let x = concat(&b.s_next, &next_a);
        let q1 = self.critic1_target.forward_batch(x.view())?;
        let q2 = self.critic2_target.forward_batch(x.view())?;
        let min_q: Array1<f64> = q1.column(0).iter().zip(q2.column(0)).map(|(a, b)| a.min(*b)).collect();
        let y = &b.r + &(self.config.gamma * (1.0 - &b.done) * &min_q);
        Ok((y, min_q))
    }

    /// TD targets for a batch with smoothing noise disabled.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let b = Batch::gather(batch, self.config.state_dim)?;
        let noise = Array2::zeros((batch.len(), ACTION_DIM));
        Ok(self.targets(&b, &noise)?.0.to_vec())
    }

    /// One TD3 step on a minibatch.
    pub fn update<R: Rng>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::Validation("empty minibatch".into()));
        }
        let n = batch.len();
        let b = Batch::gather(batch, self.config.state_dim)?;

        let noise = if self.config.policy_noise > 0.0 {
            let dist = Normal::new(0.0, self.config.policy_noise).expect("positive std-dev");
            let c = self.config.noise_clip;
            Array2::from_shape_simple_fn((n, ACTION_DIM), || dist.sample(rng).clamp(-c, c))
        } else {
            Array2::zeros((n, ACTION_DIM))
        };
        let (y, min_q) = self.targets(&b, &noise)?;
        let avg_q = min_q.mean().unwrap_or(0.0);

        let x = concat(&b.s, &b.a);
        let mut losses = [0.0; 2];
        for (k, loss) in losses.iter_mut().enumerate() {
            let (critic, opt) = match k {
                0 => (&mut self.critic1, &mut self.critic1_opt),
                _ => (&mut self.critic2, &mut self.critic2_opt),
            };
            let cache = critic.forward_cached(x.view())?;
            let err = &cache.output().column(0) - &y;
            *loss = err.mapv(|e| e * e).mean().unwrap_or(0.0);
            let upstream = (err * (2.0 / n as f64)).insert_axis(Axis(1));
            let (grads, _) = critic.backward(&cache, upstream.view())?;
            opt.step(critic, &grads);
        }

        self.updates += 1;
        let actor_updated = self.updates.is_multiple_of(self.config.policy_delay as u64);
        if actor_updated {
            self.actor_step(&b.s)?;
            let tau = self.config.tau;
            self.actor_target.polyak_from(&self.actor, tau);
            self.critic1_target.polyak_from(&self.critic1, tau);
            self.critic2_target.polyak_from(&self.critic2, tau);
        }
        Ok(UpdateStats { critic1_loss: losses[0], critic2_loss: losses[1], avg_q, actor_updated })
    }

    /// Gradient ascent on `mean Q1(s, actor(s))`.
    fn actor_step(&mut self, s: &Array2<f64>) -> Result<()> {
        let n = s.nrows();
        let actor_cache = self.actor.forward_cached(s.view())?;
        let x = concat(s, actor_cache.output());
        let critic_cache = self.critic1.forward_cached(x.view())?;
        let upstream = Array2::from_elem((n, 1), -1.0 / n as f64);
        let (_, dx) = self.critic1.backward(&critic_cache, upstream.view())?;
        let da = dx.slice(s![.., self.config.state_dim..]).to_owned();
        let (grads, _) = self.actor.backward(&actor_cache, da.view())?;
        self.actor_opt.step(&mut self.actor, &grads);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.actor_target, &self.critic1, &self.critic2, &self.critic1_target, &self.critic2_target]
            .iter()
            .all(|n| n.is_finite())
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ck = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            architecture: self.config.architecture(),
            agent: self,
        };
        Ok(serde_json::to_string(&ck)?)
    }

    /// Parses a checkpoint. With `expected` set, the stored architecture
    /// descriptor must match it exactly.
    pub fn from_checkpoint_json(text: &str, expected: Option<&Td3Config>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let agent = ck.agent;
        let own = agent.config.architecture();
        if ck.architecture != own {
            return Err(Error::Architecture { expected: ck.architecture, found: own });
        }
        if let Some(cfg) = expected {
            if cfg.architecture() != ck.architecture {
                return Err(Error::Architecture { expected: cfg.architecture(), found: ck.architecture });
            }
        }
        let nets_ok = *agent.actor.spec() == agent.config.actor_spec()
            && *agent.actor_target.spec() == agent.config.actor_spec()
            && [&agent.critic1, &agent.critic2, &agent.critic1_target, &agent.critic2_target]
                .iter()
                .all(|c| *c.spec() == agent.config.critic_spec())
            && agent.actor_opt.matches(&agent.actor)
            && agent.critic1_opt.matches(&agent.critic1)
            && agent.critic2_opt.matches(&agent.critic2);
        if !nets_ok {
            return Err(Error::Architecture { expected: own, found: "inconsistent network shapes".into() });
        }
        Ok(agent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&Td3Config>) -> Result<Self> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?, expected)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    architecture: String,
    agent: &'a Td3Agent,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    architecture: String,
    agent: Td3Agent,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::td3::nn::Dense;
    use ndarray::array;

    fn transition(s: [f64; 3], r: f64, done: bool) -> Transition {
        let st = StateVector { lidar_bins: vec![s[0]], goal_dist: s[1], goal_heading: s[2], prev_v: 0.0, prev_w: 0.0 };
        Transition { s: st.clone(), a: Action::new(0.2, -0.4), r, s_next: st, done }
    }

    fn five_dim_config() -> Td3Config {
        Td3Config { state_dim: 5, hidden: vec![8], ..Default::default() }
    }

    #[test]
    fn targets_start_as_copies() {
        let a = Td3Agent::new(five_dim_config(), 1).unwrap();
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critic1, a.critic1_target);
        assert_eq!(a.critic2, a.critic2_target);
        assert_ne!(a.critic1, a.critic2);
    }

    #[test]
    fn terminal_target_is_reward() {
        let a = Td3Agent::new(five_dim_config(), 3).unwrap();
        let t = transition([0.3, 0.4, -0.1], 7.25, true);
        assert_eq!(a.td_targets(&[&t]).unwrap(), vec![7.25]);
    }

    #[test]
    fn hand_computed_target_with_linear_critics() {
        // actor: a = tanh(W s + b) with W = 0 and b = atanh(0.5) -> a = (0.5, 0.5)
        let cfg = Td3Config { state_dim: 5, hidden: vec![], gamma: 0.9, ..Default::default() };
        let actor = Mlp::from_layers(vec![Dense {
            weights: Array2::zeros((5, 2)),
            bias: array![0.5f64.atanh(), 0.5f64.atanh()],
            activation: Activation::Tanh,
        }])
        .unwrap();
        let critic = |w: f64, b: f64| {
            Mlp::from_layers(vec![Dense {
                weights: Array2::from_elem((7, 1), w),
                bias: array![b],
                activation: Activation::Identity,
            }])
            .unwrap()
        };
        let agent = Td3Agent::from_networks(cfg, actor, critic(1.0, 0.0), critic(0.5, 1.0));
        let t = transition([1.0, 2.0, 3.0], 1.5, false);
        // s' . 1 = 6, actions sum to 1 -> Q1' = 7; Q2' = 0.5 * 7 + 1 = 4.5
        let y = agent.td_targets(&[&t]).unwrap()[0];
        assert!((y - (1.5 + 0.9 * 4.5)).abs() < 1e-12);
    }

    #[test]
    fn tau_one_copies_after_delayed_step() {
        let cfg = Td3Config { tau: 1.0, policy_delay: 2, ..five_dim_config() };
        let mut a = Td3Agent::new(cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ts: Vec<Transition> = (0..4).map(|i| transition([i as f64 * 0.1, 0.2, 0.3], 1.0, false)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let s1 = a.update(&batch, &mut rng).unwrap();
        assert!(!s1.actor_updated);
        assert_ne!(a.critic1, a.critic1_target);
        let s2 = a.update(&batch, &mut rng).unwrap();
        assert!(s2.actor_updated);
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critic1, a.critic1_target);
        assert_eq!(a.critic2, a.critic2_target);
    }

    #[test]
    fn tau_zero_targets_never_move() {
        let cfg = Td3Config { tau: 0.0, policy_delay: 1, ..five_dim_config() };
        let mut a = Td3Agent::new(cfg, 5).unwrap();
        let before = (a.actor_target.clone(), a.critic1_target.clone(), a.critic2_target.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ts: Vec<Transition> = (0..4).map(|i| transition([i as f64, 0.2, 0.3], -1.0, i == 2)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        for _ in 0..5 {
            a.update(&batch, &mut rng).unwrap();
        }
        assert_eq!((a.actor_target.clone(), a.critic1_target.clone(), a.critic2_target.clone()), before);
        assert_ne!(a.actor, a.actor_target);
    }

    #[test]
    fn critics_fit_constant_reward() {
        let cfg = Td3Config { gamma: 0.0, critic_lr: 1e-2, ..five_dim_config() };
        let mut a = Td3Agent::new(cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ts: Vec<Transition> = (0..16).map(|i| transition([i as f64 / 16.0, 0.5, -0.5], 3.0, false)).collect();
        let batch: Vec<&Transition> = ts.iter().collect();
        let first = a.update(&batch, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = a.update(&batch, &mut rng).unwrap();
        }
        assert!(last.critic1_loss < first.critic1_loss * 0.01);
        assert!(a.is_finite());
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let a = Td3Agent::new(five_dim_config(), 9).unwrap();
        let text = a.to_checkpoint_json().unwrap();
        let back = Td3Agent::from_checkpoint_json(&text, Some(&five_dim_config())).unwrap();
        assert_eq!(back, a);
        let other = Td3Config { hidden: vec![16], ..five_dim_config() };
        assert!(matches!(
            Td3Agent::from_checkpoint_json(&text, Some(&other)),
            Err(Error::Architecture { .. })
        ));
        let tampered = text.replacen("actor=5-8-2", "actor=5-9-2", 1);
        assert!(Td3Agent::from_checkpoint_json(&tampered, None).is_err());
    }

    #[test]
    fn empty_batch_rejected() {
        let mut a = Td3Agent::new(five_dim_config(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(a.update(&[], &mut rng).is_err());
    }
}
