//! The episodic training loop, its report and resumable checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionLayout, Agent, AgentHparams, ReplayBuffer, Transition};
use crate::baselines::Policy;
use crate::config::SystemConfig;
use crate::env::{observation_len, Env, HybridAction};
use crate::error::{Error, Result};

/// Environment seed of a training episode.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(episode as u64)
}

/// Linear decay from `epsilon_start` to `epsilon_end` over the first
/// `epsilon_decay_fraction` of the episodes, constant afterwards.
pub fn exploration_rate(hp: &AgentHparams, episode: usize, total_episodes: usize) -> f64 {
    let horizon = hp.epsilon_decay_fraction * total_episodes as f64;
    if horizon <= 0.0 || episode as f64 >= horizon {
        return hp.epsilon_end;
    }
    hp.epsilon_start + (hp.epsilon_end - hp.epsilon_start) * episode as f64 / horizon
}

/// One row of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub ee_lb: f64,
    pub bits_total: f64,
    pub energy_ub: f64,
    pub mean_g1: f64,
    pub mean_g2: f64,
    pub mean_g3: f64,
    pub mean_g4: f64,
    pub mean_g5: f64,
    pub mean_g6: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

/// Everything needed to continue training bit-exactly from an episode
/// boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub config: SystemConfig,
    pub hparams: AgentHparams,
    pub seed: u64,
    pub total_episodes: usize,
    pub agent: Agent<f64>,
    pub replay: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub report: Vec<TrainingRow>,
}

impl Checkpoint {
    /// Fails unless `cfg` resolves to the configuration the checkpoint was trained on.
    pub fn verify(&self, cfg: &SystemConfig) -> Result<()> {
        let hash = cfg.clone().resolved()?.hash();
        if hash != self.config_hash {
            return Err(Error::ConfigHashMismatch { checkpoint: self.config_hash.clone(), config: hash });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    hparams: AgentHparams,
    env: Env,
    agent: Agent<f64>,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    seed: u64,
    total_episodes: usize,
    report: Vec<TrainingRow>,
}

impl Trainer {
    pub fn new(cfg: SystemConfig, hparams: AgentHparams, total_episodes: usize, seed: u64) -> Result<Self> {
        let env = Env::new(cfg)?;
        let cfg = env.config();
        let hparams = hparams.resolved(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = Agent::new(observation_len(cfg), ActionLayout::from_config(cfg), hparams.clone(), &mut rng)?;
        Ok(Self {
            replay: ReplayBuffer::new(hparams.buffer_capacity),
            hparams,
            env,
            agent,
            rng,
            seed,
            total_episodes,
            report: Vec::new(),
        })
    }

    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        ckpt.verify(&ckpt.config)?;
        let env = Env::new(ckpt.config)?;
        Ok(Self {
            hparams: ckpt.hparams,
            env,
            agent: ckpt.agent,
            replay: ckpt.replay,
            rng: ckpt.rng,
            seed: ckpt.seed,
            total_episodes: ckpt.total_episodes,
            report: ckpt.report,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_hash: self.env.config().hash(),
            config: self.env.config().clone(),
            hparams: self.hparams.clone(),
            seed: self.seed,
            total_episodes: self.total_episodes,
            agent: self.agent.clone(),
            replay: self.replay.clone(),
            rng: self.rng.clone(),
            report: self.report.clone(),
        }
    }

    pub fn config(&self) -> &SystemConfig {
        self.env.config()
    }

    pub fn hparams(&self) -> &AgentHparams {
        &self.hparams
    }

    pub fn agent(&self) -> &Agent<f64> {
        &self.agent
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn report(&self) -> &[TrainingRow] {
        &self.report
    }

    pub fn is_finished(&self) -> bool {
        self.report.len() >= self.total_episodes
    }

    pub fn policy(&self) -> TrainedPolicy {
        TrainedPolicy::new(self.agent.clone())
    }

    /// Rolls out one episode, storing transitions and taking
    /// `grad_steps_per_slot` updates after every slot.
    pub fn run_episode(&mut self) -> Result<TrainingRow> {
        let episode = self.report.len();
        let eps = exploration_rate(&self.hparams, episode, self.total_episodes);
        let scale = self.hparams.reward_scale.expect("resolved");
        let layout = self.agent.layout;
        self.env.reset(episode_seed(self.seed, episode))?;
        let mut ret = 0.0;
        let mut g = [0.0; 6];
        let mut slots = 0usize;
        while !self.env.is_done() {
            let obs = self.env.observe();
            let mask = self.env.action_mask();
            let (x, u) = self.agent.act(&obs.features, mask.view(), eps, &mut self.rng);
            let action = layout.decode(&u, self.env.config())?.into_hybrid(x.clone());
            let out = self.env.step(&action)?;
            ret += out.reward;
            for (acc, v) in g.iter_mut().zip(out.info.penalties.as_array()) {
                *acc += v;
            }
            slots += 1;
            self.replay.push(Transition {
                observation: obs.features,
                assignment: x,
                action: u,
                reward: out.reward * scale,
                next_observation: out.next_observation.features,
                terminal: out.terminal,
            });
            for _ in 0..self.hparams.grad_steps_per_slot {
                if let Some(batch) = self.replay.sample::<f64, _>(self.hparams.batch_size, &mut self.rng) {
                    self.agent.update(&batch, &mut self.rng).map_err(|e| match e {
                        Error::NonFinite(msg) => Error::NonFinite(format!("{msg} at episode {episode}, slot {}", slots - 1)),
                        other => other,
                    })?;
                }
            }
        }
        let ledger = self.env.ledger();
        let n = slots as f64;
        let row = TrainingRow {
            episode,
            episode_return: ret,
            ee_lb: ledger.ee_lb()?,
            bits_total: ledger.bits_total,
            energy_ub: ledger.e_ub_j,
            mean_g1: g[0] / n,
            mean_g2: g[1] / n,
            mean_g3: g[2] / n,
            mean_g4: g[3] / n,
            mean_g5: g[4] / n,
            mean_g6: g[5] / n,
            epsilon: eps,
            alpha: self.agent.alpha(),
        };
        self.report.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining episodes.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.run_episode()?;
        }
        Ok(())
    }
}

/// Trains from scratch for `episodes` episodes.
pub fn train(cfg: SystemConfig, hparams: AgentHparams, episodes: usize, seed: u64) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, hparams, episodes, seed)?;
    t.run()?;
    Ok(t)
}

/// Deterministic policy from a trained agent: greedy schedule and `tanh(μ)`.
/// Beamformer amplitudes follow the environment's power budget, so the
/// policy can be evaluated under a different `P_max` than it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    agent: Agent<f64>,
}

impl TrainedPolicy {
    pub fn new(agent: Agent<f64>) -> Self {
        Self { agent }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        Self::new(ckpt.agent.clone())
    }
}

impl Policy for TrainedPolicy {
    fn name(&self) -> &str {
        "agent"
    }

    fn act(&mut self, env: &Env) -> Result<HybridAction> {
        let obs = env.observe();
        if obs.features.len() != self.agent.obs_dim || ActionLayout::from_config(env.config()) != self.agent.layout {
            return Err(Error::Dimension("environment shape differs from the trained agent".into()));
        }
        let mask = env.action_mask();
        let (x, u) = self.agent.act_deterministic(&obs.features, mask.view());
        Ok(self.agent.layout.decode(&u, env.config())?.into_hybrid(x))
    }
}
