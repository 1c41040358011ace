//! Network bundle, optimizers and the per-minibatch update.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::heads::{d3qn_head_loss, double_q_target, dueling_q, dueling_q_batch, greedy, head_output_len, select_discrete};
use super::policy::{actor_loss, critic_head_loss, critic_input, sample_tanh_gaussian, soft_bellman_target, temperature_loss, ActionLayout};
use super::replay::Batch;
use super::AgentHparams;
use crate::env::Assignment;
use crate::error::{Error, Result};
use crate::nn::{soft_update, Activation, Adam, DenseNet, ScalarAdam};
use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AgentParams<T: Real> {
    pub encoder: DenseNet<T>,
    pub q_online: DenseNet<T>,
    pub q_target: DenseNet<T>,
    pub critics: [DenseNet<T>; 2],
    pub critic_targets: [DenseNet<T>; 2],
    /// Emits the mean and the log-std of every action entry.
    pub actor: DenseNet<T>,
    pub log_alpha: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AgentOptimizers<T: Real> {
    pub encoder: Adam<T>,
    pub q: Adam<T>,
    pub critics: [Adam<T>; 2],
    pub actor: Adam<T>,
    pub alpha: ScalarAdam<T>,
}

/// Losses of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Agent<T: Real> {
    pub hparams: AgentHparams,
    pub layout: ActionLayout,
    pub obs_dim: usize,
    pub params: AgentParams<T>,
    pub optimizers: AgentOptimizers<T>,
}

fn mlp<T: Real, R: Rng + ?Sized>(sizes: Vec<usize>, output: Activation, rng: &mut R) -> DenseNet<T> {
    DenseNet::new(&sizes, Activation::Tanh, output, rng)
}

impl<T: Real> Agent<T> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, layout: ActionLayout, hparams: AgentHparams, rng: &mut R) -> Result<Self> {
        hparams.validate()?;
        let feat = *hparams.encoder_hidden.last().expect("validated non-empty");
        let with_hidden = |input: usize, out: usize| {
            let mut s = vec![input];
            s.extend(&hparams.head_hidden);
            s.push(out);
            s
        };
        let mut enc_sizes = vec![obs_dim];
        enc_sizes.extend(&hparams.encoder_hidden);
        let (d, k1) = (layout.num_subcarriers, layout.num_users + 1);
        let dim = layout.dim();

        let encoder: DenseNet<T> = mlp(enc_sizes, Activation::Tanh, rng);
        let q_online: DenseNet<T> = mlp(with_hidden(feat, head_output_len(d, k1)), Activation::Identity, rng);
        let critics: [DenseNet<T>; 2] = [
            mlp(with_hidden(feat + dim, 1), Activation::Identity, rng),
            mlp(with_hidden(feat + dim, 1), Activation::Identity, rng),
        ];
        let mut actor: DenseNet<T> = mlp(with_hidden(feat, 2 * dim), Activation::Identity, rng);
        actor.scale_output_layer(T::lit(0.1));

        let optimizers = AgentOptimizers {
            encoder: Adam::new(&encoder, T::lit(hparams.lr_q)),
            q: Adam::new(&q_online, T::lit(hparams.lr_q)),
            critics: [Adam::new(&critics[0], T::lit(hparams.lr_critic)), Adam::new(&critics[1], T::lit(hparams.lr_critic))],
            actor: Adam::new(&actor, T::lit(hparams.lr_actor)),
            alpha: ScalarAdam::new(T::lit(hparams.lr_alpha)),
        };
        let params = AgentParams {
            q_target: q_online.clone(),
            critic_targets: critics.clone(),
            encoder,
            q_online,
            critics,
            actor,
            log_alpha: T::lit(hparams.init_alpha.ln()),
        };
        Ok(Self { hparams, layout, obs_dim, params, optimizers })
    }

    pub fn alpha(&self) -> T {
        self.params.log_alpha.exp()
    }

    pub fn target_entropy(&self) -> T {
        T::lit(self.hparams.target_entropy.unwrap_or(-(self.layout.dim() as f64)))
    }

    fn features(&self, obs: &[f64]) -> Vec<T> {
        assert_eq!(obs.len(), self.obs_dim, "observation width mismatch");
        let x: Vec<T> = obs.iter().map(|&v| T::lit(v)).collect();
        self.params.encoder.forward_one(&x)
    }

    /// Dueling Q-values `D × (K+1)` at one observation.
    pub fn q_values(&self, obs: &[f64]) -> Array2<T> {
        let f = self.features(obs);
        dueling_q(&self.params.q_online.forward_one(&f), self.layout.num_subcarriers, self.layout.num_users + 1)
    }

    /// Exploratory action: masked ε-greedy schedule and a policy sample.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mask: ArrayView2<'_, bool>, explore_rate: f64, rng: &mut R) -> (Assignment, Vec<f64>) {
        let f = self.features(obs);
        let (d, k1) = (self.layout.num_subcarriers, self.layout.num_users + 1);
        let q = dueling_q(&self.params.q_online.forward_one(&f), d, k1);
        let x = select_discrete(q.view(), mask, explore_rate, rng);
        let out = self.params.actor.forward_one(&f);
        let dim = self.layout.dim();
        let (u, _) = sample_tanh_gaussian(&out[..dim], &out[dim..], rng);
        (x, u.iter().map(|v| v.to_f64_lossy()).collect())
    }

    /// Greedy schedule and `tanh(μ)`.
    pub fn act_deterministic(&self, obs: &[f64], mask: ArrayView2<'_, bool>) -> (Assignment, Vec<f64>) {
        let f = self.features(obs);
        let (d, k1) = (self.layout.num_subcarriers, self.layout.num_users + 1);
        let q = dueling_q(&self.params.q_online.forward_one(&f), d, k1);
        let x = greedy(q.view(), Some(mask));
        let out = self.params.actor.forward_one(&f);
        (x, out[..self.layout.dim()].iter().map(|v| v.tanh().to_f64_lossy()).collect())
    }

    /// One gradient step on every loss followed by the target updates.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<UpdateStats> {
        let hp = &self.hparams;
        let p = &self.params;
        let (d, k1) = (self.layout.num_subcarriers, self.layout.num_users + 1);
        let dim = self.layout.dim();
        let b = batch.len();
        let gamma = T::lit(hp.gamma);
        let alpha = p.log_alpha.exp();

        let enc = p.encoder.forward_cached(batch.observations.view());
        let f = enc.output().clone();
        let f_next = p.encoder.forward(batch.next_observations.view());

        let q_on = dueling_q_batch(p.q_online.forward(f_next.view()).view(), d, k1);
        let q_tg = dueling_q_batch(p.q_target.forward(f_next.view()).view(), d, k1);
        let y_d: Vec<T> = (0..b)
            .map(|i| {
                let (on, tg) = (q_on.index_axis(ndarray::Axis(0), i), q_tg.index_axis(ndarray::Axis(0), i));
                double_q_target(batch.rewards[i], on, tg, gamma, batch.terminals[i])
            })
            .collect();

        let actor_next = p.actor.forward(f_next.view());
        let mut a_next = Array2::zeros((b, dim));
        let mut logp_next = Vec::with_capacity(b);
        for i in 0..b {
            let row = actor_next.row(i).to_vec();
            let (a, lp) = sample_tanh_gaussian(&row[..dim], &row[dim..], rng);
            a_next.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
            logp_next.push(lp);
        }
        let x_next = critic_input(f_next.view(), a_next.view());
        let qt0 = p.critic_targets[0].forward(x_next.view());
        let qt1 = p.critic_targets[1].forward(x_next.view());
        let y_s: Vec<T> = (0..b)
            .map(|i| {
                let m = qt0[[i, 0]].min(qt1[[i, 0]]);
                soft_bellman_target(batch.rewards[i], gamma, batch.terminals[i], m, alpha, logp_next[i])
            })
            .collect();

        let (q_loss, q_grads, fg_q) = d3qn_head_loss(&p.q_online, f.view(), &batch.assignments, &y_d, d, k1);
        let (c_loss, c_grads, fg_c) =
            critic_head_loss([&p.critics[0], &p.critics[1]], f.view(), batch.actions.view(), &y_s);
        let (enc_grads, _) = p.encoder.backward(&enc, (fg_q + fg_c).view());

        if !(q_loss.is_finite() && c_loss.is_finite() && enc_grads.is_finite()) {
            return Err(Error::NonFinite(format!(
                "value losses diverged (q_loss={q_loss}, critic_loss={c_loss})"
            )));
        }

        let opt = &mut self.optimizers;
        let p = &mut self.params;
        opt.encoder.update(&mut p.encoder, &enc_grads);
        opt.q.update(&mut p.q_online, &q_grads);
        for j in 0..2 {
            opt.critics[j].update(&mut p.critics[j], &c_grads[j]);
        }

        let noise = Array2::from_shape_simple_fn((b, dim), || T::sample_standard_normal(rng));
        let al = actor_loss(&p.actor, [&p.critics[0], &p.critics[1]], f.view(), noise.view(), alpha);
        if !(al.loss.is_finite() && al.actor.is_finite()) {
            return Err(Error::NonFinite(format!("actor loss diverged ({})", al.loss)));
        }
        opt.actor.update(&mut p.actor, &al.actor);

        let target_entropy = T::lit(self.hparams.target_entropy.unwrap_or(-(dim as f64)));
        let (t_loss, t_grad) = temperature_loss(p.log_alpha, &al.log_probs, target_entropy);
        opt.alpha.update(&mut p.log_alpha, t_grad);

        let tau = T::lit(self.hparams.tau);
        soft_update(&mut p.q_target, &p.q_online, tau);
        for j in 0..2 {
            soft_update(&mut p.critic_targets[j], &p.critics[j], tau);
        }
        Ok(UpdateStats {
            q_loss: q_loss.to_f64_lossy(),
            critic_loss: c_loss.to_f64_lossy(),
            actor_loss: al.loss.to_f64_lossy(),
            alpha_loss: t_loss.to_f64_lossy(),
        })
    }
}
