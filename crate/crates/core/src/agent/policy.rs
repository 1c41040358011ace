//! Continuous control head: action layout, the squashed Gaussian policy,
//! and the twin-critic, actor and temperature losses.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Beamformers, IrsPhase};
use crate::config::SystemConfig;
use crate::env::{Assignment, HybridAction};
use crate::error::{Error, Result};
use crate::nn::{DenseNet, Grads};
use crate::num::Real;
use crate::vec3::Vec3;
use crate::{BeamformersD, IrsPhaseD, Vec3d, C64};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamformerMode {
    /// One beamformer per (user, subcarrier).
    Full,
    /// One direction per user, scaled per subcarrier.
    Wideband,
}

/// Continuous controls before scheduling masks and projections.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAction {
    pub w: BeamformersD,
    pub irs: IrsPhaseD,
    pub a: Vec3d,
}

impl ContinuousAction {
    pub fn into_hybrid(self, assignment: Assignment) -> HybridAction {
        HybridAction::from_raw(assignment, self.w, self.irs.coefficients(), self.a)
    }
}

/// Mapping between the squashed actor output in `(−1, 1)^dim` and
/// physical controls. Layout: beamformer block, `N_I` phases, 3 accelerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionLayout {
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub num_irs_elements: usize,
    pub mode: BeamformerMode,
}

impl ActionLayout {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self {
            num_antennas: cfg.num_bs_antennas,
            num_users: cfg.num_sus,
            num_subcarriers: cfg.num_subcarriers,
            num_irs_elements: cfg.num_irs_elements,
            mode: if cfg.full_beamformers() { BeamformerMode::Full } else { BeamformerMode::Wideband },
        }
    }

    pub fn beamformer_len(&self) -> usize {
        let (nt, k, d) = (self.num_antennas, self.num_users, self.num_subcarriers);
        match self.mode {
            BeamformerMode::Full => 2 * nt * k * d,
            BeamformerMode::Wideband => 2 * nt * k + k * d,
        }
    }

    pub fn dim(&self) -> usize {
        self.beamformer_len() + self.num_irs_elements + 3
    }

    /// Per-entry amplitude `sqrt(P_max / (2KD))`.
    pub fn entry_scale(&self, cfg: &SystemConfig) -> f64 {
        (cfg.p_max_w() / (2 * self.num_users * self.num_subcarriers) as f64).sqrt()
    }

    pub fn decode(&self, u: &[f64], cfg: &SystemConfig) -> Result<ContinuousAction> {
        if u.len() != self.dim() {
            return Err(Error::Dimension(format!("continuous action has {} entries, expected {}", u.len(), self.dim())));
        }
        let (nt, k, d) = (self.num_antennas, self.num_users, self.num_subcarriers);
        let sc = self.entry_scale(cfg);
        let mut w = Beamformers::zeros(k, d, nt);
        match self.mode {
            BeamformerMode::Full => {
                for (i, c) in w.as_array_mut().iter_mut().enumerate() {
                    *c = C64::new(sc * u[2 * i], sc * u[2 * i + 1]);
                }
            }
            BeamformerMode::Wideband => {
                let amp = &u[2 * nt * k..2 * nt * k + k * d];
                let arr = w.as_array_mut();
                for ((kk, dd, n), c) in arr.indexed_iter_mut() {
                    let base = 2 * (kk * nt + n);
                    *c = C64::new(u[base], u[base + 1]) * (sc * (1.0 + amp[kk * d + dd]));
                }
            }
        }
        let off = self.beamformer_len();
        let irs = IrsPhase::from_phases(u[off..off + self.num_irs_elements].iter().map(|&x| std::f64::consts::PI * (x + 1.0)));
        let t = &u[off + self.num_irs_elements..];
        let a = Vec3::new(t[0], t[1], t[2]).scale(cfg.a_max);
        Ok(ContinuousAction { w, irs, a })
    }

    /// Inverse of [`decode`](Self::decode); only defined for full beamformers.
    pub fn encode(&self, action: &ContinuousAction, cfg: &SystemConfig) -> Result<Vec<f64>> {
        if self.mode != BeamformerMode::Full {
            return Err(Error::domain("wideband beamformers have no inverse map"));
        }
        let sc = self.entry_scale(cfg);
        let mut u = Vec::with_capacity(self.dim());
        for c in action.w.as_array().iter() {
            u.push(c.re / sc);
            u.push(c.im / sc);
        }
        u.extend(action.irs.phases().iter().map(|p| p / std::f64::consts::PI - 1.0));
        u.extend(action.a.scale(1.0 / cfg.a_max).to_array());
        Ok(u)
    }
}

fn clamp_log_std<T: Real>(ls: T) -> T {
    ls.max(T::lit(LOG_STD_MIN)).min(T::lit(LOG_STD_MAX))
}

/// `a = tanh(μ + σξ)` and its log-density including the change of variables.
pub fn tanh_gaussian<T: Real>(mu: &[T], log_std: &[T], xi: &[T]) -> (Vec<T>, T) {
    assert!(mu.len() == log_std.len() && mu.len() == xi.len(), "policy output size mismatch");
    let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut logp = T::zero();
    let a = mu
        .iter()
        .zip(log_std)
        .zip(xi)
        .map(|((&m, &ls), &x)| {
            let ls = clamp_log_std(ls);
            let a = (m + ls.exp() * x).tanh();
            logp += -T::lit(0.5) * x * x - ls - half_ln_2pi - (T::one() - a * a + T::lit(SQUASH_EPS)).ln();
            a
        })
        .collect();
    (a, logp)
}

pub fn sample_tanh_gaussian<T: Real, R: Rng + ?Sized>(mu: &[T], log_std: &[T], rng: &mut R) -> (Vec<T>, T) {
    let xi: Vec<T> = (0..mu.len()).map(|_| T::sample_standard_normal(rng)).collect();
    tanh_gaussian(mu, log_std, &xi)
}

/// Exact 1-D density of `tanh(X)`, `X ~ N(μ, σ²)`, at `a ∈ (−1, 1)`.
pub fn squashed_log_density(a: f64, mu: f64, log_std: f64) -> f64 {
    let sigma = log_std.exp();
    let z = a.atanh();
    let t = (z - mu) / sigma;
    -0.5 * t * t - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a * a).ln()
}

/// `r + γ(min_j Q'_j − α log π')`, or `r` at a terminal.
pub fn soft_bellman_target<T: Real>(reward: T, gamma: T, terminal: bool, min_q_next: T, alpha: T, log_pi_next: T) -> T {
    if terminal {
        reward
    } else {
        reward + gamma * (min_q_next - alpha * log_pi_next)
    }
}

pub(crate) fn critic_input<T: Real>(features: ArrayView2<'_, T>, actions: ArrayView2<'_, T>) -> Array2<T> {
    concatenate(Axis(1), &[features, actions]).expect("batch sizes agree")
}

#[derive(Debug, Clone)]
pub struct CriticLoss<T: Real> {
    pub loss: T,
    pub encoder: Grads<T>,
    pub critics: [Grads<T>; 2],
}

/// `Σ_j mean_b (Q_j(s_b, u_b) − y_b)²` on precomputed features; also
/// returns the gradient with respect to the features.
pub fn critic_head_loss<T: Real>(
    critics: [&DenseNet<T>; 2],
    features: ArrayView2<'_, T>,
    actions: ArrayView2<'_, T>,
    targets: &[T],
) -> (T, [Grads<T>; 2], Array2<T>) {
    let b = features.nrows();
    assert!(actions.nrows() == b && targets.len() == b, "batch size mismatch");
    let x = critic_input(features, actions);
    let bf = T::lit(b as f64);
    let f = features.ncols();
    let mut loss = T::zero();
    let mut feat_grad = Array2::zeros(features.raw_dim());
    let mut out = Vec::with_capacity(2);
    for c in critics {
        let cache = c.forward_cached(x.view());
        let q = cache.output();
        let mut g = Array2::zeros((b, 1));
        for i in 0..b {
            let r = q[[i, 0]] - targets[i];
            loss += r * r / bf;
            g[[i, 0]] = T::lit(2.0) * r / bf;
        }
        let (grads, xg) = c.backward(&cache, g.view());
        feat_grad += &xg.slice(s![.., ..f]);
        out.push(grads);
    }
    let [g0, g1]: [Grads<T>; 2] = out.try_into().expect("two critics");
    (loss, [g0, g1], feat_grad)
}

/// Critic loss through the shared encoder; `targets` are held constant.
pub fn critic_loss<T: Real>(
    encoder: &DenseNet<T>,
    critics: [&DenseNet<T>; 2],
    observations: ArrayView2<'_, T>,
    actions: ArrayView2<'_, T>,
    targets: &[T],
) -> CriticLoss<T> {
    let enc = encoder.forward_cached(observations);
    let (loss, critic_grads, feat_grad) = critic_head_loss(critics, enc.output().view(), actions, targets);
    let (encoder_grads, _) = encoder.backward(&enc, feat_grad.view());
    CriticLoss { loss, encoder: encoder_grads, critics: critic_grads }
}

#[derive(Debug, Clone)]
pub struct ActorLoss<T: Real> {
    pub loss: T,
    pub actor: Grads<T>,
    pub log_probs: Vec<T>,
}

/// `mean_b (α log π(a_b|s_b) − min_j Q_j(s_b, a_b))` with `a_b` drawn by
/// reparameterization from the fixed standard-normal `noise`. Features
/// and critics are held constant.
pub fn actor_loss<T: Real>(
    actor: &DenseNet<T>,
    critics: [&DenseNet<T>; 2],
    features: ArrayView2<'_, T>,
    noise: ArrayView2<'_, T>,
    alpha: T,
) -> ActorLoss<T> {
    let b = features.nrows();
    let dim = noise.ncols();
    assert_eq!(actor.output_dim(), 2 * dim, "actor emits mean and log-std per action entry");
    assert_eq!(noise.nrows(), b, "batch size mismatch");
    let cache = actor.forward_cached(features);
    let out = cache.output();
    let mut actions = Array2::zeros((b, dim));
    let mut log_probs = Vec::with_capacity(b);
    for i in 0..b {
        let row = out.row(i);
        let mu: Vec<T> = row.slice(s![..dim]).to_vec();
        let ls: Vec<T> = row.slice(s![dim..]).to_vec();
        let xi: Vec<T> = noise.row(i).to_vec();
        let (a, lp) = tanh_gaussian(&mu, &ls, &xi);
        actions.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
        log_probs.push(lp);
    }

    let x = critic_input(features, actions.view());
    let caches: Vec<_> = critics.iter().map(|c| c.forward_cached(x.view())).collect();
    let bf = T::lit(b as f64);
    let mut loss = T::zero();
    let mut pick = Vec::with_capacity(b);
    for i in 0..b {
        let (q0, q1) = (caches[0].output()[[i, 0]], caches[1].output()[[i, 0]]);
        let j = usize::from(q1 < q0);
        pick.push(j);
        loss += (alpha * log_probs[i] - q0.min(q1)) / bf;
    }
    // dL/da from the selected critic of each sample.
    let mut grad_a = Array2::<T>::zeros((b, dim));
    let f = features.ncols();
    for (j, (c, cache)) in critics.iter().zip(&caches).enumerate() {
        let mut g = Array2::zeros((b, 1));
        let mut any = false;
        for i in 0..b {
            if pick[i] == j {
                g[[i, 0]] = -T::one() / bf;
                any = true;
            }
        }
        if any {
            let (_, xg) = c.backward(cache, g.view());
            grad_a += &xg.slice(s![.., f..]);
        }
    }

    let eps = T::lit(SQUASH_EPS);
    let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
    let mut g_out = Array2::zeros((b, 2 * dim));
    for i in 0..b {
        for n in 0..dim {
            let a = actions[[i, n]];
            let ls_raw = out[[i, dim + n]];
            let sigma = clamp_log_std(ls_raw).exp();
            let xi = noise[[i, n]];
            let one_m = T::one() - a * a;
            let dlogp_dz = T::lit(2.0) * a * one_m / (one_m + eps);
            let dz = grad_a[[i, n]] * one_m + alpha / bf * dlogp_dz;
            g_out[[i, n]] = dz;
            if ls_raw > lo && ls_raw < hi {
                g_out[[i, dim + n]] = dz * sigma * xi - alpha / bf;
            }
        }
    }
    let (grads, _) = actor.backward(&cache, g_out.view());
    ActorLoss { loss, actor: grads, log_probs }
}

/// `mean_b(−α (log π_b + H̄))` with `α = exp(log_alpha)`, and its derivative
/// with respect to `log_alpha` (which equals the loss itself).
pub fn temperature_loss<T: Real>(log_alpha: T, log_probs: &[T], target_entropy: T) -> (T, T) {
    let alpha = log_alpha.exp();
    let n = T::lit(log_probs.len() as f64);
    let loss = log_probs.iter().fold(T::zero(), |s, &lp| s - alpha * (lp + target_entropy)) / n;
    (loss, loss)
}
