//! Reference policies: uniformly random controls, a direct-link-only
//! scheme, and AO-lite, a deterministic alternating-optimization
//! heuristic over a restricted trajectory family.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::ActionLayout;
use crate::channel::{su_rate, Beamformers, Cx, IrsPhase};
use crate::config::SystemConfig;
use crate::env::{project_actions, Assignment, Env, HybridAction};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::uav::{project_acceleration, EnergyLedger, UavState};
use crate::vec3::Vec3;
use crate::{ChannelsD, IrsPhaseD, Vec3d, C64};

/// A decision rule that sees the full environment state.
pub trait Policy {
    fn name(&self) -> &str;

    /// Called once after every reset, before the first action.
    fn begin_episode(&mut self, _env: &Env) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, env: &Env) -> Result<HybridAction>;
}

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: usize,
    pub sum_rate: f64,
    pub e_prop: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub g4: f64,
    pub g5: f64,
    pub g6: f64,
    pub reward: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub speed: f64,
    pub pu_intf_max_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub trace: Vec<TraceRow>,
    pub ledger: EnergyLedger,
    pub ee_lb: f64,
    /// Mean scheduled sum rate over the slots, bits/s.
    pub mean_sum_rate: f64,
    pub max_pu_interference_dbm: f64,
    pub trajectory: Vec<UavState<f64>>,
    pub actions: Vec<HybridAction>,
}

/// Resets `env` with `seed` and plays `policy` to the horizon.
pub fn run_episode(env: &mut Env, policy: &mut dyn Policy, seed: u64) -> Result<EpisodeResult> {
    env.reset(seed)?;
    policy.begin_episode(env)?;
    play_from_current(env, policy)
}

/// Uniform schedule and uniform raw controls in `(−1, 1)`, projected.
pub fn policy_random<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<HybridAction> {
    let layout = ActionLayout::from_config(cfg);
    let x = Assignment((0..cfg.num_subcarriers).map(|_| rng.random_range(0..=cfg.num_sus)).collect());
    let u: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(project_actions(&layout.decode(&u, cfg)?.into_hybrid(x), cfg))
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, env: &Env) -> Result<HybridAction> {
        policy_random(env.config(), &mut self.rng)
    }
}

/// Maximum-ratio beamformers `w_{k,d} = sqrt(p) g_k^* / ‖g_k‖` with the
/// budget split equally over the active subcarriers. Subcarriers whose
/// assigned user has a zero channel are set idle; the returned schedule
/// reflects that.
pub fn mrt_beamformers<T: Real>(assignment: &Assignment, g_all: &[Array1<Cx<T>>], p_total: T) -> (Beamformers<T>, Assignment) {
    let k_n = g_all.len();
    let nt = g_all.first().map_or(0, |g| g.len());
    let d_n = assignment.num_subcarriers();
    let mut x = assignment.clone();
    let norms: Vec<T> = g_all.iter().map(|g| g.iter().fold(T::zero(), |s, c| s + c.norm_sqr()).sqrt()).collect();
    for row in x.0.iter_mut() {
        if *row > 0 && norms[*row - 1] == T::zero() {
            *row = 0;
        }
    }
    let mut w = Beamformers::zeros(k_n, d_n, nt);
    let active = x.num_active();
    if active == 0 {
        return (w, x);
    }
    let amp = (p_total / T::lit(active as f64)).sqrt();
    for d in 0..d_n {
        if let Some(k) = x.user_on(d) {
            let dir: Vec<Cx<T>> = g_all[k].iter().map(|c| c.conj() * (amp / norms[k])).collect();
            w.set(k, d, &dir);
        }
    }
    (w, x)
}

/// Co-phases every cascaded term with the direct term for beamformer `w`:
/// `θ_ℓ = arg(h_d^H w) − arg(h_{r,ℓ}^* (H w)_ℓ)`. A zero direct term is
/// treated as phase 0.
pub fn align_irs_phases<T: Real>(
    h_direct: ArrayView1<'_, Cx<T>>,
    h_reflect: ArrayView1<'_, Cx<T>>,
    h_bs_irs: &Array2<Cx<T>>,
    w: ArrayView1<'_, Cx<T>>,
) -> IrsPhase<T> {
    let direct = h_direct.iter().zip(w.iter()).fold(Cx::new(T::zero(), T::zero()), |s, (h, w)| s + h.conj() * *w);
    let target = if direct.norm_sqr() == T::zero() { T::zero() } else { direct.arg() };
    let hw = h_bs_irs.dot(&w);
    IrsPhase::from_phases(h_reflect.iter().zip(hw.iter()).map(|(hr, x)| {
        let c = hr.conj() * *x;
        if c.norm_sqr() == T::zero() {
            T::zero()
        } else {
            target - c.arg()
        }
    }))
}

/// Greedy schedule: every subcarrier goes to the user with the highest
/// single-user MRT rate at power `P_max / D` (lowest index on ties);
/// idle if no user has a channel.
pub fn greedy_assignment(cfg: &SystemConfig, ch: &ChannelsD, g_all: &[Array1<C64>]) -> Assignment {
    let p = cfg.p_max_w() / cfg.num_subcarriers as f64;
    let rows = (0..cfg.num_subcarriers)
        .map(|d| {
            let mut best = (0usize, 0.0f64);
            for (k, g) in g_all.iter().enumerate() {
                let gain: f64 = g.iter().map(|c| c.norm_sqr()).sum();
                let r = su_rate(p * gain / ch.noise_var_w[[k, d]], cfg.bandwidth_hz, cfg.num_subcarriers);
                if r > best.1 {
                    best = (k + 1, r);
                }
            }
            best.0
        })
        .collect();
    Assignment(rows)
}

/// Per-slot communication controls: `inner_iters` rounds of (align IRS to
/// the strongest scheduled user, then greedy schedule and MRT), starting
/// from schedule and MRT at unit IRS coefficients.
pub fn slot_comms(cfg: &SystemConfig, ch: &ChannelsD, inner_iters: usize) -> (Assignment, Beamformers<f64>, IrsPhaseD) {
    let mut irs = IrsPhase::zeros(cfg.num_irs_elements);
    let mrt = |irs: &IrsPhaseD| {
        let g = ch.su_effective(irs, cfg.irs_enabled);
        let x = greedy_assignment(cfg, ch, &g);
        let (w, x) = mrt_beamformers(&x, &g, cfg.p_max_w());
        (x, w, g)
    };
    let (mut x, mut w, mut g) = mrt(&irs);
    if !cfg.irs_enabled || cfg.num_irs_elements == 0 {
        return (x, w, irs);
    }
    for _ in 0..inner_iters {
        let strongest = (0..cfg.num_subcarriers)
            .filter_map(|d| x.user_on(d).map(|k| (k, d)))
            .max_by(|a, b| {
                let ga: f64 = g[a.0].iter().map(|c| c.norm_sqr()).sum();
                let gb: f64 = g[b.0].iter().map(|c| c.norm_sqr()).sum();
                ga.total_cmp(&gb).then(b.cmp(a))
            });
        let Some((k, d)) = strongest else { break };
        irs = align_irs_phases(ch.h_bs_su[k].view(), ch.h_irs_su[k].view(), &ch.h_bs_irs, w.get(k, d));
        (x, w, g) = mrt(&irs);
    }
    (x, w, irs)
}

/// Constant-speed pursuit of a point moving along a polyline from `q0`
/// to `qF`. The speed is the path length over the mission time, clamped
/// to the admissible range.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTracker {
    waypoints: Vec<Vec3d>,
    speed: f64,
}

impl PathTracker {
    pub fn new(cfg: &SystemConfig, via: &[Vec3d]) -> Self {
        let mut waypoints = vec![Vec3::from_array(cfg.q0)];
        waypoints.extend_from_slice(via);
        waypoints.push(Vec3::from_array(cfg.q_final));
        let length: f64 = waypoints.windows(2).map(|w| w[0].distance(w[1])).sum();
        let speed = (length / cfg.mission_seconds()).clamp(cfg.v_min, cfg.v_max);
        Self { waypoints, speed }
    }

    pub fn straight(cfg: &SystemConfig) -> Self {
        Self::new(cfg, &[])
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    fn point_at(&self, arc: f64) -> Vec3d {
        let mut left = arc;
        for w in self.waypoints.windows(2) {
            let seg = w[0].distance(w[1]);
            if left <= seg && seg > 0.0 {
                return w[0] + (w[1] - w[0]).scale(left / seg);
            }
            left -= seg;
        }
        *self.waypoints.last().expect("two endpoints")
    }

    /// Acceleration command for the current slot.
    pub fn acceleration(&self, env: &Env) -> Vec3d {
        let cfg = env.config();
        let dt = cfg.slot_seconds;
        let uav = env.uav();
        let target = self.point_at(self.speed * dt * (env.slot() + 1) as f64);
        let mut v_des = (target - uav.q).horizontal().scale(1.0 / dt);
        let s = v_des.norm();
        if s == 0.0 {
            v_des = uav.v;
        } else if s > cfg.v_max {
            v_des = v_des.scale(cfg.v_max / s);
        } else if s < cfg.v_min {
            v_des = v_des.scale(cfg.v_min / s);
        }
        project_acceleration((v_des - uav.v).horizontal().scale(1.0 / dt), cfg.a_max)
    }
}

/// Direct links only: greedy schedule, MRT on the direct channels with an
/// equal power split, straight flight at constant speed. Expects an
/// environment whose config has `irs_enabled = false`.
pub fn policy_no_irs(env: &Env, tracker: &PathTracker) -> HybridAction {
    let cfg = env.config();
    let (x, w, irs) = slot_comms(cfg, env.channels(), 0);
    HybridAction::from_raw(x, w, irs.coefficients(), tracker.acceleration(env))
}

/// Config for the direct-link-only scheme.
pub fn no_irs_config(cfg: &SystemConfig) -> SystemConfig {
    SystemConfig { irs_enabled: false, ..cfg.clone() }
}

#[derive(Debug, Clone, Default)]
pub struct NoIrsPolicy {
    tracker: Option<PathTracker>,
}

impl NoIrsPolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for NoIrsPolicy {
    fn name(&self) -> &str {
        "no_irs"
    }

    fn begin_episode(&mut self, env: &Env) -> Result<()> {
        if env.config().irs_enabled {
            return Err(Error::config("irs_enabled", "the no-IRS baseline needs the reflected path disabled"));
        }
        self.tracker = Some(PathTracker::straight(env.config()));
        Ok(())
    }

    fn act(&mut self, env: &Env) -> Result<HybridAction> {
        let tracker = self.tracker.get_or_insert_with(|| PathTracker::straight(env.config()));
        Ok(policy_no_irs(env, tracker))
    }
}

/// The free coordinates of AO-lite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoPlan {
    /// Optional mid-route waypoint; `None` flies straight.
    pub waypoint: Option<[f64; 3]>,
    /// Alternations between IRS alignment and schedule/MRT per slot.
    pub inner_iters: usize,
}

#[derive(Debug, Clone)]
struct PlanPolicy {
    plan: AoPlan,
    tracker: PathTracker,
}

impl PlanPolicy {
    fn new(cfg: &SystemConfig, plan: AoPlan) -> Self {
        let via: Vec<Vec3d> = plan.waypoint.iter().map(|w| Vec3::from_array(*w)).collect();
        Self { tracker: PathTracker::new(cfg, &via), plan }
    }
}

impl Policy for PlanPolicy {
    fn name(&self) -> &str {
        "ao_lite"
    }

    fn act(&mut self, env: &Env) -> Result<HybridAction> {
        let (x, w, irs) = slot_comms(env.config(), env.channels(), self.plan.inner_iters);
        Ok(HybridAction::from_raw(x, w, irs.coefficients(), self.tracker.acceleration(env)))
    }
}

/// Waypoint grid: three positions along the route, five lateral offsets.
pub fn waypoint_grid(cfg: &SystemConfig) -> Vec<[f64; 3]> {
    let (q0, qf) = (Vec3::from_array(cfg.q0), Vec3::from_array(cfg.q_final));
    let route = qf - q0;
    let len = route.horizontal().norm();
    let normal = Vec3::new(-route.y, route.x, 0.0).scale(1.0 / len);
    let mut out = Vec::new();
    for frac in [0.25, 0.5, 0.75] {
        for off in [-0.4, -0.2, 0.0, 0.2, 0.4] {
            out.push((q0 + route.scale(frac) + normal.scale(off * len)).to_array());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoLiteResult {
    pub plan: AoPlan,
    /// EE after each completed round; nondecreasing.
    pub ee_history: Vec<f64>,
    pub episode: EpisodeResult,
}

impl AoLiteResult {
    pub fn ee_lb(&self) -> f64 {
        self.episode.ee_lb
    }

    pub fn trajectory(&self) -> &[UavState<f64>] {
        &self.episode.trajectory
    }
}

/// Coordinate ascent from a freshly reset environment. Round one flies
/// straight with one schedule/MRT pass and one IRS alignment. Each later
/// round tries one more per-slot alternation and every grid waypoint, and
/// keeps the best candidate only if it raises EE. Candidate trajectories
/// are scored on this episode's own channel sequence.
fn ao_plan(env: &Env, num_rounds: usize) -> Result<(AoPlan, Vec<f64>, EpisodeResult)> {
    if num_rounds == 0 {
        return Err(Error::domain("AO-lite needs at least one round"));
    }
    let cfg = env.config().clone();
    let evaluate = |plan: &AoPlan| -> Result<EpisodeResult> {
        let mut e = env.clone();
        let mut p = PlanPolicy::new(&cfg, plan.clone());
        play_from_current(&mut e, &mut p)
    };
    let mut plan = AoPlan { waypoint: None, inner_iters: 1 };
    let mut best = evaluate(&plan)?;
    let mut history = vec![best.ee_lb];
    let irs_active = cfg.irs_enabled && cfg.num_irs_elements > 0;
    for _ in 1..num_rounds {
        let mut candidates = Vec::new();
        if irs_active {
            candidates.push(AoPlan { inner_iters: plan.inner_iters + 1, ..plan.clone() });
        }
        for wp in waypoint_grid(&cfg) {
            if plan.waypoint != Some(wp) {
                candidates.push(AoPlan { waypoint: Some(wp), ..plan.clone() });
            }
        }
        let mut improved = None;
        for c in candidates {
            let r = evaluate(&c)?;
            let bar = improved.as_ref().map_or(best.ee_lb, |(_, b): &(AoPlan, EpisodeResult)| b.ee_lb);
            if r.ee_lb > bar {
                improved = Some((c, r));
            }
        }
        match improved {
            Some((c, r)) => {
                plan = c;
                best = r;
                history.push(best.ee_lb);
            }
            None => break,
        }
    }
    Ok((plan, history, best))
}

/// Plays to the horizon without resetting.
pub fn play_from_current(env: &mut Env, policy: &mut dyn Policy) -> Result<EpisodeResult> {
    let mut trace = Vec::new();
    let mut actions = Vec::new();
    let mut max_intf = f64::NEG_INFINITY;
    while !env.is_done() {
        let action = policy.act(env)?;
        let out = env.step(&action)?;
        let i = &out.info;
        let g = i.penalties.as_array();
        let intf = i.pu_interference_max_dbm();
        max_intf = max_intf.max(intf);
        trace.push(TraceRow {
            slot: i.slot,
            sum_rate: i.sum_rate,
            e_prop: i.e_prop,
            g1: g[0],
            g2: g[1],
            g3: g[2],
            g4: g[3],
            g5: g[4],
            g6: g[5],
            reward: out.reward,
            qx: i.q.x,
            qy: i.q.y,
            qz: i.q.z,
            speed: i.speed,
            pu_intf_max_dbm: intf,
        });
        actions.push(action);
    }
    let ledger = *env.ledger();
    let mean_sum_rate = trace.iter().map(|r| r.sum_rate).sum::<f64>() / trace.len().max(1) as f64;
    Ok(EpisodeResult {
        ee_lb: ledger.ee_lb()?,
        trace,
        ledger,
        mean_sum_rate,
        max_pu_interference_dbm: max_intf,
        trajectory: env.trajectory().to_vec(),
        actions,
    })
}

/// Runs AO-lite for `num_rounds` rounds on the episode with env seed `seed`.
pub fn ao_lite(cfg: &SystemConfig, seed: u64, num_rounds: usize) -> Result<AoLiteResult> {
    let mut env = Env::new(cfg.clone())?;
    env.reset(seed)?;
    let (plan, ee_history, episode) = ao_plan(&env, num_rounds)?;
    Ok(AoLiteResult { plan, ee_history, episode })
}

/// AO-lite as a [`Policy`]: plans at the start of each episode, then
/// replays the chosen plan.
#[derive(Debug, Clone)]
pub struct AoLitePolicy {
    rounds: usize,
    current: Option<PlanPolicy>,
}

impl AoLitePolicy {
    pub fn new(rounds: usize) -> Self {
        Self { rounds, current: None }
    }
}

impl Policy for AoLitePolicy {
    fn name(&self) -> &str {
        "ao_lite"
    }

    fn begin_episode(&mut self, env: &Env) -> Result<()> {
        let (plan, _, _) = ao_plan(env, self.rounds)?;
        self.current = Some(PlanPolicy::new(env.config(), plan));
        Ok(())
    }

    fn act(&mut self, env: &Env) -> Result<HybridAction> {
        match &mut self.current {
            Some(p) => p.act(env),
            None => Err(Error::domain("AO-lite acts only after begin_episode")),
        }
    }
}
