//! The constrained MDP: observation encoding, action projection,
//! constraint penalties, reward and the slot transition.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_channels, Beamformers, Geometry, IrsPhase};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::num::{pos_part, watts_to_dbm};
use crate::uav::{
    project_acceleration, project_velocity_with_heading, propulsion_integrand_exact, propulsion_integrand_ub,
    step_kinematics, Aero, EnergyLedger, UavState,
};
use crate::vec3::Vec3;
use crate::{BeamformersD, ChannelsD, IrsPhaseD, UavStateD, Vec3d, C64};

/// Subcarrier schedule: entry `d` is 0 for idle or `k+1` for user `k`.
/// One entry per subcarrier makes every column one-hot by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn idle(num_subcarriers: usize) -> Self {
        Self(vec![0; num_subcarriers])
    }

    /// Builds from a `(K+1) × D` binary matrix; every column must hold exactly one 1.
    pub fn from_matrix(x: &Array2<u8>) -> Result<Self> {
        let mut out = Vec::with_capacity(x.ncols());
        for (d, col) in x.columns().into_iter().enumerate() {
            let ones: Vec<_> = col.iter().enumerate().filter(|(_, &v)| v != 0).collect();
            if ones.len() != 1 || *ones[0].1 != 1 {
                return Err(Error::Dimension(format!("subcarrier {d} is not one-hot")));
            }
            out.push(ones[0].0);
        }
        Ok(Self(out))
    }

    pub fn to_matrix(&self, num_users: usize) -> Array2<u8> {
        let mut x = Array2::zeros((num_users + 1, self.0.len()));
        for (d, &row) in self.0.iter().enumerate() {
            x[[row, d]] = 1;
        }
        x
    }

    /// 0-based user scheduled on subcarrier `d`, if any.
    pub fn user_on(&self, d: usize) -> Option<usize> {
        self.0[d].checked_sub(1)
    }

    pub fn num_subcarriers(&self) -> usize {
        self.0.len()
    }

    pub fn num_active(&self) -> usize {
        self.0.iter().filter(|&&r| r != 0).count()
    }
}

/// Discrete schedule plus continuous controls, in raw and projected form.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridAction {
    pub assignment: Assignment,
    pub w_raw: BeamformersD,
    pub w: BeamformersD,
    pub phi_raw: Vec<C64>,
    pub phi: IrsPhaseD,
    pub a_raw: Vec3d,
    pub a: Vec3d,
}

impl HybridAction {
    /// Unprojected action. Beamformers of users not scheduled on a
    /// subcarrier are zeroed: they do not transmit there.
    pub fn from_raw(assignment: Assignment, mut w_raw: BeamformersD, phi_raw: Vec<C64>, a_raw: Vec3d) -> Self {
        assert_eq!(assignment.num_subcarriers(), w_raw.num_subcarriers(), "schedule/beamformer size mismatch");
        let users = w_raw.num_users();
        for (d, &row) in assignment.0.iter().enumerate() {
            assert!(row <= users, "schedule row {row} exceeds user count {users}");
            for k in 0..users {
                if row != k + 1 {
                    w_raw.as_array_mut().slice_mut(ndarray::s![k, d, ..]).fill(C64::new(0.0, 0.0));
                }
            }
        }
        let phi = IrsPhase::from_coefficients(&phi_raw);
        Self {
            assignment,
            w: w_raw.clone(),
            w_raw,
            phi,
            phi_raw,
            a: a_raw,
            a_raw,
        }
    }

    /// True when every projected control lies in its feasible set.
    pub fn is_feasible(&self, cfg: &SystemConfig) -> bool {
        let tol = 1e-9;
        self.w.total_power() <= cfg.p_max_w() * (1.0 + tol)
            && self.phi.coefficients().iter().all(|c| (c.norm() - 1.0).abs() < tol)
            && self.a.norm() <= cfg.a_max * (1.0 + tol)
    }
}

/// Projects each raw control onto its feasible set. The schedule and raw
/// fields are carried through unchanged.
pub fn project_actions(raw: &HybridAction, cfg: &SystemConfig) -> HybridAction {
    let p_max = cfg.p_max_w();
    let total = raw.w_raw.total_power();
    let w = if total > p_max {
        // Rounding can leave the rescaled power an ulp above the budget.
        let mut s = (p_max / total).sqrt();
        let mut w = raw.w_raw.scaled(s);
        while w.total_power() > p_max {
            s *= 1.0 - f64::EPSILON;
            w = raw.w_raw.scaled(s);
        }
        w
    } else {
        raw.w_raw.clone()
    };
    HybridAction {
        assignment: raw.assignment.clone(),
        w_raw: raw.w_raw.clone(),
        w,
        phi_raw: raw.phi_raw.clone(),
        phi: IrsPhase::from_coefficients(&raw.phi_raw),
        a_raw: raw.a_raw,
        a: project_acceleration(raw.a_raw.horizontal(), cfg.a_max),
    }
}

/// `S = Σ_d Σ_k x_{k,d} R_{k,d}`
pub fn scheduled_sum_rate(x: &Assignment, rates: &Array2<f64>) -> f64 {
    assert_eq!(x.num_subcarriers(), rates.ncols(), "schedule/rate size mismatch");
    x.0.iter()
        .enumerate()
        .map(|(d, &row)| {
            assert!(row <= rates.nrows(), "schedule row out of range");
            if row == 0 {
                0.0
            } else {
                rates[[row - 1, d]]
            }
        })
        .sum()
}

/// Normalised constraint violations, all `≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Penalties {
    pub power: f64,
    pub irs: f64,
    pub speed: f64,
    pub accel: f64,
    pub interference: f64,
    pub terminal: f64,
}

impl Penalties {
    pub fn as_array(&self) -> [f64; 6] {
        [self.power, self.irs, self.speed, self.accel, self.interference, self.terminal]
    }
}

/// Penalties for one slot. Power, modulus, speed and acceleration are
/// measured on the raw commands; interference on the transmitted (projected)
/// signal. `uav` is the state at the start of the slot; the commanded
/// velocity is `v + a_raw·δ_t` before any projection.
pub fn compute_penalties(action: &HybridAction, uav: &UavStateD, channels: &ChannelsD, cfg: &SystemConfig, is_terminal: bool) -> Penalties {
    let p_max = cfg.p_max_w();
    let power = pos_part(action.w_raw.total_power() - p_max) / p_max;

    let irs = if action.phi_raw.is_empty() {
        0.0
    } else {
        // A unit coefficient built from an angle can have modulus 1 + 1 ulp.
        let tol = 4.0 * f64::EPSILON;
        action.phi_raw.iter().map(|c| pos_part(c.norm() - 1.0 - tol)).sum::<f64>() / action.phi_raw.len() as f64
    };

    let a_cmd = action.a_raw.horizontal();
    let speed_cmd = (uav.v + a_cmd * cfg.slot_seconds).norm();
    let speed = pos_part(speed_cmd - cfg.v_max) / cfg.v_max + pos_part(cfg.v_min - speed_cmd) / cfg.v_min;
    let accel = pos_part(a_cmd.norm() - cfg.a_max) / cfg.a_max;

    let gamma = cfg.gamma_d_w();
    let interference = channels
        .pu_interference(cfg, &action.phi, &action.w)
        .into_iter()
        .map(|i| pos_part(i - gamma) / gamma)
        .fold(0.0, f64::max);

    let terminal = if is_terminal {
        let q_end = uav.q + uav.v * cfg.slot_seconds;
        let q0 = Vec3::from_array(cfg.q0);
        let qf = Vec3::from_array(cfg.q_final);
        (q_end - qf).norm() / ((qf - q0).norm() + cfg.epsilon)
    } else {
        0.0
    };

    Penalties {
        power,
        irs,
        speed,
        accel,
        interference,
        terminal,
    }
}

/// `S/(e_prop+ε) − Σ_{i≤5} β_i G_i − [terminal]·β_6·G_term`
pub fn reward(sum_rate: f64, e_prop_ub: f64, penalties: &Penalties, beta: &[f64; 6], epsilon: f64, is_terminal: bool) -> f64 {
    debug_assert!(e_prop_ub >= 0.0);
    let g = penalties.as_array();
    let mut r = sum_rate / (e_prop_ub + epsilon);
    for i in 0..5 {
        r -= beta[i] * g[i];
    }
    if is_terminal {
        r -= beta[5] * g[5];
    }
    r
}

/// Flattened state vector.
///
/// Layout: `H_{b,R}` row-major, then `h_{r,k}` for each SU, `h_{d,k}` for
/// each SU, the effective BS→PU channels under the previous IRS phases
/// (complex entries as `re, im` pairs, each link divided by its
/// geometric path-loss amplitude), previous IRS phases mapped to
/// `[-1, 1)`, position offset from `q0` over the route length, velocity
/// over `v_max`, acceleration over `a_max`, the EE moving average over
/// its nominal scale and the slot over `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub slot: usize,
}

pub fn observation_len(cfg: &SystemConfig) -> usize {
    let (ni, nt, k, dp) = (cfg.num_irs_elements, cfg.num_bs_antennas, cfg.num_sus, cfg.num_pus);
    2 * (ni * nt + k * ni + k * nt + dp * nt) + ni + 9 + 1 + 1
}

/// Propulsion power at `v_max` in level unaccelerated flight.
pub fn reference_power_w(cfg: &SystemConfig) -> f64 {
    cfg.c1 * cfg.v_max.powi(3) + cfg.c2 / cfg.v_max
}

/// Order of magnitude of the per-slot EE proxy (bits per joule).
pub fn ee_scale(cfg: &SystemConfig) -> f64 {
    cfg.bandwidth_hz / reference_power_w(cfg)
}

pub fn encode_observation(
    cfg: &SystemConfig,
    channels: &ChannelsD,
    irs_prev: &IrsPhaseD,
    uav: &UavStateD,
    ee_ema: f64,
    slot: usize,
) -> Observation {
    let mut f = Vec::with_capacity(observation_len(cfg));
    let push = |f: &mut Vec<f64>, c: &C64, s: f64| {
        f.push(c.re / s);
        f.push(c.im / s);
    };
    let sc = &channels.scales;
    for c in channels.h_bs_irs.iter() {
        push(&mut f, c, sc.bs_irs);
    }
    for (h, s) in channels.h_irs_su.iter().zip(&sc.irs_su) {
        h.iter().for_each(|c| push(&mut f, c, *s));
    }
    for (h, s) in channels.h_bs_su.iter().zip(&sc.bs_su) {
        h.iter().for_each(|c| push(&mut f, c, *s));
    }
    for (h, s) in channels.pu_effective(irs_prev, cfg.irs_enabled).iter().zip(&sc.bs_pu) {
        h.iter().for_each(|c| push(&mut f, c, *s));
    }
    f.extend(irs_prev.phases().iter().map(|p| p / std::f64::consts::PI - 1.0));

    let q0 = Vec3::from_array(cfg.q0);
    let route = (Vec3::from_array(cfg.q_final) - q0).norm();
    let dq = uav.q - q0;
    f.extend(dq.scale(1.0 / route).to_array());
    f.extend(uav.v.scale(1.0 / cfg.v_max).to_array());
    f.extend(uav.a.scale(1.0 / cfg.a_max).to_array());
    f.push(ee_ema / ee_scale(cfg));
    f.push(slot as f64 / cfg.num_slots as f64);
    Observation { features: f, slot }
}

/// Per-slot diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub slot: usize,
    pub sum_rate: f64,
    pub e_prop: f64,
    pub penalties: Penalties,
    pub rates: Array2<f64>,
    pub pu_interference_w: Vec<f64>,
    /// Position and speed at the start of the slot.
    pub q: Vec3d,
    pub speed: f64,
    pub reward: f64,
}

impl StepInfo {
    pub fn pu_interference_max_dbm(&self) -> f64 {
        let m = self.pu_interference_w.iter().copied().fold(0.0, f64::max);
        watts_to_dbm(m)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_observation: Observation,
    pub terminal: bool,
    pub info: StepInfo,
}

/// One environment instance; single-threaded episode state.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: SystemConfig,
    geometry: Geometry<f64>,
    aero: Aero<f64>,
    rng: ChaCha8Rng,
    uav: UavStateD,
    v0: Vec3d,
    channels: ChannelsD,
    irs_prev: IrsPhaseD,
    ee_ema: f64,
    slot: usize,
    ledger: EnergyLedger,
    trajectory: Vec<UavStateD>,
    done: bool,
}

impl Env {
    /// Resolves the config and resets with seed 0.
    pub fn new(cfg: SystemConfig) -> Result<Self> {
        let cfg = cfg.resolved()?;
        let geometry = Geometry::from_config(&cfg);
        let aero = Aero { c1: cfg.c1, c2: cfg.c2, g: cfg.gravity };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q0 = Vec3::from_array(cfg.q0);
        let uav = UavState { q: q0, v: Vec3::zero(), a: Vec3::zero() };
        let channels = generate_channels(&cfg, &geometry, q0, &mut rng)?;
        let mut env = Self {
            irs_prev: IrsPhase::zeros(cfg.num_irs_elements),
            cfg,
            geometry,
            aero,
            rng,
            uav,
            v0: Vec3::zero(),
            channels,
            ee_ema: 0.0,
            slot: 0,
            ledger: EnergyLedger::default(),
            trajectory: Vec::new(),
            done: false,
        };
        env.reset(0)?;
        Ok(env)
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let q0 = Vec3::from_array(self.cfg.q0);
        let heading = (Vec3::from_array(self.cfg.q_final) - q0).horizontal();
        if heading.norm() == 0.0 {
            return Err(Error::config("q_final", "must differ horizontally from q0"));
        }
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.v0 = heading * (self.cfg.v_min / heading.norm());
        self.uav = UavState { q: q0, v: self.v0, a: Vec3::zero() };
        self.channels = generate_channels(&self.cfg, &self.geometry, q0, &mut self.rng)?;
        self.irs_prev = IrsPhase::zeros(self.cfg.num_irs_elements);
        self.ee_ema = 0.0;
        self.slot = 0;
        self.ledger = EnergyLedger::default();
        self.trajectory.clear();
        self.done = false;
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation {
        encode_observation(&self.cfg, &self.channels, &self.irs_prev, &self.uav, self.ee_ema, self.slot)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry<f64> {
        &self.geometry
    }

    pub fn channels(&self) -> &ChannelsD {
        &self.channels
    }

    pub fn uav(&self) -> &UavStateD {
        &self.uav
    }

    pub fn irs_prev(&self) -> &IrsPhaseD {
        &self.irs_prev
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Flown states; after the last slot it also holds the terminal state.
    pub fn trajectory(&self) -> &[UavStateD] {
        &self.trajectory
    }

    /// Allowed schedule entries, `D × (K+1)`. Idle is always allowed;
    /// users whose effective channel vanishes are masked out.
    pub fn action_mask(&self) -> Array2<bool> {
        let g = self.channels.su_effective(&self.irs_prev, self.cfg.irs_enabled);
        let mut m = Array2::from_elem((self.cfg.num_subcarriers, self.cfg.num_sus + 1), true);
        for (k, gk) in g.iter().enumerate() {
            if gk.iter().all(|c| c.norm_sqr() == 0.0) {
                m.column_mut(k + 1).fill(false);
            }
        }
        m
    }

    /// Advances one slot. The action is projected here whether or not the
    /// caller already did so (projection is idempotent).
    pub fn step(&mut self, action: &HybridAction) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::domain("episode already finished; call reset"));
        }
        let cfg = &self.cfg;
        let dt = cfg.slot_seconds;
        let act = project_actions(action, cfg);
        let terminal = self.slot + 1 == cfg.num_slots;

        let rates = self.channels.rates(cfg, &act.phi, &act.w);
        let sum_rate = scheduled_sum_rate(&act.assignment, &rates);
        let e_prop = propulsion_integrand_ub(self.uav.v, act.a, self.aero)?;
        let e_exact = propulsion_integrand_exact(self.uav.v, act.a, self.aero)?;
        let penalties = compute_penalties(&act, &self.uav, &self.channels, cfg, terminal);
        let r = reward(sum_rate, e_prop, &penalties, &cfg.beta, cfg.epsilon, terminal);
        if !r.is_finite() {
            return Err(Error::NonFinite("reward".into()));
        }
        let pu_interference_w = self.channels.pu_interference(cfg, &act.phi, &act.w);

        self.ledger.bits_total += sum_rate * dt;
        self.ledger.e_ub_j += e_prop * dt;
        self.ledger.e_exact_j += e_exact * dt;

        let flown = UavState { a: act.a, ..self.uav };
        self.trajectory.push(flown);
        let mut next = step_kinematics(&flown, act.a, dt);
        next.v = project_velocity_with_heading(next.v, flown.v, cfg.v_min, cfg.v_max);
        self.uav = next;

        if terminal {
            let kinetic = 0.5 * cfg.uav_mass_kg * (next.v.norm_sq() - self.v0.norm_sq());
            self.ledger.kinetic_j = kinetic;
            self.ledger.e_exact_j += kinetic;
            self.trajectory.push(UavState { a: Vec3::zero(), ..next });
            self.done = true;
        }

        let rho = cfg.ema_rho;
        self.ee_ema = (1.0 - rho) * self.ee_ema + rho * sum_rate / (e_prop + cfg.epsilon);
        self.irs_prev = act.phi.clone();
        let info = StepInfo {
            slot: self.slot,
            sum_rate,
            e_prop,
            penalties,
            rates,
            pu_interference_w,
            q: flown.q,
            speed: flown.v.norm(),
            reward: r,
        };
        self.slot += 1;
        self.channels = generate_channels(&self.cfg, &self.geometry, self.uav.q, &mut self.rng)?;
        Ok(StepOutcome {
            reward: r,
            next_observation: self.observe(),
            terminal,
            info,
        })
    }
}

/// Idle schedule, zero beamformers, unit IRS coefficients, no acceleration.
pub fn null_action(cfg: &SystemConfig) -> HybridAction {
    HybridAction::from_raw(
        Assignment::idle(cfg.num_subcarriers),
        Beamformers::zeros(cfg.num_sus, cfg.num_subcarriers, cfg.num_bs_antennas),
        vec![C64::new(1.0, 0.0); cfg.num_irs_elements],
        Vec3::zero(),
    )
}
