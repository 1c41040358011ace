//! Physical and protocol constants of the simulated network.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::num::{db_to_linear, dbm_to_watts};

/// Every constant the simulator needs. Powers in dBm, noise in dBm/Hz,
/// kinematics in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub num_subcarriers: usize,
    pub num_bs_antennas: usize,
    pub num_irs_elements: usize,
    pub num_sus: usize,
    pub num_pus: usize,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub p_max_dbm: f64,
    /// Per-subcarrier interference threshold at the protected primary users.
    pub gamma_d_dbm: f64,
    pub v_max: f64,
    pub v_min: f64,
    pub a_max: f64,
    pub altitude_m: f64,
    pub slot_seconds: f64,
    pub num_slots: usize,
    pub c1: f64,
    pub c2: f64,
    pub gravity: f64,
    pub uav_mass_kg: f64,
    pub q0: [f64; 3],
    pub q_final: [f64; 3],
    /// Penalty weights for power, IRS modulus, speed, acceleration,
    /// interference and terminal distance.
    pub beta: [f64; 6],
    pub epsilon: f64,
    pub rician_k_db: f64,
    pub pathloss_exp_los: f64,
    pub pathloss_exp_nlos: f64,
    pub ema_rho: f64,

    pub bs_position: [f64; 3],
    /// Ground positions of the secondary users. Empty means "generate the
    /// default layout".
    pub su_positions: Vec<[f64; 3]>,
    pub pu_positions: Vec<[f64; 3]>,

    /// When false the reflected path is dropped from every effective channel.
    pub irs_enabled: bool,
    /// Adds a fixed primary-network interference power to the SU noise floor.
    pub include_pu_interference: bool,
    pub pu_interference_dbm: f64,
    /// Above this many subcarriers the actor switches to wideband beamformers.
    pub full_beamformer_max_subcarriers: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl SystemConfig {
    /// Full-scale constants.
    pub fn full() -> Self {
        Self {
            carrier_freq_hz: 2.5e9,
            bandwidth_hz: 10e6,
            num_subcarriers: 64,
            num_bs_antennas: 4,
            num_irs_elements: 64,
            num_sus: 4,
            num_pus: 4,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 9.0,
            p_max_dbm: 30.0,
            gamma_d_dbm: -90.0,
            v_max: 20.0,
            v_min: 3.0,
            a_max: 5.0,
            altitude_m: 100.0,
            slot_seconds: 1.0,
            num_slots: 40,
            c1: 9.26e-4,
            c2: 2250.0,
            gravity: 9.8,
            uav_mass_kg: 10.0,
            q0: [0.0, 0.0, 100.0],
            q_final: [500.0, 0.0, 100.0],
            beta: [1.0, 1.0, 1.0, 1.0, 1.0, 10.0],
            epsilon: 1e-6,
            rician_k_db: 10.0,
            pathloss_exp_los: 2.2,
            pathloss_exp_nlos: 3.5,
            ema_rho: 0.1,
            bs_position: [250.0, -150.0, 25.0],
            su_positions: Vec::new(),
            pu_positions: Vec::new(),
            irs_enabled: true,
            include_pu_interference: false,
            pu_interference_dbm: -110.0,
            full_beamformer_max_subcarriers: 8,
        }
    }

    /// Small profile that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            num_subcarriers: 4,
            num_bs_antennas: 2,
            num_irs_elements: 8,
            num_sus: 2,
            num_pus: 2,
            num_slots: 20,
            q_final: [300.0, 0.0, 100.0],
            bs_position: [150.0, -150.0, 25.0],
            ..Self::full()
        }
    }

    pub fn by_profile(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    /// Fills generated defaults (user layouts) and validates.
    pub fn resolved(mut self) -> Result<Self> {
        let q0 = self.q0;
        let qf = self.q_final;
        let along = |frac: f64| [q0[0] + frac * (qf[0] - q0[0]), q0[1] + frac * (qf[1] - q0[1])];
        if self.su_positions.is_empty() {
            // Alternating sides of the route, evenly spread along it.
            self.su_positions = (0..self.num_sus)
                .map(|k| {
                    let p = along((k as f64 + 0.5) / self.num_sus as f64);
                    let side = if k % 2 == 0 { 60.0 } else { -40.0 };
                    [p[0], p[1] + side, 0.0]
                })
                .collect();
        }
        if self.pu_positions.is_empty() {
            self.pu_positions = (0..self.num_pus)
                .map(|p| {
                    let xy = along((p as f64 + 0.5) / self.num_pus as f64);
                    [xy[0], xy[1] - 260.0, 0.0]
                })
                .collect();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive and finite, got {v}")))
            }
        }
        fn nonzero(field: &str, v: usize) -> Result<()> {
            if v > 0 {
                Ok(())
            } else {
                Err(Error::config(field, "must be at least 1"))
            }
        }
        fn finite(field: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite"))
            }
        }

        positive("carrier_freq_hz", self.carrier_freq_hz)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        nonzero("num_subcarriers", self.num_subcarriers)?;
        nonzero("num_bs_antennas", self.num_bs_antennas)?;
        nonzero("num_sus", self.num_sus)?;
        nonzero("num_pus", self.num_pus)?;
        nonzero("num_slots", self.num_slots)?;
        finite("noise_psd_dbm_hz", self.noise_psd_dbm_hz)?;
        finite("p_max_dbm", self.p_max_dbm)?;
        finite("gamma_d_dbm", self.gamma_d_dbm)?;
        finite("pu_interference_dbm", self.pu_interference_dbm)?;
        if !(self.noise_figure_db.is_finite() && self.noise_figure_db >= 0.0) {
            return Err(Error::config("noise_figure_db", "must be nonnegative"));
        }
        positive("v_max", self.v_max)?;
        positive("v_min", self.v_min)?;
        if self.v_min >= self.v_max {
            return Err(Error::config("v_min", "must be below v_max"));
        }
        positive("a_max", self.a_max)?;
        positive("altitude_m", self.altitude_m)?;
        positive("slot_seconds", self.slot_seconds)?;
        positive("c1", self.c1)?;
        positive("c2", self.c2)?;
        positive("gravity", self.gravity)?;
        positive("uav_mass_kg", self.uav_mass_kg)?;
        positive("epsilon", self.epsilon)?;
        positive("pathloss_exp_los", self.pathloss_exp_los)?;
        positive("pathloss_exp_nlos", self.pathloss_exp_nlos)?;
        if self.rician_k_db.is_nan() {
            return Err(Error::config("rician_k_db", "must not be NaN"));
        }
        if !(self.ema_rho > 0.0 && self.ema_rho <= 1.0) {
            return Err(Error::config("ema_rho", "must lie in (0, 1]"));
        }
        for (i, b) in self.beta.iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0) {
                return Err(Error::config(format!("beta[{i}]"), "must be nonnegative"));
            }
        }
        for (name, p) in [("q0", self.q0), ("q_final", self.q_final), ("bs_position", self.bs_position)] {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if (self.q0[2] - self.altitude_m).abs() > 1e-9 || (self.q_final[2] - self.altitude_m).abs() > 1e-9 {
            return Err(Error::config("q0", "q0 and q_final must sit at altitude_m"));
        }
        if self.q0 == self.q_final {
            return Err(Error::config("q_final", "must differ from q0"));
        }
        if self.su_positions.len() != self.num_sus {
            return Err(Error::config(
                "su_positions",
                format!("expected {} entries, got {}", self.num_sus, self.su_positions.len()),
            ));
        }
        if self.pu_positions.len() != self.num_pus {
            return Err(Error::config(
                "pu_positions",
                format!("expected {} entries, got {}", self.num_pus, self.pu_positions.len()),
            ));
        }
        if self.su_positions.iter().chain(&self.pu_positions).flatten().any(|c| !c.is_finite()) {
            return Err(Error::config("su_positions", "positions must be finite"));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        299_792_458.0 / self.carrier_freq_hz
    }

    pub fn subcarrier_bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz / self.num_subcarriers as f64
    }

    pub fn p_max_w(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    pub fn gamma_d_w(&self) -> f64 {
        dbm_to_watts(self.gamma_d_dbm)
    }

    pub fn noise_psd_w_hz(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz)
    }

    pub fn noise_figure_linear(&self) -> f64 {
        db_to_linear(self.noise_figure_db)
    }

    pub fn mission_seconds(&self) -> f64 {
        self.slot_seconds * self.num_slots as f64
    }

    /// Primary user protected on subcarrier `d` (0-based): round-robin.
    pub fn pu_for_subcarrier(&self, d: usize) -> usize {
        d % self.num_pus
    }

    /// True when the actor emits one beamformer per (user, subcarrier).
    pub fn full_beamformers(&self) -> bool {
        self.num_subcarriers <= self.full_beamformer_max_subcarriers
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
