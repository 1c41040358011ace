//! Geometry-driven channel generation and per-subcarrier link metrics.
//!
//! Row channels are stored as the entries of `g^H` directly, so the
//! received amplitude for a beamformer `w` is the plain sum `Σ_n g[n]·w[n]`.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::num::Real;
use crate::vec3::Vec3;

pub type Cx<T> = Complex<T>;

/// IRS phase configuration: one phase per element, wrapped into `[0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct IrsPhase<T: Real> {
    phases: Vec<T>,
}

impl<T: Real> IrsPhase<T> {
    pub fn from_phases(phases: impl IntoIterator<Item = T>) -> Self {
        let two_pi = T::TAU();
        let phases = phases
            .into_iter()
            .map(|p| {
                let mut w = p % two_pi;
                if w < T::zero() {
                    w += two_pi;
                }
                // `x % 2π` can land exactly on 2π after the correction above.
                if w >= two_pi {
                    w = T::zero();
                }
                w
            })
            .collect();
        Self { phases }
    }

    /// All coefficients equal to one.
    pub fn zeros(n: usize) -> Self {
        Self {
            phases: vec![T::zero(); n],
        }
    }

    /// Radial projection onto the unit circle. A zero coefficient maps to `1`.
    pub fn from_coefficients(coeffs: &[Cx<T>]) -> Self {
        Self::from_phases(coeffs.iter().map(|c| {
            if c.norm_sqr() == T::zero() {
                T::zero()
            } else {
                c.arg()
            }
        }))
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[T] {
        &self.phases
    }

    pub fn coefficients(&self) -> Vec<Cx<T>> {
        self.phases.iter().map(|&p| Cx::from_polar(T::one(), p)).collect()
    }
}

/// Transmit beamformers indexed by (user, subcarrier, antenna).
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformers<T: Real> {
    data: Array3<Cx<T>>,
}

impl<T: Real> Beamformers<T> {
    pub fn zeros(num_users: usize, num_subcarriers: usize, num_antennas: usize) -> Self {
        Self {
            data: Array3::from_elem((num_users, num_subcarriers, num_antennas), Cx::new(T::zero(), T::zero())),
        }
    }

    pub fn from_array(data: Array3<Cx<T>>) -> Self {
        Self { data }
    }

    pub fn num_users(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_subcarriers(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_antennas(&self) -> usize {
        self.data.dim().2
    }

    pub fn get(&self, k: usize, d: usize) -> ArrayView1<'_, Cx<T>> {
        self.data.slice(ndarray::s![k, d, ..])
    }

    pub fn set(&mut self, k: usize, d: usize, w: &[Cx<T>]) {
        for (dst, src) in self.data.slice_mut(ndarray::s![k, d, ..]).iter_mut().zip(w) {
            *dst = *src;
        }
    }

    pub fn as_array(&self) -> &Array3<Cx<T>> {
        &self.data
    }

    pub fn as_array_mut(&mut self) -> &mut Array3<Cx<T>> {
        &mut self.data
    }

    /// `Σ_{k,d} ‖w_{k,d}‖²`
    pub fn total_power(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, c| acc + c.norm_sqr())
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            data: self.data.mapv(|c| c * s),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Geometry-predicted amplitude `sqrt(PL(d))` for every link of a realization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScales<T: Real> {
    pub bs_irs: T,
    pub irs_su: Vec<T>,
    pub bs_su: Vec<T>,
    pub irs_pu: Vec<T>,
    pub bs_pu: Vec<T>,
}

/// Channels valid for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization<T: Real> {
    /// BS → IRS, `N_I × N_t`.
    pub h_bs_irs: Array2<Cx<T>>,
    /// IRS → SU k, length `N_I`.
    pub h_irs_su: Vec<Array1<Cx<T>>>,
    /// BS → SU k, length `N_t`.
    pub h_bs_su: Vec<Array1<Cx<T>>>,
    /// IRS → PU p, length `N_I`.
    pub h_irs_pu: Vec<Array1<Cx<T>>>,
    /// BS → PU p, length `N_t`.
    pub h_bs_pu: Vec<Array1<Cx<T>>>,
    /// Noise variance in watts per (user, subcarrier).
    pub noise_var_w: Array2<T>,
    pub scales: LinkScales<T>,
}

/// Ground node positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry<T: Real> {
    pub bs: Vec3<T>,
    pub sus: Vec<Vec3<T>>,
    pub pus: Vec<Vec3<T>>,
}

impl<T: Real> Geometry<T> {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        let v = |p: &[f64; 3]| Vec3::new(T::lit(p[0]), T::lit(p[1]), T::lit(p[2]));
        Self {
            bs: v(&cfg.bs_position),
            sus: cfg.su_positions.iter().map(v).collect(),
            pus: cfg.pu_positions.iter().map(v).collect(),
        }
    }
}

/// Per-subcarrier noise power `N_0 · (B/D) · F_u`.
pub fn noise_variance<T: Real>(n0_psd_w_hz: T, bandwidth_hz: T, num_subcarriers: usize, noise_figure_linear: T) -> Result<T> {
    if !(n0_psd_w_hz > T::zero() && bandwidth_hz > T::zero() && num_subcarriers > 0 && noise_figure_linear > T::zero()) {
        return Err(Error::domain("noise_variance inputs must be strictly positive"));
    }
    Ok(n0_psd_w_hz * (bandwidth_hz / T::lit(num_subcarriers as f64)) * noise_figure_linear)
}

/// Half-wavelength ULA along the x axis; `cos_angle` is the direction cosine
/// between the link and the array axis.
fn steering<T: Real>(n: usize, cos_angle: T) -> Array1<Cx<T>> {
    Array1::from_iter((0..n).map(|i| Cx::from_polar(T::one(), -T::PI() * T::lit(i as f64) * cos_angle)))
}

fn cn01<T: Real, R: Rng + ?Sized>(rng: &mut R) -> Cx<T> {
    let s = T::FRAC_1_SQRT_2();
    Cx::new(T::sample_standard_normal(rng) * s, T::sample_standard_normal(rng) * s)
}

struct Rician<T> {
    los: T,
    nlos: T,
}

impl<T: Real> Rician<T> {
    fn from_db(k_db: f64) -> Self {
        if k_db == f64::INFINITY {
            return Self { los: T::one(), nlos: T::zero() };
        }
        let k = 10f64.powf(k_db / 10.0);
        Self {
            los: T::lit((k / (k + 1.0)).sqrt()),
            nlos: T::lit((1.0 / (k + 1.0)).sqrt()),
        }
    }
}

fn amplitude<T: Real>(wavelength: f64, distance: T, exponent: f64, what: &str) -> Result<T> {
    if !(distance > T::zero()) || !distance.is_finite() {
        return Err(Error::domain(format!("zero or non-finite link distance on {what}")));
    }
    let reference = T::lit(wavelength / (4.0 * std::f64::consts::PI));
    Ok(reference * distance.powf(T::lit(-exponent / 2.0)))
}

/// Draws one slot of channels for the UAV at `uav_pos`.
///
/// UAV links are Rician with half-wavelength ULA line-of-sight components
/// and exponent `pathloss_exp_los`; ground links are Rayleigh with
/// `pathloss_exp_nlos`. The number of random draws does not depend on the
/// geometry, so equal seeds give common random numbers across trajectories.
pub fn generate_channels<T: Real, R: Rng + ?Sized>(
    cfg: &SystemConfig,
    geometry: &Geometry<T>,
    uav_pos: Vec3<T>,
    rng: &mut R,
) -> Result<ChannelRealization<T>> {
    if !uav_pos.is_finite() {
        return Err(Error::domain("UAV position is not finite"));
    }
    if !(uav_pos.z > T::zero()) {
        return Err(Error::domain("UAV altitude must be positive"));
    }
    let n_t = cfg.num_bs_antennas;
    let n_i = cfg.num_irs_elements;
    let lambda = cfg.wavelength_m();
    let rice = Rician::<T>::from_db(cfg.rician_k_db);
    let cos_x = |from: Vec3<T>, to: Vec3<T>| {
        let d = to - from;
        d.x / d.norm()
    };

    let d_bs_uav = geometry.bs.distance(uav_pos);
    let bs_irs_scale = amplitude(lambda, d_bs_uav, cfg.pathloss_exp_los, "BS-IRS")?;
    let a_irs_arr = steering(n_i, cos_x(uav_pos, geometry.bs));
    let a_bs_dep = steering(n_t, cos_x(geometry.bs, uav_pos));
    let mut h_bs_irs = Array2::from_elem((n_i, n_t), Cx::new(T::zero(), T::zero()));
    for l in 0..n_i {
        for n in 0..n_t {
            let los = a_irs_arr[l] * a_bs_dep[n].conj();
            let nlos: Cx<T> = cn01(rng);
            h_bs_irs[[l, n]] = (los * rice.los + nlos * rice.nlos) * bs_irs_scale;
        }
    }

    let uav_link = |target: Vec3<T>, what: &str, rng: &mut R| -> Result<(Array1<Cx<T>>, T)> {
        let scale = amplitude(lambda, uav_pos.distance(target), cfg.pathloss_exp_los, what)?;
        let los = steering(n_i, cos_x(uav_pos, target));
        let h = Array1::from_iter(los.iter().map(|&a| {
            let nlos: Cx<T> = cn01(rng);
            (a * rice.los + nlos * rice.nlos) * scale
        }));
        Ok((h, scale))
    };
    let mut h_irs_su = Vec::with_capacity(geometry.sus.len());
    let mut irs_su_scale = Vec::with_capacity(geometry.sus.len());
    for &su in &geometry.sus {
        let (h, s) = uav_link(su, "IRS-SU", rng)?;
        h_irs_su.push(h);
        irs_su_scale.push(s);
    }
    let mut h_irs_pu = Vec::with_capacity(geometry.pus.len());
    let mut irs_pu_scale = Vec::with_capacity(geometry.pus.len());
    for &pu in &geometry.pus {
        let (h, s) = uav_link(pu, "IRS-PU", rng)?;
        h_irs_pu.push(h);
        irs_pu_scale.push(s);
    }

    let mut ground = |target: Vec3<T>, what: &str| -> Result<(Array1<Cx<T>>, T)> {
        let scale = amplitude(lambda, geometry.bs.distance(target), cfg.pathloss_exp_nlos, what)?;
        let h = Array1::from_iter((0..n_t).map(|_| cn01::<T, R>(rng) * scale));
        Ok((h, scale))
    };
    let mut h_bs_su = Vec::with_capacity(geometry.sus.len());
    let mut bs_su_scale = Vec::with_capacity(geometry.sus.len());
    for &su in &geometry.sus {
        let (h, s) = ground(su, "BS-SU")?;
        h_bs_su.push(h);
        bs_su_scale.push(s);
    }
    let mut h_bs_pu = Vec::with_capacity(geometry.pus.len());
    let mut bs_pu_scale = Vec::with_capacity(geometry.pus.len());
    for &pu in &geometry.pus {
        let (h, s) = ground(pu, "BS-PU")?;
        h_bs_pu.push(h);
        bs_pu_scale.push(s);
    }

    let mut sigma2 = noise_variance(
        T::lit(cfg.noise_psd_w_hz()),
        T::lit(cfg.bandwidth_hz),
        cfg.num_subcarriers,
        T::lit(cfg.noise_figure_linear()),
    )?;
    if cfg.include_pu_interference {
        sigma2 += T::lit(crate::num::dbm_to_watts(cfg.pu_interference_dbm));
    }

    Ok(ChannelRealization {
        h_bs_irs,
        h_irs_su,
        h_bs_su,
        h_irs_pu,
        h_bs_pu,
        noise_var_w: Array2::from_elem((geometry.sus.len(), cfg.num_subcarriers), sigma2),
        scales: LinkScales {
            bs_irs: bs_irs_scale,
            irs_su: irs_su_scale,
            bs_su: bs_su_scale,
            irs_pu: irs_pu_scale,
            bs_pu: bs_pu_scale,
        },
    })
}

/// `g^H = h_d^H + h_r^H Φ H_{b,R}`, returned as the entries of the row `g^H`.
pub fn effective_channel<T: Real>(
    h_direct: ArrayView1<'_, Cx<T>>,
    h_reflect: ArrayView1<'_, Cx<T>>,
    irs: &IrsPhase<T>,
    h_bs_irs: &Array2<Cx<T>>,
) -> Array1<Cx<T>> {
    let (n_i, n_t) = h_bs_irs.dim();
    assert_eq!(h_direct.len(), n_t, "direct channel length must equal N_t");
    assert_eq!(h_reflect.len(), n_i, "reflected channel length must equal N_I");
    assert_eq!(irs.len(), n_i, "IRS phase count must equal N_I");
    let weights = Array1::from_iter(
        h_reflect
            .iter()
            .zip(irs.coefficients())
            .map(|(h, phi)| h.conj() * phi),
    );
    let reflected = weights.dot(h_bs_irs);
    Array1::from_iter(h_direct.iter().zip(reflected.iter()).map(|(d, r)| d.conj() + r))
}

/// Direct path only: `g^H = h_d^H`.
pub fn direct_channel<T: Real>(h_direct: ArrayView1<'_, Cx<T>>) -> Array1<Cx<T>> {
    h_direct.mapv(|c| c.conj())
}

/// `|g^H w|²`
pub fn gain<T: Real>(g_row: ArrayView1<'_, Cx<T>>, w: ArrayView1<'_, Cx<T>>) -> T {
    assert_eq!(g_row.len(), w.len(), "channel/beamformer length mismatch");
    g_row
        .iter()
        .zip(w.iter())
        .fold(Cx::new(T::zero(), T::zero()), |acc, (g, w)| acc + *g * *w)
        .norm_sqr()
}

/// SINR of user `k` on subcarrier `d`. Users with zero beamformers add no
/// interference.
pub fn su_sinr<T: Real>(k: usize, d: usize, g_all: &[Array1<Cx<T>>], w: &Beamformers<T>, noise_var: T) -> T {
    assert!(noise_var > T::zero(), "noise variance must be positive");
    let g = g_all[k].view();
    let signal = gain(g, w.get(k, d));
    let interference = (0..w.num_users())
        .filter(|&i| i != k)
        .fold(T::zero(), |acc, i| acc + gain(g, w.get(i, d)));
    signal / (interference + noise_var)
}

/// `(B/D)·log₂(1+γ)` in bits/s.
pub fn su_rate<T: Real>(sinr: T, bandwidth_hz: T, num_subcarriers: usize) -> T {
    assert!(sinr >= T::zero(), "SINR must be nonnegative, got {sinr}");
    bandwidth_hz / T::lit(num_subcarriers as f64) * sinr.ln_1p() / T::LN_2()
}

/// Interference power `Σ_k |h̃_p^H w_{k,d}|²` leaked to the primary user
/// protected on subcarrier `d`.
pub fn pu_interference_power<T: Real>(d: usize, h_pu_eff: ArrayView1<'_, Cx<T>>, w: &Beamformers<T>) -> T {
    (0..w.num_users()).fold(T::zero(), |acc, k| acc + gain(h_pu_eff, w.get(k, d)))
}

impl<T: Real> ChannelRealization<T> {
    pub fn num_sus(&self) -> usize {
        self.h_bs_su.len()
    }

    pub fn num_pus(&self) -> usize {
        self.h_bs_pu.len()
    }

    pub fn num_irs_elements(&self) -> usize {
        self.h_bs_irs.nrows()
    }

    pub fn num_bs_antennas(&self) -> usize {
        self.h_bs_irs.ncols()
    }

    /// Effective BS → SU row channels for every secondary user.
    pub fn su_effective(&self, irs: &IrsPhase<T>, irs_enabled: bool) -> Vec<Array1<Cx<T>>> {
        self.h_bs_su
            .iter()
            .zip(&self.h_irs_su)
            .map(|(hd, hr)| {
                if irs_enabled {
                    effective_channel(hd.view(), hr.view(), irs, &self.h_bs_irs)
                } else {
                    direct_channel(hd.view())
                }
            })
            .collect()
    }

    /// Effective BS → PU row channels (direct plus reflected).
    pub fn pu_effective(&self, irs: &IrsPhase<T>, irs_enabled: bool) -> Vec<Array1<Cx<T>>> {
        self.h_bs_pu
            .iter()
            .zip(&self.h_irs_pu)
            .map(|(hd, hr)| {
                if irs_enabled {
                    effective_channel(hd.view(), hr.view(), irs, &self.h_bs_irs)
                } else {
                    direct_channel(hd.view())
                }
            })
            .collect()
    }

    /// Rates `R_{k,d}` in bits/s for every user and subcarrier.
    pub fn rates(&self, cfg: &SystemConfig, irs: &IrsPhase<T>, w: &Beamformers<T>) -> Array2<T> {
        let g = self.su_effective(irs, cfg.irs_enabled);
        let (k_n, d_n) = self.noise_var_w.dim();
        let bw = T::lit(cfg.bandwidth_hz);
        Array2::from_shape_fn((k_n, d_n), |(k, d)| su_rate(su_sinr(k, d, &g, w, self.noise_var_w[[k, d]]), bw, d_n))
    }

    /// Leaked interference power per subcarrier, watts.
    pub fn pu_interference(&self, cfg: &SystemConfig, irs: &IrsPhase<T>, w: &Beamformers<T>) -> Vec<T> {
        let h = self.pu_effective(irs, cfg.irs_enabled);
        (0..w.num_subcarriers())
            .map(|d| pu_interference_power(d, h[cfg.pu_for_subcarrier(d)].view(), w))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        let fin = |c: &Cx<T>| c.re.is_finite() && c.im.is_finite();
        self.h_bs_irs.iter().all(fin)
            && self.h_irs_su.iter().chain(&self.h_bs_su).chain(&self.h_irs_pu).chain(&self.h_bs_pu).all(|v| v.iter().all(fin))
            && self.noise_var_w.iter().all(|s| s.is_finite() && *s > T::zero())
    }
}
