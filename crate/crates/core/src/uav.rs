//! Fixed-wing kinematics, propulsion energy and the energy-efficiency bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UavState<T: Real> {
    pub q: Vec3<T>,
    pub v: Vec3<T>,
    pub a: Vec3<T>,
}

/// Propulsion model coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aero<T> {
    pub c1: T,
    pub c2: T,
    pub g: T,
}

/// Running totals over a mission.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// Exact propulsion energy, joules. Includes the kinetic term once the
    /// mission is closed.
    pub e_exact_j: f64,
    /// Upper-bound propulsion energy, joules.
    pub e_ub_j: f64,
    pub bits_total: f64,
    /// `½m(‖v[N]‖² − ‖v[0]‖²)`, set when the mission is closed.
    pub kinetic_j: f64,
}

impl EnergyLedger {
    pub fn ee_lb(&self) -> Result<f64> {
        ee_lb(self.bits_total, self.e_ub_j)
    }
}

/// Forward-Euler update: `q' = q + v·dt`, `v' = v + a·dt`. No projection.
pub fn step_kinematics<T: Real>(state: &UavState<T>, a_cmd: Vec3<T>, dt: T) -> UavState<T> {
    debug_assert!(dt > T::zero());
    UavState {
        q: state.q + state.v * dt,
        v: state.v + a_cmd * dt,
        a: a_cmd,
    }
}

fn check_speed<T: Real>(v: Vec3<T>) -> Result<T> {
    let s = v.norm();
    if s > T::zero() && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::domain("propulsion model is singular at zero speed"))
    }
}

/// `c1‖v‖³ + (c2/‖v‖)(1 + (‖a‖² − (aᵀv)²/‖v‖²)/g²)`
pub fn propulsion_integrand_exact<T: Real>(v: Vec3<T>, a: Vec3<T>, aero: Aero<T>) -> Result<T> {
    let s = check_speed(v)?;
    let along = a.dot(v);
    let normal_sq = a.norm_sq() - along * along / (s * s);
    Ok(aero.c1 * s * s * s + aero.c2 / s * (T::one() + normal_sq / (aero.g * aero.g)))
}

/// `c1‖v‖³ + (c2/‖v‖)(1 + ‖a‖²/g²)`
pub fn propulsion_integrand_ub<T: Real>(v: Vec3<T>, a: Vec3<T>, aero: Aero<T>) -> Result<T> {
    let s = check_speed(v)?;
    Ok(aero.c1 * s * s * s + aero.c2 / s * (T::one() + a.norm_sq() / (aero.g * aero.g)))
}

fn check_trajectory<T: Real>(trajectory: &[UavState<T>]) -> Result<()> {
    if trajectory.len() < 2 {
        return Err(Error::domain("trajectory needs at least two states"));
    }
    Ok(())
}

/// Exact mission energy. `trajectory[0..N]` are the flown slots and
/// `trajectory[N]` the terminal state whose speed enters the kinetic term.
pub fn mission_energy_exact<T: Real>(trajectory: &[UavState<T>], dt: T, mass_kg: T, aero: Aero<T>) -> Result<T> {
    check_trajectory(trajectory)?;
    let n = trajectory.len() - 1;
    let mut sum = T::zero();
    for s in &trajectory[..n] {
        sum += propulsion_integrand_exact(s.v, s.a, aero)?;
    }
    let kinetic = T::lit(0.5) * mass_kg * (trajectory[n].v.norm_sq() - trajectory[0].v.norm_sq());
    Ok(dt * sum + kinetic)
}

/// Upper-bound mission energy over the flown slots; no kinetic term.
pub fn mission_energy_ub<T: Real>(trajectory: &[UavState<T>], dt: T, aero: Aero<T>) -> Result<T> {
    check_trajectory(trajectory)?;
    let n = trajectory.len() - 1;
    let mut sum = T::zero();
    for s in &trajectory[..n] {
        sum += propulsion_integrand_ub(s.v, s.a, aero)?;
    }
    Ok(dt * sum)
}

/// Bits per joule of the upper-bound energy.
pub fn ee_lb<T: Real>(bits_total: T, energy_ub_j: T) -> Result<T> {
    if !(energy_ub_j > T::zero()) {
        return Err(Error::domain("energy must be positive"));
    }
    Ok(bits_total / energy_ub_j)
}

/// Radial projection onto `‖a‖ ≤ a_max` and `v_min ≤ ‖v‖ ≤ v_max`.
///
/// A zero velocity has no direction; it is mapped to `v_min` along +x.
/// Use [`project_velocity_with_heading`] to supply a fallback heading.
pub fn project_kinematics<T: Real>(v: Vec3<T>, a: Vec3<T>, v_min: T, v_max: T, a_max: T) -> (Vec3<T>, Vec3<T>) {
    let x = Vec3::new(T::one(), T::zero(), T::zero());
    (project_velocity_with_heading(v, x, v_min, v_max), project_acceleration(a, a_max))
}

pub fn project_acceleration<T: Real>(a: Vec3<T>, a_max: T) -> Vec3<T> {
    let n = a.norm();
    if n <= a_max {
        return a;
    }
    let mut s = a_max / n;
    while (a * s).norm() > a_max {
        s *= T::one() - T::epsilon();
    }
    a * s
}

pub fn project_velocity_with_heading<T: Real>(v: Vec3<T>, heading: Vec3<T>, v_min: T, v_max: T) -> Vec3<T> {
    let s = v.norm();
    if s == T::zero() {
        let h = heading.norm();
        let dir = if h > T::zero() { heading * (T::one() / h) } else { Vec3::new(T::one(), T::zero(), T::zero()) };
        return dir * v_min;
    }
    if s > v_max {
        v * (v_max / s)
    } else if s < v_min {
        v * (v_min / s)
    } else {
        v
    }
}
