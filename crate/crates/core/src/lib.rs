//! Simulator and learning agent for an IRS-assisted UAV OFDM
//! spectrum-sharing downlink.
//!
//! The physical layer ([`channel`]), kinematics ([`uav`]), the dense
//! network substrate ([`nn`]) and the learner ([`agent`]) are generic over
//! the scalar type. The environment and baselines run in `f64`; the
//! aliases below name the `f64` instantiations.

pub mod agent;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod num;
pub mod uav;
pub mod vec3;

pub use config::SystemConfig;
pub use error::{Error, Result};
pub use num::Real;

pub type Vec3d = vec3::Vec3<f64>;
pub type UavStateD = uav::UavState<f64>;
pub type IrsPhaseD = channel::IrsPhase<f64>;
pub type BeamformersD = channel::Beamformers<f64>;
pub type ChannelsD = channel::ChannelRealization<f64>;
pub type C64 = num_complex::Complex<f64>;
pub type AgentD = agent::Agent<f64>;
