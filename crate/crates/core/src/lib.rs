//! RIS phase-shift optimization for an uplink where cellular users and
//! device-to-device (D2D) pairs share spectrum.
//!
//! Two strategies maximize the minimum SINR over all users and pairs:
//!
//! * [`maxmin`]: alternating optimization of the LMMSE combiner and the RIS
//!   coefficients, where each RIS step is a semidefinite relaxation solved
//!   with a generalized Dinkelbach loop and rounded by Gaussian
//!   randomization.
//! * [`ic`]: an affine parameterization of the RIS coefficients that nulls
//!   every interference path into the receive devices, after which only the
//!   effective D2D gains remain to be optimized (one small SDP).
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below fix the double-precision instantiation used by the
//! experiment harness and the CLI.

pub mod channels;
pub mod error;
pub mod harness;
pub mod ic;
pub mod lift;
pub mod maxmin;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod sdp;
pub mod sinr;

#[cfg(test)]
pub(crate) mod testutil;

pub use channels::{
    build_cascaded, effective_bs_channels, effective_device_channels, CascadedChannels, ChannelSet, Dims, Instance,
    PhaseShift,
};
pub use error::{Error, Result};
pub use rng::RandomStream;
pub use scalar::{Cx, Real};
pub use scenario::{LinkBudget, SystemConfig};
pub use sinr::{Combiner, SinrReport};

pub type ChannelSet64 = channels::ChannelSet<f64>;
pub type CascadedChannels64 = channels::CascadedChannels<f64>;
pub type Instance64 = channels::Instance<f64>;
pub type PhaseShift64 = channels::PhaseShift<f64>;
pub type Combiner64 = sinr::Combiner<f64>;
pub type SinrReport64 = sinr::SinrReport<f64>;
pub type LinkBudget64 = scenario::LinkBudget<f64>;
pub type SdpProblem64 = sdp::SdpProblem<f64>;
pub type SdpSolution64 = sdp::SdpSolution<f64>;
pub type AoTrace64 = maxmin::AoTrace<f64>;
pub type IcRepresentation64 = ic::IcRepresentation<f64>;

pub type ChannelSet32 = channels::ChannelSet<f32>;
pub type Instance32 = channels::Instance<f32>;
pub type PhaseShift32 = channels::PhaseShift<f32>;
