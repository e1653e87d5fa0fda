//! Multimodal particle filtering.
//!
//! A sequential Monte Carlo tracking library that couples generative
//! (annealed particle filtering) and discriminative (learned mixture-of-
//! experts) inference. The crate provides:
//!
//! - latent-space pose modeling and particle primitives ([`latent`],
//!   [`particle`]),
//! - sparse Bayesian regression/classification with incremental basis
//!   updates ([`sparse_bayes`]),
//! - gated mixture-of-experts conditional densities with online
//!   adaptation ([`mixture`]),
//! - four tracking algorithms over pluggable likelihood/dynamics models
//!   ([`filter`]),
//! - an entropy-weighted multimodality measure and mode-coverage metric
//!   ([`multimodality`]),
//! - a depth-ambiguous articulated-chain benchmark ([`synthbench`]).
//!
//! All numeric code is generic over the scalar type via [`Real`]
//! (`f32` or `f64`); concrete `f64` aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub mod error;
pub mod filter;
pub mod latent;
pub mod mixture;
pub mod multimodality;
pub mod particle;
pub mod sparse_bayes;
pub mod rng;
pub mod synthbench;

pub use error::{Error, Result};

/// Scalar type the whole library is generic over: `f32` or `f64`.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + Sum + Default + Copy + Debug + Display + 'static
{
    fn finite(self) -> bool;
}

impl Real for f32 {
    fn finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    fn finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Shorthand for lifting an `f64` literal into the generic scalar type.
pub fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("literal must be representable")
}

pub type StateVector64 = latent::StateVector<f64>;
pub type AmbientPose64 = latent::AmbientPose<f64>;
pub type Observation64 = latent::Observation<f64>;
pub type LatentModel64 = latent::LatentModel<f64>;
pub type Particle64 = particle::Particle<f64>;
pub type ParticleSet64 = particle::ParticleSet<f64>;
