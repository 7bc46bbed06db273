//! Whispering-gallery spontaneous parametric down-conversion in an x-cut
//! lithium-niobate microdisk: material optics, resonance combs, azimuthal
//! phase matching, photon-pair statistics and time-bin entanglement.
//!
//! The optics modules are generic over the floating-point type; the aliases
//! below fix it to `f64`. Counting statistics are always `f64`.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod entanglement;
pub mod error;
pub mod experiments;
pub mod material;
pub mod pair_statistics;
pub mod phase_matching;
pub mod resonator;
pub mod scalar;
pub mod table;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Sellmeier = material::SellmeierSet<f64>;
pub type Tensor = material::NonlinearTensor<f64>;
pub type Material = material::Material<f64>;
pub type Geometry = resonator::DiskGeometry<f64>;
pub type Family = resonator::ModeFamily<f64>;
pub type Mode = resonator::ResonatorMode<f64>;
pub type Cavity = phase_matching::Cavity<f64>;
pub type Triple = phase_matching::Triple<f64>;
pub type Trace = phase_matching::IntensityTrace<f64>;
