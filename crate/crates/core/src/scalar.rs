//! Scalar abstraction shared by the optical models.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating-point type the dispersion, resonator and phase-matching code is generic over.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every `Real` can represent (a rounding of) any finite `f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite value")
    }

    /// Relative tolerance root finders aim for.
    fn root_tolerance() -> Self;
}

impl Real for f32 {
    fn root_tolerance() -> Self {
        4.0 * f32::EPSILON
    }
}

impl Real for f64 {
    fn root_tolerance() -> Self {
        1e-13
    }
}

/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reduced Planck constant [J s].
pub const HBAR: f64 = 1.054_571_817e-34;
/// Vacuum permittivity [F/m].
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Optical frequency in GHz for a vacuum wavelength in nm.
#[inline]
pub fn frequency_ghz<T: Real>(wavelength_nm: T) -> T {
    T::lit(SPEED_OF_LIGHT) / wavelength_nm
}

/// Vacuum wavelength in nm for a frequency in GHz.
#[inline]
pub fn wavelength_nm<T: Real>(frequency_ghz: T) -> T {
    T::lit(SPEED_OF_LIGHT) / frequency_ghz
}
