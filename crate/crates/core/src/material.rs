//! Dispersion and nonlinear response of congruent lithium niobate.
//!
//! Refractive indices come from a three-term Sellmeier form
//!
//! ```text
//! n²(λ) = 1 + Σ_k B_k λ² / (λ² − C_k)        (λ in µm, C_k in µm²)
//! ```
//!
//! with coefficients stored as flat `[B1, C1, B2, C2, ...]` arrays so that any
//! user-supplied table of pole terms can be loaded from a run configuration.
//! In an X-cut disk the TE field rotates relative to the optic axis as it
//! travels around the rim, so its index oscillates between `n_o` and `n_e`
//! with period π in the azimuthal angle.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Room-temperature congruent LN, ordinary ray (Zelmon et al. 1997).
pub const ZELMON_ORDINARY: [f64; 6] = [2.6734, 0.01764, 1.2290, 0.05914, 12.614, 474.60];
/// Room-temperature congruent LN, extraordinary ray (Zelmon et al. 1997).
pub const ZELMON_EXTRAORDINARY: [f64; 6] = [2.9804, 0.02047, 0.5981, 0.0666, 8.9543, 416.08];
/// Wavelength window of the Zelmon fit [µm].
pub const ZELMON_RANGE_UM: (f64, f64) = (0.4, 5.0);

pub const DEFAULT_D22_PM_PER_V: f64 = 2.1;
pub const DEFAULT_D31_PM_PER_V: f64 = -4.35;

/// Default finite-difference step for group indices [µm].
pub const GROUP_INDEX_STEP_UM: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarization {
    Ordinary,
    Extraordinary,
}

/// Which index a group-index or dispersion query refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexKind<T> {
    Ordinary,
    Extraordinary,
    /// TE index at a fixed azimuth.
    Azimuthal(T),
    /// TE index averaged over the azimuth.
    AzimuthalAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SellmeierSet<T> {
    ordinary: Vec<T>,
    extraordinary: Vec<T>,
    valid_range: (T, T),
}

impl<T: Real> SellmeierSet<T> {
    /// Builds a set and checks that it yields physical indices (1 < n < 3.5,
    /// n_o ≥ n_e) over the whole validity window.
    pub fn new(ordinary: Vec<T>, extraordinary: Vec<T>, valid_range: (T, T)) -> Result<Self> {
        for (name, c) in [("sellmeier_o", &ordinary), ("sellmeier_e", &extraordinary)] {
            if c.is_empty() || c.len() % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} needs a nonempty, even number of coefficients (B, C pairs), got {}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        let (lo, hi) = valid_range;
        if !(lo > T::zero() && hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "valid range [{lo}, {hi}] µm must be positive and increasing"
            )));
        }
        let set = SellmeierSet {
            ordinary,
            extraordinary,
            valid_range,
        };
        let samples = 64;
        for i in 0..=samples {
            let lam = lo + (hi - lo) * T::lit(i as f64 / samples as f64);
            let no = set.eval(&set.ordinary, lam);
            let ne = set.eval(&set.extraordinary, lam);
            for n in [no, ne] {
                if !(n > T::one() && n < T::lit(3.5)) {
                    return Err(Error::InvalidArgument(format!(
                        "Sellmeier set gives n = {n} at {lam} µm, outside (1, 3.5)"
                    )));
                }
            }
            if no < ne {
                return Err(Error::InvalidArgument(format!(
                    "n_o = {no} < n_e = {ne} at {lam} µm; expected a negative uniaxial crystal"
                )));
            }
        }
        Ok(set)
    }

    /// Congruent LN at room temperature.
    pub fn congruent_lithium_niobate() -> Self {
        let conv = |c: &[f64]| c.iter().map(|&v| T::lit(v)).collect::<Vec<_>>();
        Self::new(
            conv(&ZELMON_ORDINARY),
            conv(&ZELMON_EXTRAORDINARY),
            (T::lit(ZELMON_RANGE_UM.0), T::lit(ZELMON_RANGE_UM.1)),
        )
        .expect("built-in Sellmeier data is valid")
    }

    /// Dispersionless material with fixed ordinary and extraordinary indices.
    pub fn constant(n_o: T, n_e: T, valid_range: (T, T)) -> Result<Self> {
        let b = |n: T| vec![n * n - T::one(), T::zero()];
        Self::new(b(n_o), b(n_e), valid_range)
    }

    pub fn valid_range(&self) -> (T, T) {
        self.valid_range
    }

    pub fn ordinary_coefficients(&self) -> &[T] {
        &self.ordinary
    }

    pub fn extraordinary_coefficients(&self) -> &[T] {
        &self.extraordinary
    }

    fn eval(&self, coeffs: &[T], lam_um: T) -> T {
        let l2 = lam_um * lam_um;
        let n2 = coeffs
            .chunks_exact(2)
            .fold(T::one(), |acc, bc| acc + bc[0] * l2 / (l2 - bc[1]));
        n2.sqrt()
    }

    fn check(&self, lam_um: T) -> Result<()> {
        let (lo, hi) = self.valid_range;
        if lam_um >= lo && lam_um <= hi {
            Ok(())
        } else {
            Err(Error::out_of_range(
                "wavelength [µm]",
                lam_um.as_f64(),
                (lo.as_f64(), hi.as_f64()),
            ))
        }
    }

    pub fn refractive_index(&self, pol: Polarization, wavelength_um: T) -> Result<T> {
        self.check(wavelength_um)?;
        let coeffs = match pol {
            Polarization::Ordinary => &self.ordinary,
            Polarization::Extraordinary => &self.extraordinary,
        };
        Ok(self.eval(coeffs, wavelength_um))
    }

    /// TE index at azimuth `theta` (angle between propagation direction and the
    /// in-plane optic axis normal).
    pub fn n_te_azimuthal(&self, wavelength_um: T, theta: T) -> Result<T> {
        let no = self.refractive_index(Polarization::Ordinary, wavelength_um)?;
        let ne = self.refractive_index(Polarization::Extraordinary, wavelength_um)?;
        Ok(n_te_from(no, ne, theta))
    }

    /// Azimuthal mean of the TE index, `(1/2π)∮ n_TE dθ`.
    ///
    /// The integral is a complete elliptic integral of the first kind and
    /// reduces to `1 / AGM(1/n_o, 1/n_e)`.
    pub fn n_te_average(&self, wavelength_um: T) -> Result<T> {
        let no = self.refractive_index(Polarization::Ordinary, wavelength_um)?;
        let ne = self.refractive_index(Polarization::Extraordinary, wavelength_um)?;
        Ok(n_te_average_from(no, ne))
    }

    pub fn index(&self, kind: IndexKind<T>, wavelength_um: T) -> Result<T> {
        match kind {
            IndexKind::Ordinary => self.refractive_index(Polarization::Ordinary, wavelength_um),
            IndexKind::Extraordinary => {
                self.refractive_index(Polarization::Extraordinary, wavelength_um)
            }
            IndexKind::Azimuthal(theta) => self.n_te_azimuthal(wavelength_um, theta),
            IndexKind::AzimuthalAverage => self.n_te_average(wavelength_um),
        }
    }

    /// `n_g = n − λ dn/dλ` by a central difference with the given step [µm].
    pub fn group_index(&self, kind: IndexKind<T>, wavelength_um: T, step_um: T) -> Result<T> {
        group_index_by(|l| self.index(kind, l), wavelength_um, step_um)
    }
}

/// Central-difference group index of an arbitrary index function.
pub(crate) fn group_index_by<T: Real>(
    index: impl Fn(T) -> Result<T>,
    wavelength_um: T,
    step_um: T,
) -> Result<T> {
    if !(step_um > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step_um}"
        )));
    }
    let n = index(wavelength_um)?;
    let up = index(wavelength_um + step_um)?;
    let down = index(wavelength_um - step_um)?;
    let slope = (up - down) / (step_um + step_um);
    Ok(n - wavelength_um * slope)
}

#[inline]
pub fn n_te_from<T: Real>(n_o: T, n_e: T, theta: T) -> T {
    let (s, c) = theta.sin_cos();
    T::one() / (c * c / (n_o * n_o) + s * s / (n_e * n_e)).sqrt()
}

pub fn n_te_average_from<T: Real>(n_o: T, n_e: T) -> T {
    let (mut a, mut b) = (T::one() / n_o, T::one() / n_e);
    for _ in 0..64 {
        if (a - b).abs() <= T::epsilon() * a {
            break;
        }
        let mean = (a + b) / T::lit(2.0);
        b = (a * b).sqrt();
        a = mean;
    }
    T::lit(2.0) / (a + b)
}

/// Second-order response entering the X-cut TM-TM-TE interaction [pm/V].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearTensor<T> {
    d22: T,
    d31: T,
}

impl<T: Real> NonlinearTensor<T> {
    pub fn new(d22: T, d31: T) -> Result<Self> {
        if !(d22.is_finite() && d31.is_finite()) || d22 == T::zero() || d31 == T::zero() {
            return Err(Error::InvalidArgument(format!(
                "d22 = {d22}, d31 = {d31}: both must be finite and nonzero"
            )));
        }
        Ok(NonlinearTensor { d22, d31 })
    }

    pub fn congruent_lithium_niobate() -> Self {
        Self::new(T::lit(DEFAULT_D22_PM_PER_V), T::lit(DEFAULT_D31_PM_PER_V))
            .expect("built-in tensor is valid")
    }

    pub fn d22(&self) -> T {
        self.d22
    }

    pub fn d31(&self) -> T {
        self.d31
    }

    /// `d22 cos θ + d31 sin θ`.
    #[inline]
    pub fn d_eff(&self, theta: T) -> T {
        let (s, c) = theta.sin_cos();
        self.d22 * c + self.d31 * s
    }

    /// Coefficients of `e^{+iθ}` and `e^{−iθ}` in `d_eff(θ)`; no other harmonic is present.
    pub fn d_eff_fourier(&self) -> FirstHarmonic<T> {
        let half = T::lit(0.5);
        FirstHarmonic {
            c_plus1: Complex::new(self.d22 * half, -self.d31 * half),
            c_minus1: Complex::new(self.d22 * half, self.d31 * half),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstHarmonic<T> {
    pub c_plus1: Complex<T>,
    pub c_minus1: Complex<T>,
}

impl<T: Real> FirstHarmonic<T> {
    #[inline]
    pub fn eval(&self, theta: T) -> Complex<T> {
        let e = Complex::from_polar(T::one(), theta);
        self.c_plus1 * e + self.c_minus1 * e.conj()
    }

    /// Swaps the `e^{±iθ}` coefficients.
    pub fn swapped(&self) -> Self {
        FirstHarmonic {
            c_plus1: self.c_minus1,
            c_minus1: self.c_plus1,
        }
    }
}

/// Dispersion plus nonlinearity: everything the cavity model needs from the crystal.
#[derive(Debug, Clone, PartialEq)]
pub struct Material<T> {
    pub sellmeier: SellmeierSet<T>,
    pub tensor: NonlinearTensor<T>,
}

impl<T: Real> Material<T> {
    pub fn congruent_lithium_niobate() -> Self {
        Material {
            sellmeier: SellmeierSet::congruent_lithium_niobate(),
            tensor: NonlinearTensor::congruent_lithium_niobate(),
        }
    }
}
