//! Whispering-gallery resonances of a microdisk in an effective-index picture.
//!
//! Each mode family carries a linear correction on top of the bulk index,
//! `n_eff(λ) = n_bulk(λ) + offset + slope·(λ − λ_ref)`, standing in for the
//! geometric dispersion a full-vector mode solver would provide. The offset
//! pins absolute resonance positions and the slope sets the group index, so a
//! family is calibrated from a measured free spectral range and (optionally)
//! one known resonance.

use crate::error::{Error, Result};
use crate::material::{group_index_by, IndexKind, Material, GROUP_INDEX_STEP_UM};
use crate::scalar::{frequency_ghz, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskGeometry<T> {
    pub radius_um: T,
    pub thickness_um: T,
    /// Sidewall wedge angle; informational only.
    pub wedge_angle_deg: T,
}

impl<T: Real> DiskGeometry<T> {
    pub fn new(radius_um: T, thickness_um: T, wedge_angle_deg: T) -> Result<Self> {
        if !(radius_um > T::zero() && thickness_um > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "disk radius ({radius_um} µm) and thickness ({thickness_um} µm) must be positive"
            )));
        }
        Ok(DiskGeometry {
            radius_um,
            thickness_um,
            wedge_angle_deg,
        })
    }

    pub fn circumference_um(&self) -> T {
        T::TAU() * self.radius_um
    }
}

impl<T: Real> Default for DiskGeometry<T> {
    fn default() -> Self {
        DiskGeometry {
            radius_um: T::lit(46.5),
            thickness_um: T::lit(0.9),
            wedge_angle_deg: T::lit(35.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModePolarization {
    Te,
    Tm,
}

/// Which arm of the parametric process a family feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Pump,
    Signal,
    Idler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexCorrection<T> {
    pub offset: T,
    /// [1/µm]
    pub slope_per_um: T,
    /// Quadratic term modelling geometric dispersion [1/µm²].
    pub curvature_per_um2: T,
    /// Wavelength where the slope term vanishes [µm].
    pub reference_um: T,
}

impl<T: Real> Default for IndexCorrection<T> {
    fn default() -> Self {
        IndexCorrection {
            offset: T::zero(),
            slope_per_um: T::zero(),
            curvature_per_um2: T::zero(),
            reference_um: T::lit(1.552),
        }
    }
}

impl<T: Real> IndexCorrection<T> {
    #[inline]
    pub fn at(&self, wavelength_um: T) -> T {
        let d = wavelength_um - self.reference_um;
        self.offset + (self.slope_per_um + self.curvature_per_um2 * d) * d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeFamily<T> {
    pub id: String,
    pub role: Role,
    pub polarization: ModePolarization,
    pub radial_number: u32,
    pub correction: IndexCorrection<T>,
    pub q_loaded: T,
}

/// Azimuth at which to evaluate a TE index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Azimuth<T> {
    At(T),
    Averaged,
}

impl<T: Real> ModeFamily<T> {
    pub fn new(
        id: impl Into<String>,
        role: Role,
        polarization: ModePolarization,
        radial_number: u32,
        q_loaded: T,
    ) -> Result<Self> {
        if !(q_loaded > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "q_loaded must be positive, got {q_loaded}"
            )));
        }
        Ok(ModeFamily {
            id: id.into(),
            role,
            polarization,
            radial_number,
            correction: IndexCorrection::default(),
            q_loaded,
        })
    }

    pub fn with_correction(mut self, correction: IndexCorrection<T>) -> Self {
        self.correction = correction;
        self
    }

    fn bulk_kind(&self, azimuth: Azimuth<T>) -> IndexKind<T> {
        match (self.polarization, azimuth) {
            (ModePolarization::Tm, _) => IndexKind::Ordinary,
            (ModePolarization::Te, Azimuth::At(theta)) => IndexKind::Azimuthal(theta),
            (ModePolarization::Te, Azimuth::Averaged) => IndexKind::AzimuthalAverage,
        }
    }

    /// Bulk index without the family correction.
    pub fn bulk_index(
        &self,
        material: &Material<T>,
        wavelength_um: T,
        azimuth: Azimuth<T>,
    ) -> Result<T> {
        material
            .sellmeier
            .index(self.bulk_kind(azimuth), wavelength_um)
    }

    pub fn effective_index(
        &self,
        material: &Material<T>,
        wavelength_um: T,
        azimuth: Azimuth<T>,
    ) -> Result<T> {
        Ok(self.bulk_index(material, wavelength_um, azimuth)? + self.correction.at(wavelength_um))
    }

    pub fn group_index(&self, material: &Material<T>, wavelength_um: T) -> Result<T> {
        group_index_by(
            |l| self.effective_index(material, l, Azimuth::Averaged),
            wavelength_um,
            T::lit(GROUP_INDEX_STEP_UM),
        )
    }

    /// Checks that the corrected index is guided, `1 < n_eff < n_bulk`.
    pub fn check_guided(&self, material: &Material<T>, wavelength_um: T) -> Result<()> {
        let bulk = self.bulk_index(material, wavelength_um, Azimuth::Averaged)?;
        let n = bulk + self.correction.at(wavelength_um);
        if n > T::one() && n < bulk {
            Ok(())
        } else {
            Err(Error::Calibration(format!(
                "family `{}`: effective index {n} at {wavelength_um} µm is not between 1 and the bulk index {bulk}",
                self.id
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResonatorMode<T> {
    pub family: ModeFamily<T>,
    pub m: i64,
    pub wavelength_nm: T,
    /// Azimuthally averaged effective index at the resonance.
    pub n_eff: T,
    pub linewidth_ghz: T,
}

impl<T: Real> ResonatorMode<T> {
    pub fn frequency_ghz(&self) -> T {
        frequency_ghz(self.wavelength_nm)
    }

    pub fn wavelength_um(&self) -> T {
        self.wavelength_nm / T::lit(1000.0)
    }

    /// Relative error of `n_eff·2πR = m·λ`.
    pub fn resonance_residual(&self, geometry: &DiskGeometry<T>) -> T {
        let lam = self.wavelength_um();
        let m_lam = T::lit(self.m as f64) * lam;
        (self.n_eff * geometry.circumference_um() - m_lam).abs() / m_lam
    }
}

/// Cavity linewidth `ν/Q` in GHz.
pub fn linewidth<T: Real>(q_loaded: T, wavelength_nm: T) -> Result<T> {
    if !(q_loaded > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "q_loaded must be positive, got {q_loaded}"
        )));
    }
    Ok(frequency_ghz(wavelength_nm) / q_loaded)
}

/// Free spectral range `λ²/(2πR n_g)` in nm.
pub fn fsr<T: Real>(
    family: &ModeFamily<T>,
    material: &Material<T>,
    geometry: &DiskGeometry<T>,
    wavelength_nm: T,
) -> Result<T> {
    let lam_um = wavelength_nm / T::lit(1000.0);
    let ng = family.group_index(material, lam_um)?;
    Ok(wavelength_nm * lam_um / (geometry.circumference_um() * ng))
}

/// Azimuthal order as a continuous function of wavelength: `n_eff(λ)·2πR/λ`.
fn azimuthal_order<T: Real>(
    family: &ModeFamily<T>,
    material: &Material<T>,
    geometry: &DiskGeometry<T>,
    lam_um: T,
) -> Result<T> {
    Ok(family.effective_index(material, lam_um, Azimuth::Averaged)? * geometry.circumference_um()
        / lam_um)
}

/// All resonances of `family` whose wavelength lies in `band_nm`, sorted by wavelength.
pub fn resonance_comb<T: Real>(
    family: &ModeFamily<T>,
    material: &Material<T>,
    geometry: &DiskGeometry<T>,
    band_nm: (T, T),
) -> Result<Vec<ResonatorMode<T>>> {
    let (lo, hi) = band_nm;
    if !(hi > lo) {
        return Ok(Vec::new());
    }
    let k = T::lit(1000.0);
    let (lo_um, hi_um) = (lo / k, hi / k);
    let order = |l: T| azimuthal_order(family, material, geometry, l);
    let m_short = order(lo_um)?;
    let m_long = order(hi_um)?;
    if !(m_short > m_long) {
        return Err(Error::InvalidArgument(format!(
            "family `{}`: azimuthal order is not decreasing across [{lo}, {hi}] nm",
            family.id
        )));
    }
    let first = m_long.ceil().to_i64().unwrap_or(i64::MAX);
    let last = m_short.floor().to_i64().unwrap_or(i64::MIN);
    let mut modes = Vec::new();
    // Descending m gives ascending wavelength.
    for m in (first..=last).rev() {
        let target = T::lit(m as f64);
        let lam_um = bisect(|l| Ok(order(l)? - target), lo_um, hi_um)?;
        let n_eff = family.effective_index(material, lam_um, Azimuth::Averaged)?;
        let wavelength_nm = lam_um * k;
        modes.push(ResonatorMode {
            family: family.clone(),
            m,
            wavelength_nm,
            n_eff,
            linewidth_ghz: linewidth(family.q_loaded, wavelength_nm)?,
        });
    }
    Ok(modes)
}

/// Resonance of azimuthal order `m` nearest to the given wavelength, if one
/// exists within ±`search_nm`.
pub fn mode_near<T: Real>(
    family: &ModeFamily<T>,
    material: &Material<T>,
    geometry: &DiskGeometry<T>,
    wavelength_nm: T,
    search_nm: T,
) -> Result<Option<ResonatorMode<T>>> {
    let comb = resonance_comb(
        family,
        material,
        geometry,
        (wavelength_nm - search_nm, wavelength_nm + search_nm),
    )?;
    Ok(comb.into_iter().min_by(|a, b| {
        (a.wavelength_nm - wavelength_nm)
            .abs()
            .partial_cmp(&(b.wavelength_nm - wavelength_nm).abs())
            .expect("finite wavelengths")
    }))
}

/// Root of `f` in `[lo, hi]` by bisection to the scalar's relative tolerance.
pub(crate) fn bisect<T: Real>(f: impl Fn(T) -> Result<T>, lo: T, hi: T) -> Result<T> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a)?, f(b)?);
    if fa == T::zero() {
        return Ok(a);
    }
    if fb == T::zero() {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Calibration(format!(
            "root is not bracketed by [{lo}, {hi}] (f = {fa}, {fb})"
        )));
    }
    let tol = T::root_tolerance();
    for _ in 0..200 {
        let mid = (a + b) / T::lit(2.0);
        if (b - a).abs() <= tol * mid.abs().max(T::min_positive_value()) {
            return Ok(mid);
        }
        let fm = f(mid)?;
        if fm == T::zero() {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok((a + b) / T::lit(2.0))
}

/// Range of correction slopes [1/µm] searched by [`calibrate_family`].
pub const SLOPE_SEARCH: (f64, f64) = (-2.0, 2.0);

/// Fits the index-correction slope so that `fsr(family, at_wavelength)` equals `target_fsr_nm`.
///
/// The offset (and hence resonance positions at the reference wavelength) is
/// left untouched. A family that already reproduces the target to 1e-12 is
/// returned unchanged.
pub fn calibrate_family<T: Real>(
    family: &ModeFamily<T>,
    material: &Material<T>,
    geometry: &DiskGeometry<T>,
    target_fsr_nm: T,
    at_wavelength_nm: T,
) -> Result<ModeFamily<T>> {
    if !(target_fsr_nm > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "target FSR must be positive, got {target_fsr_nm}"
        )));
    }
    let current = fsr(family, material, geometry, at_wavelength_nm)?;
    if ((current - target_fsr_nm) / target_fsr_nm).abs() <= T::lit(1e-12) {
        return Ok(family.clone());
    }
    let with_slope = |slope: T| {
        let mut f = family.clone();
        f.correction.slope_per_um = slope;
        f
    };
    // FSR is singular where n_g crosses zero, so fit the group index instead.
    let lam_um = at_wavelength_nm / T::lit(1000.0);
    let target_ng = at_wavelength_nm * lam_um / (geometry.circumference_um() * target_fsr_nm);
    if !(target_ng > T::one()) {
        return Err(Error::Calibration(format!(
            "family `{}`: FSR {target_fsr_nm} nm implies group index {target_ng} ≤ 1",
            family.id
        )));
    }
    let mismatch = |slope: T| Ok(with_slope(slope).group_index(material, lam_um)? - target_ng);
    let slope = bisect(mismatch, T::lit(SLOPE_SEARCH.0), T::lit(SLOPE_SEARCH.1)).map_err(|_| {
        Error::Calibration(format!(
            "family `{}`: no slope in [{}, {}] /µm reaches FSR {target_fsr_nm} nm at {at_wavelength_nm} nm",
            family.id, SLOPE_SEARCH.0, SLOPE_SEARCH.1
        ))
    })?;
    let calibrated = with_slope(slope);
    let got = fsr(&calibrated, material, geometry, at_wavelength_nm)?;
    if ((got - target_fsr_nm) / target_fsr_nm).abs() > T::lit(1e-3) {
        return Err(Error::Calibration(format!(
            "family `{}`: FSR {got} nm after fitting misses target {target_fsr_nm} nm",
            family.id
        )));
    }
    Ok(calibrated)
}

/// Fits the correction curvature so that the group index is stationary,
/// `dn_g/dλ = 0`, at `at_wavelength_nm`.
///
/// The curvature term vanishes at the reference wavelength, so a pinned
/// resonance and the group index there are left in place.
pub fn flatten_group_index<T: Real>(
    family: &ModeFamily<T>,
    material: &Material<T>,
    at_wavelength_nm: T,
) -> Result<ModeFamily<T>> {
    let lam = at_wavelength_nm / T::lit(1000.0);
    let h = T::lit(2.0 * GROUP_INDEX_STEP_UM);
    let with_curvature = |c: T| {
        let mut f = family.clone();
        f.correction.curvature_per_um2 = c;
        f
    };
    let gvd = |c: T| -> Result<T> {
        let f = with_curvature(c);
        Ok((f.group_index(material, lam + h)? - f.group_index(material, lam - h)?) / (h + h))
    };
    // dn_g/dλ is affine in the curvature.
    let (g0, g1) = (gvd(T::zero())?, gvd(T::one())?);
    if g1 == g0 {
        return Err(Error::Calibration(format!(
            "family `{}`: group-index dispersion does not respond to curvature",
            family.id
        )));
    }
    Ok(with_curvature(-g0 / (g1 - g0)))
}

/// Sets the correction offset so that the family resonates with order `m` at
/// `wavelength_nm`, and moves the slope reference there so later slope fits
/// keep the resonance in place.
pub fn pin_resonance<T: Real>(
    family: &ModeFamily<T>,
    material: &Material<T>,
    geometry: &DiskGeometry<T>,
    wavelength_nm: T,
    m: i64,
) -> Result<ModeFamily<T>> {
    let lam_um = wavelength_nm / T::lit(1000.0);
    let bulk = family.bulk_index(material, lam_um, Azimuth::Averaged)?;
    let required = T::lit(m as f64) * lam_um / geometry.circumference_um();
    let mut f = family.clone();
    f.correction.offset = required - bulk;
    f.correction.reference_um = lam_um;
    f.check_guided(material, lam_um)?;
    Ok(f)
}
