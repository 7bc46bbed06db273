//! Azimuthal phase matching of pump, signal and idler whispering-gallery modes.
//!
//! The down-converted amplitude after the light has travelled an azimuth θ is
//!
//! ```text
//! a(θ) = A ∫₀^θ d_eff(θ′) exp(i Φ(θ′)) dθ′,     Φ(θ) = ∫₀^θ Δk(θ″) R dθ″
//! ```
//!
//! with `Δk = k_s + k_i − k_p`. The round-trip mean of `Δk·R` is the integer
//! `Δm = m_s + m_i − m_p`; the TE member adds a π-periodic ripple. Only the
//! `e^{±iθ}` harmonics of `d_eff` can cancel the net winding, so a triple
//! grows from turn to turn when the ripple's even harmonics bridge `Δm ∓ 1`
//! and stays bounded otherwise.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::material::{FirstHarmonic, Material, Polarization};
use crate::resonator::{resonance_comb, DiskGeometry, ModeFamily, ModePolarization, ResonatorMode};
use crate::scalar::{frequency_ghz, wavelength_nm, Real, EPSILON_0, HBAR, SPEED_OF_LIGHT};

/// Smallest accepted number of θ samples per turn.
pub const MIN_GRID_POINTS: usize = 1024;
pub const DEFAULT_GRID_POINTS: usize = 4096;
/// Turn-N intensity must reach this fraction of `N²` times the turn-1 intensity to count as persistent growth.
pub const PERSISTENCE_FRACTION: f64 = 0.8;

/// Material and disk shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Cavity<T> {
    pub material: Material<T>,
    pub geometry: DiskGeometry<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triple<T> {
    pub pump: ResonatorMode<T>,
    pub signal: ResonatorMode<T>,
    pub idler: ResonatorMode<T>,
    pub delta_m: i64,
    /// `f_s + f_i − f_p` [GHz]
    pub delta_f_ghz: T,
}

impl<T: Real> Triple<T> {
    pub fn new(pump: ResonatorMode<T>, signal: ResonatorMode<T>, idler: ResonatorMode<T>) -> Self {
        let delta_m = signal.m + idler.m - pump.m;
        let delta_f_ghz = signal.frequency_ghz() + idler.frequency_ghz() - pump.frequency_ghz();
        Triple {
            pump,
            signal,
            idler,
            delta_m,
            delta_f_ghz,
        }
    }

    /// True when both down-converted members are in their lowest radial order.
    pub fn is_fundamental(&self) -> bool {
        self.signal.family.radial_number == 0 && self.idler.family.radial_number == 0
    }
}

/// Every (signal, idler) pair whose frequencies add up to the pump within `energy_tol_ghz`,
/// sorted by `|Δf|`.
pub fn enumerate_triples<T: Real>(
    pump: &ResonatorMode<T>,
    signal_comb: &[ResonatorMode<T>],
    idler_comb: &[ResonatorMode<T>],
    energy_tol_ghz: T,
) -> Vec<Triple<T>> {
    let mut idlers: Vec<(T, &ResonatorMode<T>)> =
        idler_comb.iter().map(|m| (m.frequency_ghz(), m)).collect();
    idlers.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite frequency"));
    let fp = pump.frequency_ghz();
    let mut out = Vec::new();
    for s in signal_comb {
        let want = fp - s.frequency_ghz();
        let start = idlers.partition_point(|(f, _)| *f < want - energy_tol_ghz);
        for (f, i) in &idlers[start..] {
            if *f > want + energy_tol_ghz {
                break;
            }
            let t = Triple::new(pump.clone(), s.clone(), (*i).clone());
            if t.delta_f_ghz.abs() <= energy_tol_ghz {
                out.push(t);
            }
        }
    }
    out.sort_by(|a, b| {
        a.delta_f_ghz
            .abs()
            .partial_cmp(&b.delta_f_ghz.abs())
            .expect("finite mismatch")
            .then(a.signal.wavelength_nm.partial_cmp(&b.signal.wavelength_nm).expect("finite"))
    });
    out
}

/// Precomputed `k·R` for one member of a triple.
#[derive(Debug, Clone, Copy)]
struct MemberPhase<T> {
    scale: T, // 2πR/λ
    te: Option<(T, T)>,
    tm_bulk: T,
    correction: T,
}

impl<T: Real> MemberPhase<T> {
    fn new(mode: &ResonatorMode<T>, cavity: &Cavity<T>) -> Result<Self> {
        let lam = mode.wavelength_um();
        let s = &cavity.material.sellmeier;
        let no = s.refractive_index(Polarization::Ordinary, lam)?;
        let te = match mode.family.polarization {
            ModePolarization::Te => Some((no, s.refractive_index(Polarization::Extraordinary, lam)?)),
            ModePolarization::Tm => None,
        };
        Ok(MemberPhase {
            scale: cavity.geometry.circumference_um() / lam,
            te,
            tm_bulk: no,
            correction: mode.family.correction.at(lam),
        })
    }

    #[inline]
    fn k_r(&self, theta: T) -> T {
        let bulk = match self.te {
            Some((no, ne)) => crate::material::n_te_from(no, ne, theta),
            None => self.tm_bulk,
        };
        self.scale * (bulk + self.correction)
    }
}

/// `Δk·R` as a function of azimuth for one triple [rad per rad of azimuth].
#[derive(Debug, Clone, Copy)]
pub struct PhaseProfile<T> {
    members: [MemberPhase<T>; 3],
    shift: T,
    radius_um: T,
}

impl<T: Real> PhaseProfile<T> {
    pub fn new(triple: &Triple<T>, cavity: &Cavity<T>) -> Result<Self> {
        Ok(PhaseProfile {
            members: [
                MemberPhase::new(&triple.signal, cavity)?,
                MemberPhase::new(&triple.idler, cavity)?,
                MemberPhase::new(&triple.pump, cavity)?,
            ],
            shift: T::zero(),
            radius_um: cavity.geometry.radius_um,
        })
    }

    /// Re-labels the triple as having azimuthal mismatch `target` instead of
    /// `current`, keeping the birefringent ripple of the member modes.
    pub fn with_delta_m(mut self, current: i64, target: i64) -> Self {
        self.shift = self.shift + T::lit((target - current) as f64);
        self
    }

    /// Adds the same θ-independent constant to the index of every member.
    pub fn with_index_shift(mut self, dn: T) -> Self {
        for m in &mut self.members {
            m.correction = m.correction + dn;
        }
        self
    }

    #[inline]
    pub fn delta_k_r(&self, theta: T) -> T {
        let [s, i, p] = &self.members;
        s.k_r(theta) + i.k_r(theta) - p.k_r(theta) + self.shift
    }

    /// `Δk` in rad/µm.
    #[inline]
    pub fn delta_k(&self, theta: T) -> T {
        self.delta_k_r(theta) / self.radius_um
    }
}

/// `k_s(θ) + k_i(θ) − k_p(θ)` in rad/µm.
pub fn delta_k<T: Real>(theta: T, triple: &Triple<T>, cavity: &Cavity<T>) -> Result<T> {
    Ok(PhaseProfile::new(triple, cavity)?.delta_k(theta))
}

/// Vacuum-field amplitude `√(ħω / (4π ε₀ c n))` in SI units.
pub fn quantization_prefactor<T: Real>(omega_rad_per_s: T, n: T) -> T {
    let denom = T::lit(4.0) * T::PI() * T::lit(EPSILON_0) * T::lit(SPEED_OF_LIGHT) * n;
    (T::lit(HBAR) * omega_rad_per_s / denom).sqrt()
}

/// Field amplitude at 1550 nm in n = 2.2; unit of the combined quantization factor.
fn quantization_unit<T: Real>() -> T {
    let omega = T::TAU() * T::lit(SPEED_OF_LIGHT / 1550e-9);
    quantization_prefactor(omega, T::lit(2.2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudePrefactor<T> {
    /// Mode-overlap factor in [0, 1].
    pub overlap: T,
    /// Product of the three field amplitudes, in units of the 1550 nm, n = 2.2 value cubed.
    pub quantization: T,
}

impl<T: Real> AmplitudePrefactor<T> {
    pub fn new(overlap: T, quantization: T) -> Result<Self> {
        if !(overlap >= T::zero() && overlap <= T::one()) || !(quantization > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "overlap {overlap} must lie in [0, 1] and quantization {quantization} must be positive"
            )));
        }
        Ok(AmplitudePrefactor {
            overlap,
            quantization,
        })
    }

    pub fn for_triple(triple: &Triple<T>, overlap: T) -> Result<Self> {
        let unit = quantization_unit::<T>();
        let field = |m: &ResonatorMode<T>| {
            let omega = T::TAU() * m.frequency_ghz() * T::lit(1e9);
            quantization_prefactor(omega, m.n_eff) / unit
        };
        Self::new(
            overlap,
            field(&triple.pump) * field(&triple.signal) * field(&triple.idler),
        )
    }

    pub fn value(&self) -> T {
        self.overlap * self.quantization
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    Persistent,
    Bounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityTrace<T> {
    pub theta: Vec<T>,
    pub amplitude: Vec<Complex<T>>,
    pub intensity: Vec<T>,
    pub points_per_turn: usize,
}

impl<T: Real> IntensityTrace<T> {
    pub fn turns(&self) -> usize {
        (self.theta.len() - 1) / self.points_per_turn
    }

    pub fn final_intensity(&self) -> T {
        *self.intensity.last().expect("nonempty trace")
    }

    /// Intensity at the end of turn `k` (1-based).
    pub fn intensity_after_turn(&self, k: usize) -> T {
        self.intensity[k * self.points_per_turn]
    }

    /// Largest intensity reached during the first `k` turns.
    pub fn max_within_turns(&self, k: usize) -> T {
        self.intensity[..=k * self.points_per_turn]
            .iter()
            .copied()
            .fold(T::zero(), T::max)
    }

    /// Persistent if turn-N intensity ≥ 0.8·N²·(turn-1 intensity) and turn 1 is not
    /// negligible relative to the largest single-turn excursion.
    pub fn growth(&self) -> Growth {
        let n = self.turns();
        let first = self.intensity_after_turn(1);
        let excursion = self.max_within_turns(1);
        if excursion == T::zero() || first <= T::lit(1e-6) * excursion {
            return Growth::Bounded;
        }
        let need = T::lit(PERSISTENCE_FRACTION * (n * n) as f64) * first;
        // A single turn cannot show build-up; a non-vanishing end value is all there is.
        if n == 1 || self.final_intensity() >= need {
            Growth::Persistent
        } else {
            Growth::Bounded
        }
    }
}

/// Cumulative trapezoid integration of `scale · d_eff(θ) · exp(iΦ(θ))` where
/// Φ is itself the cumulative trapezoid integral of `phase_rate`.
pub fn accumulate_with<T: Real>(
    phase_rate: impl Fn(T) -> T,
    d_eff: impl Fn(T) -> Complex<T>,
    scale: T,
    points_per_turn: usize,
    n_turns: usize,
) -> Result<IntensityTrace<T>> {
    if points_per_turn < MIN_GRID_POINTS {
        return Err(Error::Resolution {
            points: points_per_turn,
            min: MIN_GRID_POINTS,
        });
    }
    if n_turns == 0 {
        return Err(Error::InvalidArgument("n_turns must be at least 1".into()));
    }
    let total = points_per_turn * n_turns;
    let h = T::TAU() / T::lit(points_per_turn as f64);
    let half_h = h / T::lit(2.0);
    let mut theta = Vec::with_capacity(total + 1);
    let mut amplitude = Vec::with_capacity(total + 1);
    let mut intensity = Vec::with_capacity(total + 1);

    let mut phi = T::zero();
    let mut rate_prev = phase_rate(T::zero());
    let mut f_prev = d_eff(T::zero()) * scale;
    let mut acc = Complex::new(T::zero(), T::zero());
    theta.push(T::zero());
    amplitude.push(acc);
    intensity.push(T::zero());
    for j in 1..=total {
        let t = h * T::lit(j as f64);
        let rate = phase_rate(t);
        phi = phi + half_h * (rate_prev + rate);
        let f = d_eff(t) * Complex::from_polar(scale, phi);
        acc = acc + (f_prev + f) * half_h;
        theta.push(t);
        amplitude.push(acc);
        intensity.push(acc.norm_sqr());
        rate_prev = rate;
        f_prev = f;
    }
    Ok(IntensityTrace {
        theta,
        amplitude,
        intensity,
        points_per_turn,
    })
}

/// Accumulates the down-converted amplitude of `triple` around `n_turns` round trips.
pub fn accumulate_intensity<T: Real>(
    profile: &PhaseProfile<T>,
    harmonic: &FirstHarmonic<T>,
    prefactor: &AmplitudePrefactor<T>,
    points_per_turn: usize,
    n_turns: usize,
) -> Result<IntensityTrace<T>> {
    accumulate_with(
        |t| profile.delta_k_r(t),
        |t| harmonic.eval(t),
        prefactor.value(),
        points_per_turn,
        n_turns,
    )
}

/// `|Δf| ≤ window_fraction · linewidth`.
pub fn matching_window<T: Real>(delta_f_ghz: T, linewidth_ghz: T, window_fraction: T) -> Result<bool> {
    if !(linewidth_ghz > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "linewidth must be positive, got {linewidth_ghz} GHz"
        )));
    }
    Ok(delta_f_ghz.abs() <= window_fraction * linewidth_ghz)
}

/// Extra frequency mismatch that grows linearly with signal wavelength past a
/// cutoff. It widens `|Δf|` whatever the sign of the modal mismatch, so the
/// matching window closes progressively beyond the cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetuningRamp<T> {
    pub cutoff_nm: T,
    pub ghz_per_nm: T,
}

impl<T: Real> DetuningRamp<T> {
    pub fn at(&self, signal_nm: T) -> T {
        if signal_nm > self.cutoff_nm {
            self.ghz_per_nm * (signal_nm - self.cutoff_nm)
        } else {
            T::zero()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings<T> {
    pub linewidth_ghz: T,
    pub window_fraction: T,
    pub overlap_fundamental: T,
    /// Overlap of triples whose signal and idler share a higher radial number.
    pub overlap_higher: T,
    /// Overlap of triples whose signal and idler radial numbers differ.
    pub overlap_mixed: T,
    pub points_per_turn: usize,
    pub n_turns: usize,
    pub ramp: Option<DetuningRamp<T>>,
}

impl<T: Real> Default for ScanSettings<T> {
    fn default() -> Self {
        ScanSettings {
            linewidth_ghz: T::lit(0.3),
            window_fraction: T::lit(0.5),
            overlap_fundamental: T::one(),
            overlap_higher: T::lit(0.3),
            overlap_mixed: T::lit(0.3),
            points_per_turn: DEFAULT_GRID_POINTS,
            n_turns: 1,
            ramp: None,
        }
    }
}

impl<T: Real> ScanSettings<T> {
    pub fn half_window_ghz(&self) -> T {
        self.window_fraction * self.linewidth_ghz
    }

    pub fn overlap_for(&self, triple: &Triple<T>) -> T {
        if triple.is_fundamental() {
            self.overlap_fundamental
        } else if triple.signal.family.radial_number == triple.idler.family.radial_number {
            self.overlap_higher
        } else {
            self.overlap_mixed
        }
    }

    /// Mismatch including the dispersion ramp.
    pub fn effective_delta_f(&self, triple: &Triple<T>) -> T {
        let extra = self
            .ramp
            .map_or(T::zero(), |r| r.at(triple.signal.wavelength_nm));
        let df = triple.delta_f_ghz;
        if df < T::zero() {
            df - extra
        } else {
            df + extra
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanEntry<T> {
    pub triple: Triple<T>,
    /// Mismatch after the dispersion ramp [GHz].
    pub delta_f_ghz: T,
    /// Intensity after `n_turns`, arbitrary units.
    pub intensity: T,
    /// Intensity relative to the strongest entry of the scan.
    pub strength: T,
}

/// Idler band conjugate to a signal band for a given pump, widened by `tol_ghz`.
fn conjugate_band<T: Real>(pump_nm: T, band_nm: (T, T), tol_ghz: T) -> Result<(T, T)> {
    let fp = frequency_ghz(pump_nm);
    let (f_hi, f_lo) = (frequency_ghz(band_nm.0), frequency_ghz(band_nm.1));
    let idler_lo_f = fp - f_hi - tol_ghz;
    let idler_hi_f = fp - f_lo + tol_ghz;
    if !(idler_lo_f > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "signal band [{}, {}] nm is beyond the pump frequency",
            band_nm.0, band_nm.1
        )));
    }
    Ok((wavelength_nm(idler_hi_f), wavelength_nm(idler_lo_f)))
}

/// All matched triples with the signal in `band_nm`, with relative strengths.
///
/// Signals come from the `signal_families` combs inside the band; idlers from
/// the `idler_families` combs over the energy-conjugate band. A triple is
/// matched when its (ramped) frequency mismatch lies inside the window.
pub fn bandwidth_scan<T: Real>(
    cavity: &Cavity<T>,
    pump: &ResonatorMode<T>,
    signal_families: &[ModeFamily<T>],
    idler_families: &[ModeFamily<T>],
    band_nm: (T, T),
    settings: &ScanSettings<T>,
) -> Result<Vec<ScanEntry<T>>> {
    let ramp_max = settings.ramp.map_or(T::zero(), |r| {
        r.at(band_nm.0).abs().max(r.at(band_nm.1).abs())
    });
    let tol = settings.half_window_ghz() + ramp_max;
    let idler_band = conjugate_band(pump.wavelength_nm, band_nm, tol)?;
    let mut signals = Vec::new();
    for f in signal_families {
        signals.extend(resonance_comb(f, &cavity.material, &cavity.geometry, band_nm)?);
    }
    let mut idlers = Vec::new();
    for f in idler_families {
        idlers.extend(resonance_comb(f, &cavity.material, &cavity.geometry, idler_band)?);
    }
    let candidates = enumerate_triples(pump, &signals, &idlers, tol);
    let harmonic = cavity.material.tensor.d_eff_fourier();
    let matched: Vec<(Triple<T>, T)> = candidates
        .into_iter()
        .filter_map(|t| {
            let df = settings.effective_delta_f(&t);
            (df.abs() <= settings.half_window_ghz()).then_some((t, df))
        })
        .collect();
    let mut entries = matched
        .into_par_iter()
        .map(|(triple, df)| {
            let profile = PhaseProfile::new(&triple, cavity)?;
            let prefactor = AmplitudePrefactor::for_triple(&triple, settings.overlap_for(&triple))?;
            let trace = accumulate_intensity(
                &profile,
                &harmonic,
                &prefactor,
                settings.points_per_turn,
                settings.n_turns,
            )?;
            Ok(ScanEntry {
                triple,
                delta_f_ghz: df,
                intensity: trace.final_intensity(),
                strength: T::zero(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let peak = entries.iter().map(|e| e.intensity).fold(T::zero(), T::max);
    if peak > T::zero() {
        for e in &mut entries {
            e.strength = e.intensity / peak;
        }
    }
    entries.sort_by(|a, b| {
        a.triple
            .signal
            .wavelength_nm
            .partial_cmp(&b.triple.signal.wavelength_nm)
            .expect("finite")
            .then(a.triple.idler.wavelength_nm.partial_cmp(&b.triple.idler.wavelength_nm).expect("finite"))
    });
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{NonlinearTensor, SellmeierSet};
    use crate::resonator::{Role, ResonatorMode};
    use approx::assert_relative_eq;
    use std::f64::consts::{PI, TAU};

    fn toy_cavity(no: f64, ne: f64) -> Cavity<f64> {
        Cavity {
            material: Material {
                sellmeier: SellmeierSet::constant(no, ne, (0.4, 5.0)).unwrap(),
                tensor: NonlinearTensor::congruent_lithium_niobate(),
            },
            geometry: DiskGeometry::default(),
        }
    }

    fn mode(cav: &Cavity<f64>, pol: ModePolarization, role: Role, m: i64) -> ResonatorMode<f64> {
        let fam = ModeFamily::new(format!("{role:?}"), role, pol, 0, 1e5).unwrap();
        let n = fam
            .effective_index(&cav.material, 1.55, crate::resonator::Azimuth::Averaged)
            .unwrap();
        let lam_nm = cav.geometry.circumference_um() * n / m as f64 * 1000.0;
        ResonatorMode {
            family: fam,
            m,
            wavelength_nm: lam_nm,
            n_eff: n,
            linewidth_ghz: 1.0,
        }
    }

    #[test]
    fn dispersionless_combs_match_exactly() {
        let cav = toy_cavity(2.0, 2.0);
        let pump = mode(&cav, ModePolarization::Tm, Role::Pump, 800);
        let signals: Vec<_> = (390..400).map(|m| mode(&cav, ModePolarization::Tm, Role::Signal, m)).collect();
        let idlers: Vec<_> = (400..410).map(|m| mode(&cav, ModePolarization::Tm, Role::Idler, m)).collect();
        let triples = enumerate_triples(&pump, &signals, &idlers, 1.0);
        assert!(!triples.is_empty());
        for t in &triples {
            assert_eq!(t.delta_m, 0);
            assert!(t.delta_f_ghz.abs() < 1e-6);
            assert_eq!(t.signal.m + t.idler.m, 800);
        }
        assert!(enumerate_triples(&pump, &signals, &idlers, 0.0)
            .iter()
            .all(|t| t.delta_f_ghz == 0.0));
    }

    #[test]
    fn all_tm_delta_k_is_flat() {
        let cav = Cavity {
            material: Material::congruent_lithium_niobate(),
            geometry: DiskGeometry::default(),
        };
        let t = Triple::new(
            mode(&cav, ModePolarization::Tm, Role::Pump, 800),
            mode(&cav, ModePolarization::Tm, Role::Signal, 401),
            mode(&cav, ModePolarization::Tm, Role::Idler, 400),
        );
        let a = delta_k(0.0, &t, &cav).unwrap();
        for k in 1..50 {
            assert_eq!(delta_k(k as f64 * 0.1, &t, &cav).unwrap(), a);
        }
    }

    #[test]
    fn te_member_ripples_between_extremes() {
        let cav = toy_cavity(2.2, 2.1);
        let t = Triple::new(
            mode(&cav, ModePolarization::Tm, Role::Pump, 800),
            mode(&cav, ModePolarization::Te, Role::Signal, 390),
            mode(&cav, ModePolarization::Tm, Role::Idler, 411),
        );
        let p = PhaseProfile::new(&t, &cav).unwrap();
        let at0 = p.delta_k(0.0);
        let at90 = p.delta_k(PI / 2.0);
        // Oracle: only the signal index differs between θ = 0 and π/2.
        let two_pi_over_lam = TAU / t.signal.wavelength_um();
        assert_relative_eq!(at0 - at90, two_pi_over_lam * (2.2 - 2.1), max_relative = 1e-10);
        assert_relative_eq!(p.delta_k(0.3), p.delta_k(0.3 + PI), max_relative = 1e-12);
        // Round-trip mean of Δk·R equals Δm.
        let n = 4096;
        let mean: f64 = (0..n).map(|j| p.delta_k_r(TAU * j as f64 / n as f64)).sum::<f64>() / n as f64;
        assert!((mean - t.delta_m as f64).abs() < 1e-6, "{mean} vs {}", t.delta_m);
    }

    #[test]
    fn constant_drive_grows_quadratically() {
        let tr = accumulate_with(|_: f64| 0.0, |_| Complex::new(1.0, 0.0), 1.0, 4096, 1).unwrap();
        for j in [512, 1024, 4096] {
            assert_relative_eq!(tr.intensity[j], tr.theta[j].powi(2), max_relative = 1e-12);
        }
        assert_eq!(tr.intensity[0], 0.0);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let err = accumulate_with(|_: f64| 0.0, |_| Complex::new(1.0, 0.0), 1.0, 512, 1).unwrap_err();
        assert!(matches!(err, Error::Resolution { points: 512, .. }));
    }

    // Reference values from a 2^20-point quadrature of the same integrand.
    fn oracle(rate: f64, n_turns: usize) -> Complex<f64> {
        let n = 1usize << 20;
        let h = TAU * n_turns as f64 / n as f64;
        let f = |t: f64| Complex::from_polar(t.cos(), rate * t);
        let mut acc = (f(0.0) + f(TAU * n_turns as f64)) * 0.5;
        for j in 1..n {
            acc += f(j as f64 * h);
        }
        acc * h
    }

    #[test]
    fn cosine_drive_with_unit_winding_keeps_growing() {
        let tr = accumulate_with(|_| 1.0, |t: f64| Complex::new(t.cos(), 0.0), 1.0, 4096, 3).unwrap();
        let want = oracle(1.0, 3);
        assert_relative_eq!(tr.amplitude.last().unwrap().re, want.re, max_relative = 1e-6);
        assert_relative_eq!(tr.final_intensity(), want.norm_sqr(), max_relative = 1e-6);
        assert_eq!(tr.growth(), Growth::Persistent);

        let flat = accumulate_with(|_| 0.0, |t: f64| Complex::new(t.cos(), 0.0), 1.0, 4096, 3).unwrap();
        for k in 1..=3 {
            assert!(flat.intensity_after_turn(k) < 1e-20);
        }
        assert!(oracle(0.0, 1).norm() < 1e-9);
        assert_eq!(flat.growth(), Growth::Bounded);
    }

    #[test]
    fn matching_window_half_width() {
        assert!(matching_window(0.0, 0.3, 0.5).unwrap());
        assert!(matching_window(0.15, 0.3, 0.5).unwrap());
        assert!(!matching_window(3.0, 0.3, 0.5).unwrap());
        assert!(matching_window(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn quantization_scaling() {
        let a = quantization_prefactor(1.0e15, 2.2);
        assert_relative_eq!(quantization_prefactor(2.0e15, 2.2), a * 2f64.sqrt(), max_relative = 1e-14);
        let w = |nm: f64| TAU * SPEED_OF_LIGHT / (nm * 1e-9);
        assert_relative_eq!(
            quantization_prefactor(w(775.0), 2.2) / quantization_prefactor(w(1550.0), 2.2),
            2f64.sqrt(),
            max_relative = 1e-14
        );
        let v = quantization_prefactor(w(1550.0), 2.211);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn ramp_only_acts_past_cutoff() {
        let r = DetuningRamp { cutoff_nm: 1560.0, ghz_per_nm: 0.2 };
        assert_eq!(r.at(1550.0), 0.0);
        assert_relative_eq!(r.at(1565.0), 1.0);
    }
}
