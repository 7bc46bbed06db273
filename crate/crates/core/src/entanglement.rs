//! Franson-type measurement with an unbalanced Michelson interferometer (UMI).
//!
//! Each photon independently takes the short or the long arm, giving three
//! coincidence peaks at `−ΔT, 0, +ΔT` (signal long/idler short, both equal,
//! signal short/idler long). The central peak post-selects
//! `(|SS⟩ + e^{2iξ}|LL⟩)/√2` and interferes with period π in the arm phase ξ,
//! while single-photon (classical) interference has period 2π. Fringes are
//! modelled at expectation level; event streams carry no phase.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pair_statistics::coincidence::{calibrate_peak, count_in_window, DEFAULT_PEAK_SEARCH_PS};
use crate::pair_statistics::events::{EventStream, Record};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UmiConfig {
    pub arm_delay_ns: f64,
    pub phase_xi: f64,
    /// Probability of taking the short arm.
    pub short_transmission: f64,
    /// Probability of taking the long arm.
    pub long_transmission: f64,
    /// Arm phase per kelvin of temperature tuning [rad/K].
    pub rad_per_kelvin: f64,
    /// Two-photon visibility before accidental dilution.
    pub intrinsic_visibility: f64,
}

impl Default for UmiConfig {
    fn default() -> Self {
        UmiConfig {
            arm_delay_ns: 1.6,
            phase_xi: 0.0,
            short_transmission: 0.5,
            long_transmission: 0.5,
            rad_per_kelvin: 1.0,
            intrinsic_visibility: 0.97,
        }
    }
}

impl UmiConfig {
    /// Checks transmissions and that peaks `arm_delay` apart are separable with `window_ps`.
    pub fn validate(&self, window_ps: f64) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.short_transmission)
            || !unit(self.long_transmission)
            || self.short_transmission + self.long_transmission > 1.0 + 1e-12
            || self.short_transmission + self.long_transmission == 0.0
        {
            return Err(Error::InvalidArgument(format!(
                "arm transmissions {} / {} must lie in [0, 1], be nonzero together and sum to at most 1",
                self.short_transmission, self.long_transmission
            )));
        }
        if !unit(self.intrinsic_visibility) {
            return Err(Error::InvalidArgument(format!(
                "intrinsic visibility {} must lie in [0, 1]",
                self.intrinsic_visibility
            )));
        }
        if !(self.arm_delay_ns * 1e3 > window_ps) {
            return Err(Error::InvalidArgument(format!(
                "arm delay {} ns does not exceed the {window_ps} ps coincidence window",
                self.arm_delay_ns
            )));
        }
        Ok(())
    }

    /// Phase reached by tuning the arm temperature by `delta_k` kelvin.
    pub fn phase_for_temperature(&self, delta_k: f64) -> f64 {
        self.phase_xi + self.rad_per_kelvin * delta_k
    }

    pub fn arm_delay_ps(&self) -> f64 {
        self.arm_delay_ns * 1e3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Arm {
    Short,
    Long,
}

/// UMI output with the arm taken by each surviving record.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedStream {
    pub stream: EventStream,
    pub arms: Vec<Arm>,
    /// Index of each output record in the input stream.
    pub source_index: Vec<usize>,
}

/// Routes every record of `stream` through the interferometer.
pub fn apply_umi(stream: &EventStream, umi: &UmiConfig, seed: u64) -> Result<TaggedStream> {
    let delay = umi.arm_delay_ps().round();
    if !(delay >= 0.0) {
        return Err(Error::InvalidArgument(format!("arm delay must be ≥ 0, got {} ns", umi.arm_delay_ns)));
    }
    let delay = delay as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(Record, Arm, usize)> = Vec::with_capacity(stream.records.len());
    for (idx, r) in stream.records.iter().enumerate() {
        let u: f64 = rng.random();
        let arm = if u < umi.short_transmission {
            Arm::Short
        } else if u < umi.short_transmission + umi.long_transmission {
            Arm::Long
        } else {
            continue;
        };
        let t = match arm {
            Arm::Short => r.timestamp_ps,
            Arm::Long => r.timestamp_ps + delay,
        };
        if stream.duration_ps > 0 && t >= stream.duration_ps {
            continue;
        }
        out.push((
            Record {
                channel: r.channel,
                timestamp_ps: t,
            },
            arm,
            idx,
        ));
    }
    out.sort_by_key(|(r, _, idx)| (r.timestamp_ps, r.channel, *idx));
    let arms = out.iter().map(|o| o.1).collect();
    let source_index = out.iter().map(|o| o.2).collect();
    let records = out.into_iter().map(|o| o.0).collect();
    Ok(TaggedStream {
        stream: EventStream::new(records, stream.channel_count, stream.duration_ps, stream.seed)?,
        arms,
        source_index,
    })
}

/// Coincidence counts in the three UMI peaks `[−ΔT, 0, +ΔT]` of `t_b − t_a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PeakCounts {
    pub minus: u64,
    pub central: u64,
    pub plus: u64,
}

impl PeakCounts {
    pub fn as_array(&self) -> [u64; 3] {
        [self.minus, self.central, self.plus]
    }
}

/// Counts the three peaks in windows of `window_ps` around the calibrated
/// central delay and `±arm_delay` from it.
pub fn peak_counts(stream: &EventStream, ch_a: u8, ch_b: u8, arm_delay_ps: f64, window_ps: f64) -> Result<(PeakCounts, f64)> {
    let a = stream.channel_times(ch_a)?;
    let b = stream.channel_times(ch_b)?;
    let search = DEFAULT_PEAK_SEARCH_PS.min(arm_delay_ps / 2.0).max(window_ps);
    let centre = calibrate_peak(&a, &b, window_ps, search).unwrap_or(0.0);
    let count = |c: f64| {
        let half = window_ps / 2.0;
        count_in_window(&a, &b, (c - half).round() as i64, (c + half).round() as i64)
    };
    Ok((
        PeakCounts {
            minus: count(centre - arm_delay_ps),
            central: count(centre),
            plus: count(centre + arm_delay_ps),
        },
        centre,
    ))
}

/// Arms of every (a, b) record pair whose delay falls in the window `[lo, hi]`.
pub fn window_arm_pairs(tagged: &TaggedStream, ch_a: u8, ch_b: u8, lo_ps: i64, hi_ps: i64) -> Vec<(usize, usize, Arm, Arm)> {
    let pick = |ch: u8| -> Vec<(u64, usize)> {
        tagged
            .stream
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.channel == ch)
            .map(|(k, r)| (r.timestamp_ps, k))
            .collect()
    };
    let a = pick(ch_a);
    let b = pick(ch_b);
    let mut out = Vec::new();
    let mut start = 0usize;
    for &(ta, ka) in &a {
        let ta = ta as i64;
        while start < b.len() && (b[start].0 as i64) - ta < lo_ps {
            start += 1;
        }
        for &(tb, kb) in &b[start..] {
            if (tb as i64) - ta > hi_ps {
                break;
            }
            out.push((tagged.source_index[ka], tagged.source_index[kb], tagged.arms[ka], tagged.arms[kb]));
        }
    }
    out
}

/// Expected central-peak coincidences: `S·(1 + V·cos 2ξ)/2 + background`.
pub fn quantum_fringe(xi: &[f64], visibility: f64, signal: f64, background: f64) -> Vec<f64> {
    xi.iter()
        .map(|x| signal * (1.0 + visibility * (2.0 * x).cos()) / 2.0 + background)
        .collect()
}

/// Expected single-photon counts: `S·(1 + V·cos ξ)/2`.
pub fn classical_fringe(xi: &[f64], visibility: f64, signal: f64) -> Vec<f64> {
    xi.iter()
        .map(|x| signal * (1.0 + visibility * x.cos()) / 2.0)
        .collect()
}

/// Poisson counts around each expectation, deterministic for a seed.
pub fn sample_counts(expected: &[f64], seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    expected
        .iter()
        .map(|&m| {
            if m > 0.0 {
                Poisson::new(m).expect("finite mean").sample(&mut rng) as u64
            } else {
                0
            }
        })
        .collect()
}

/// Evenly spaced phases `k·span/n`, `k = 0..n`.
pub fn phase_grid(n: usize, span: f64) -> Vec<f64> {
    (0..n).map(|k| span * k as f64 / n as f64).collect()
}

/// `(max − min)/(max + min)`.
pub fn max_min_visibility(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (max + min > 0.0).then(|| (max - min) / (max + min))
}

/// Observed visibility when a flat accidental floor `background` is added to
/// a fringe of amplitude `signal`.
pub fn diluted_visibility(intrinsic: f64, signal: f64, background: f64) -> f64 {
    intrinsic * signal / (signal + 2.0 * background)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub sigma: f64,
    /// Mean level `a` of `a + b·cos(2ξ + φ₀)`.
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Weighted residual sum of squares.
    pub chi2: f64,
}

/// Weighted least-squares fit of `a + b·cos(2ξ + φ₀)` with Poisson weights.
///
/// The covariance is scaled by the reduced χ², so noiseless input gives a
/// vanishing uncertainty.
pub fn extract_visibility(xi: &[f64], counts: &[f64]) -> Result<VisibilityFit> {
    if xi.len() != counts.len() || xi.len() < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 phase points with matching counts (got {} and {})",
            xi.len(),
            counts.len()
        )));
    }
    let span = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max) - xi.iter().copied().fold(f64::INFINITY, f64::min);
    let n = xi.len() as f64;
    // The grid must reach at least one period once the missing last step is counted.
    if span * n / (n - 1.0) < std::f64::consts::PI - 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "phase points span {span} rad, less than one fringe period"
        )));
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    let rows: Vec<(Vector3<f64>, f64, f64)> = xi
        .iter()
        .zip(counts)
        .map(|(&x, &y)| {
            let row = Vector3::new(1.0, (2.0 * x).cos(), (2.0 * x).sin());
            (row, y, 1.0 / y.max(1.0))
        })
        .collect();
    for (row, y, w) in &rows {
        ata += row * row.transpose() * *w;
        atb += row * (*y * *w);
    }
    let inv = ata.try_inverse().ok_or_else(|| Error::Fit {
        reason: "normal matrix is singular".into(),
        residual: f64::NAN,
    })?;
    let p = inv * atb;
    let chi2: f64 = rows.iter().map(|(row, y, w)| w * (y - row.dot(&p)).powi(2)).sum();
    let (a, c, s) = (p[0], p[1], p[2]);
    let b = c.hypot(s);
    if !(a > 0.0) || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::Fit {
            reason: format!("fitted mean level {a} is not positive"),
            residual: chi2,
        });
    }
    let visibility = b / a;
    let dof = (rows.len() - 3) as f64;
    let cov = inv * (chi2 / dof);
    let grad = if b > 0.0 {
        Vector3::new(-b / (a * a), c / (b * a), s / (b * a))
    } else {
        Vector3::new(0.0, 1.0 / a, 0.0)
    };
    let sigma = (grad.transpose() * cov * grad)[0].max(0.0).sqrt();
    Ok(VisibilityFit {
        visibility,
        sigma,
        offset: a,
        amplitude: b,
        phase: (-s).atan2(c),
        chi2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn fringe_zeros_and_symmetry() {
        let xi = [PI / 2.0, 3.0 * PI / 2.0, 0.0];
        let q = quantum_fringe(&xi, 1.0, 100.0, 0.0);
        assert!(q[0].abs() < 1e-12 && q[1].abs() < 1e-10);
        assert_eq!(q[2], 100.0);
        for x in [0.1, 0.7, 2.0, 5.5] {
            assert_eq!(quantum_fringe(&[x], 0.8, 10.0, 1.0), quantum_fringe(&[-x], 0.8, 10.0, 1.0));
        }
        let c = classical_fringe(&[0.0, PI], 1.0, 10.0);
        assert_eq!(c[0], 10.0);
        assert!(c[1].abs() < 1e-12);
        assert!(classical_fringe(&phase_grid(16, 2.0 * PI), 0.0, 4.0).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn noiseless_fit_recovers_visibility() {
        let xi = phase_grid(32, 2.0 * PI);
        for v in [1.0, 0.965, 0.3] {
            let y = quantum_fringe(&xi, v, 1000.0, 0.0);
            let fit = extract_visibility(&xi, &y).unwrap();
            assert_relative_eq!(fit.visibility, v, max_relative = 1e-12);
            assert!(fit.sigma < 1e-9);
            assert_relative_eq!(max_min_visibility(&y).unwrap(), v, max_relative = 1e-12);
        }
    }

    #[test]
    fn background_dilutes_visibility() {
        let xi = phase_grid(32, 2.0 * PI);
        let mut prev = 1.1;
        for k in 0..10 {
            let bg = 10.0 * k as f64;
            let fit = extract_visibility(&xi, &quantum_fringe(&xi, 1.0, 1000.0, bg)).unwrap();
            assert_relative_eq!(fit.visibility, diluted_visibility(1.0, 1000.0, bg), max_relative = 1e-10);
            assert!(fit.visibility < prev);
            prev = fit.visibility;
        }
    }

    #[test]
    fn poor_fringe_data_is_rejected() {
        assert!(extract_visibility(&[0.0; 4], &[1.0; 4]).is_err());
        let xi = phase_grid(8, 0.5);
        assert!(extract_visibility(&xi, &[1.0; 8]).is_err());
        let xi = phase_grid(16, 2.0 * PI);
        assert!(matches!(extract_visibility(&xi, &[0.0; 16]), Err(Error::Fit { .. })));
    }

    #[test]
    fn umi_validation() {
        assert!(UmiConfig::default().validate(800.0).is_ok());
        assert!(UmiConfig { arm_delay_ns: 0.5, ..UmiConfig::default() }.validate(800.0).is_err());
        assert!(UmiConfig { short_transmission: 0.8, ..UmiConfig::default() }.validate(800.0).is_err());
        assert_eq!(UmiConfig::default().phase_for_temperature(0.25), 0.25);
    }

    #[test]
    fn zero_delay_umi_is_identity() {
        let records = (0..50u64)
            .map(|k| Record { channel: (k % 2) as u8, timestamp_ps: k * 10 })
            .collect();
        let s = EventStream::new(records, 2, 1000, 0).unwrap();
        let umi = UmiConfig { arm_delay_ns: 0.0, ..UmiConfig::default() };
        assert_eq!(apply_umi(&s, &umi, 5).unwrap().stream, s);
        let forced = UmiConfig { short_transmission: 1.0, long_transmission: 0.0, ..UmiConfig::default() };
        let t = apply_umi(&s, &forced, 5).unwrap();
        assert!(t.arms.iter().all(|&a| a == Arm::Short));
        assert_eq!(t.stream, s);
    }
}
