//! Coincidence counting on time-tagged streams: delay histograms, two-fold
//! metrics (N₁, N₂, N₁₂, PGR, CAR) and heralded g².

use serde::Serialize;

use super::events::EventStream;
use crate::error::{Error, Result};

/// Default coincidence window [ps].
pub const DEFAULT_WINDOW_PS: f64 = 800.0;
/// Offsets of the accidental-estimation windows from the peak [ns].
pub const DEFAULT_OFFSETS_NS: [f64; 10] = [-50.0, -35.0, -20.0, -10.0, -5.0, 5.0, 10.0, 20.0, 35.0, 50.0];
/// Half-span searched for the coincidence peak [ps].
pub const DEFAULT_PEAK_SEARCH_PS: f64 = 5000.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: u64,
    /// Bin centres `k·bin_width`.
    pub delays_ps: Vec<i64>,
    pub counts: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Centre of the fullest bin (first one on ties).
    pub fn peak_delay_ps(&self) -> Option<i64> {
        let max = *self.counts.iter().max()?;
        (max > 0).then(|| self.delays_ps[self.counts.iter().position(|&c| c == max).expect("max exists")])
    }
}

/// Calls `f(t_b − t_a)` for every pair with `lo ≤ t_b − t_a ≤ hi`. Both
/// inputs must be sorted; runs in O(N + matches).
pub fn for_each_delay(a: &[u64], b: &[u64], lo: i64, hi: i64, mut f: impl FnMut(i64)) {
    let mut start = 0usize;
    for &ta in a {
        let ta = ta as i64;
        while start < b.len() && (b[start] as i64) - ta < lo {
            start += 1;
        }
        for &tb in &b[start..] {
            let d = tb as i64 - ta;
            if d > hi {
                break;
            }
            f(d);
        }
    }
}

/// Number of pairs with `lo ≤ t_b − t_a ≤ hi`.
pub fn count_in_window(a: &[u64], b: &[u64], lo: i64, hi: i64) -> u64 {
    let mut n = 0u64;
    let (mut l, mut h) = (0usize, 0usize);
    for &ta in a {
        let ta = ta as i64;
        while l < b.len() && (b[l] as i64) - ta < lo {
            l += 1;
        }
        if h < l {
            h = l;
        }
        while h < b.len() && (b[h] as i64) - ta <= hi {
            h += 1;
        }
        n += (h - l) as u64;
    }
    n
}

/// Delay histogram of channel `b` relative to channel `a`.
pub fn histogram(stream: &EventStream, ch_a: u8, ch_b: u8, bin_width_ps: u64, span_ps: u64) -> Result<CoincidenceHistogram> {
    if bin_width_ps < 1 {
        return Err(Error::InvalidArgument("bin width must be at least 1 ps".into()));
    }
    let a = stream.channel_times(ch_a)?;
    let b = stream.channel_times(ch_b)?;
    Ok(histogram_times(&a, &b, bin_width_ps, span_ps))
}

pub fn histogram_times(a: &[u64], b: &[u64], bin_width_ps: u64, span_ps: u64) -> CoincidenceHistogram {
    let half = (span_ps / 2) as i64;
    let w = bin_width_ps as i64;
    // Enough bins that every |Δt| ≤ span/2 rounds inside.
    let k_max = ((half as f64 / w as f64) - 0.5).ceil().max(0.0) as i64;
    let mut counts = vec![0u64; (2 * k_max + 1) as usize];
    for_each_delay(a, b, -half, half, |d| {
        let k = (d as f64 / w as f64).round() as i64;
        counts[(k.clamp(-k_max, k_max) + k_max) as usize] += 1;
    });
    CoincidenceHistogram {
        bin_width_ps,
        delays_ps: (-k_max..=k_max).map(|k| k * w).collect(),
        counts,
    }
}

/// Centre of the `window_ps`-wide window, within `±search_ps`, that holds the most delays.
pub fn calibrate_peak(a: &[u64], b: &[u64], window_ps: f64, search_ps: f64) -> Option<f64> {
    let s = search_ps.round() as i64;
    let mut delays = Vec::new();
    for_each_delay(a, b, -s, s, |d| delays.push(d));
    if delays.is_empty() {
        return None;
    }
    delays.sort_unstable();
    let w = window_ps.round() as i64;
    let (mut best, mut best_start) = (0usize, delays[0]);
    let mut hi = 0usize;
    for lo in 0..delays.len() {
        while hi < delays.len() && delays[hi] - delays[lo] <= w {
            hi += 1;
        }
        if hi - lo > best {
            best = hi - lo;
            best_start = delays[lo];
        }
    }
    Some(best_start as f64 + window_ps / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoFoldSettings {
    pub window_ps: f64,
    pub offsets_ps: Vec<f64>,
    pub peak_search_ps: f64,
}

impl Default for TwoFoldSettings {
    fn default() -> Self {
        TwoFoldSettings {
            window_ps: DEFAULT_WINDOW_PS,
            offsets_ps: DEFAULT_OFFSETS_NS.iter().map(|o| o * 1e3).collect(),
            peak_search_ps: DEFAULT_PEAK_SEARCH_PS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoFoldResult {
    pub n1: u64,
    pub n2: u64,
    pub n12: u64,
    pub duration_s: f64,
    pub peak_delay_ps: Option<f64>,
    /// Mean counts per offset window.
    pub accidentals: f64,
    /// `N₁N₂/(N₁₂·T)` [Hz]; `None` when `N₁₂ = 0`.
    pub pgr_estimate: Option<f64>,
    /// Peak over mean accidental counts; `None` when `N₁₂ = 0`, `+∞` when no accidentals were seen.
    pub car: Option<f64>,
    /// Poisson standard error of `car`.
    pub car_sigma: Option<f64>,
}

fn window_bounds(centre: f64, width: f64) -> (i64, i64) {
    let half = width / 2.0;
    ((centre - half).round() as i64, (centre + half).round() as i64)
}

pub fn two_fold_times(a: &[u64], b: &[u64], duration_s: f64, settings: &TwoFoldSettings) -> Result<TwoFoldResult> {
    if !(settings.window_ps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "coincidence window must be positive, got {} ps",
            settings.window_ps
        )));
    }
    let n1 = a.len() as u64;
    let n2 = b.len() as u64;
    let peak = calibrate_peak(a, b, settings.window_ps, settings.peak_search_ps);
    let centre = peak.unwrap_or(0.0);
    let (lo, hi) = window_bounds(centre, settings.window_ps);
    let n12 = count_in_window(a, b, lo, hi);
    let acc_total: u64 = settings
        .offsets_ps
        .iter()
        .map(|o| {
            let (lo, hi) = window_bounds(centre + o, settings.window_ps);
            count_in_window(a, b, lo, hi)
        })
        .sum();
    let k = settings.offsets_ps.len().max(1) as f64;
    let accidentals = acc_total as f64 / k;
    let (pgr_estimate, car, car_sigma) = if n12 == 0 {
        (None, None, None)
    } else {
        let pgr = (n1 as f64) * (n2 as f64) / (n12 as f64 * duration_s);
        if acc_total == 0 {
            (Some(pgr), Some(f64::INFINITY), None)
        } else {
            let car = n12 as f64 / accidentals;
            let rel = (1.0 / n12 as f64 + 1.0 / acc_total as f64).sqrt();
            (Some(pgr), Some(car), Some(car * rel))
        }
    };
    Ok(TwoFoldResult {
        n1,
        n2,
        n12,
        duration_s,
        peak_delay_ps: peak,
        accidentals,
        pgr_estimate,
        car,
        car_sigma,
    })
}

/// Two-fold metrics between channels `ch_a` and `ch_b`.
pub fn two_fold_metrics(stream: &EventStream, ch_a: u8, ch_b: u8, settings: &TwoFoldSettings) -> Result<TwoFoldResult> {
    let a = stream.channel_times(ch_a)?;
    let b = stream.channel_times(ch_b)?;
    two_fold_times(&a, &b, stream.duration_s(), settings)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct G2Point {
    pub tau_ps: f64,
    pub heralds: u64,
    pub n_is1: u64,
    pub n_is2: u64,
    pub n_is1s2: u64,
    /// `N_{is₁s₂}·N_i/(N_{is₁}·N_{is₂})`; `None` when a denominator is zero.
    pub g2: Option<f64>,
}

/// Heralded second-order correlation, triggering on the idler channel.
///
/// Each herald opens a window on both signal detectors around the calibrated
/// idler–signal delay; the `s₂` window is shifted by `τ`.
pub fn heralded_g2(
    stream: &EventStream,
    idler: u8,
    s1: u8,
    s2: u8,
    taus_ps: &[f64],
    window_ps: f64,
) -> Result<Vec<G2Point>> {
    if !(window_ps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "coincidence window must be positive, got {window_ps} ps"
        )));
    }
    let ti = stream.channel_times(idler)?;
    let t1 = stream.channel_times(s1)?;
    let t2 = stream.channel_times(s2)?;
    let d1 = calibrate_peak(&ti, &t1, window_ps, DEFAULT_PEAK_SEARCH_PS).unwrap_or(0.0);
    let d2 = calibrate_peak(&ti, &t2, window_ps, DEFAULT_PEAK_SEARCH_PS).unwrap_or(0.0);
    let hits1 = window_hits(&ti, &t1, window_bounds(d1, window_ps));
    Ok(taus_ps
        .iter()
        .map(|&tau| {
            let hits2 = window_hits(&ti, &t2, window_bounds(d2 + tau, window_ps));
            let n_is1 = hits1.iter().filter(|&&h| h).count() as u64;
            let n_is2 = hits2.iter().filter(|&&h| h).count() as u64;
            let n_is1s2 = hits1.iter().zip(&hits2).filter(|(a, b)| **a && **b).count() as u64;
            let heralds = ti.len() as u64;
            let g2 = (n_is1 > 0 && n_is2 > 0)
                .then(|| (n_is1s2 as f64) * (heralds as f64) / ((n_is1 as f64) * (n_is2 as f64)));
            G2Point {
                tau_ps: tau,
                heralds,
                n_is1,
                n_is2,
                n_is1s2,
                g2,
            }
        })
        .collect())
}

/// For each herald, whether `b` has a click in `[t + lo, t + hi]`.
fn window_hits(heralds: &[u64], b: &[u64], (lo, hi): (i64, i64)) -> Vec<bool> {
    let mut start = 0usize;
    heralds
        .iter()
        .map(|&t| {
            let t = t as i64;
            while start < b.len() && (b[start] as i64) - t < lo {
                start += 1;
            }
            start < b.len() && (b[start] as i64) - t <= hi
        })
        .collect()
}
