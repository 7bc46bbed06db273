//! Analytic expectations for Poisson pair sources, used to validate the
//! Monte Carlo and the estimators.

use statrs::function::erf::erfc;

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of `Exp(lifetime) + N(0, sigma²)` (exponentially modified Gaussian).
pub fn delay_cdf(x: f64, lifetime_ps: f64, sigma_ps: f64) -> f64 {
    match (lifetime_ps > 0.0, sigma_ps > 0.0) {
        (false, false) => f64::from(x >= 0.0),
        (false, true) => phi(x / sigma_ps),
        (true, false) => {
            if x <= 0.0 {
                0.0
            } else {
                -(-x / lifetime_ps).exp_m1()
            }
        }
        (true, true) => {
            let z = x / sigma_ps;
            if z < -40.0 {
                return 0.0;
            }
            let r = sigma_ps / lifetime_ps;
            let tail = (-x / lifetime_ps + 0.5 * r * r).exp() * phi(z - r);
            (phi(z) - tail).clamp(0.0, 1.0)
        }
    }
}

/// Probability that a true pair's delay lands in `[lo, hi]`.
pub fn capture_fraction(lo_ps: f64, hi_ps: f64, lifetime_ps: f64, sigma_ps: f64) -> f64 {
    (delay_cdf(hi_ps, lifetime_ps, sigma_ps) - delay_cdf(lo_ps, lifetime_ps, sigma_ps)).max(0.0)
}

/// Largest capture fraction of any window of the given width, and the window's start.
pub fn best_capture(window_ps: f64, lifetime_ps: f64, sigma_ps: f64) -> (f64, f64) {
    let f = |lo: f64| capture_fraction(lo, lo + window_ps, lifetime_ps, sigma_ps);
    if sigma_ps == 0.0 {
        return (f(0.0), 0.0);
    }
    // The windowed capture is unimodal in the start position: golden-section search.
    let (mut a, mut b) = (-window_ps - 8.0 * sigma_ps, 8.0 * sigma_ps + lifetime_ps);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) >= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let lo = 0.5 * (a + b);
    (f(lo), lo)
}

/// Detection rates of one arm: `R·η + dark`.
pub fn singles_rate(pair_rate_hz: f64, transmission: f64, dark_rate_hz: f64) -> f64 {
    pair_rate_hz * transmission + dark_rate_hz
}

/// Operating point shared by the two-fold oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoFoldPoint {
    pub pair_rate_hz: f64,
    pub window_ps: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub dark1_hz: f64,
    pub dark2_hz: f64,
    /// Fraction of true pairs inside the coincidence window.
    pub capture: f64,
}

impl TwoFoldPoint {
    /// Lossless, dark-free detection with every pair captured.
    pub fn ideal(pair_rate_hz: f64, window_ps: f64) -> Self {
        TwoFoldPoint {
            pair_rate_hz,
            window_ps,
            eta1: 1.0,
            eta2: 1.0,
            dark1_hz: 0.0,
            dark2_hz: 0.0,
            capture: 1.0,
        }
    }

    pub fn singles(&self) -> (f64, f64) {
        (
            singles_rate(self.pair_rate_hz, self.eta1, self.dark1_hz),
            singles_rate(self.pair_rate_hz, self.eta2, self.dark2_hz),
        )
    }

    /// True-coincidence rate in the peak window [Hz].
    pub fn true_rate(&self) -> f64 {
        self.pair_rate_hz * self.eta1 * self.eta2 * self.capture
    }

    /// Accidental rate in one window, `r₁·r₂·w` [Hz].
    pub fn accidental_rate(&self) -> f64 {
        let (r1, r2) = self.singles();
        r1 * r2 * self.window_ps * 1e-12
    }

    /// Expected value of the measured CAR: peak-window counts, accidentals
    /// included, over the accidental level, i.e. `1 + car_closed_form`.
    pub fn expected_car(&self) -> f64 {
        1.0 + car_closed_form(self)
    }

    /// Expected ratio N₁N₂/(N₁₂·T), counting accidentals inside the peak window.
    pub fn expected_pgr_estimate(&self) -> f64 {
        let (r1, r2) = self.singles();
        r1 * r2 / (self.true_rate() + self.accidental_rate())
    }
}

/// True over accidental coincidence rate; `+∞` when no accidentals are possible.
pub fn car_closed_form(p: &TwoFoldPoint) -> f64 {
    let acc = p.accidental_rate();
    if acc == 0.0 {
        f64::INFINITY
    } else {
        p.true_rate() / acc
    }
}

/// Operating point of a heralded (idler-triggered) HBT measurement with the
/// signal split onto two detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldedPoint {
    pub pair_rate_hz: f64,
    pub window_ps: f64,
    pub eta_idler: f64,
    /// Transmission to each signal detector, splitter ratio included.
    pub eta_s1: f64,
    pub eta_s2: f64,
    pub dark_idler_hz: f64,
    pub dark_s1_hz: f64,
    pub dark_s2_hz: f64,
    pub capture: f64,
}

impl HeraldedPoint {
    /// Heralded `g²(0)` for Poisson pair emission.
    ///
    /// A herald is a true idler with probability `f = Rη_i/r_i`; its partner
    /// lands in detector k's window with `a_k = f·c·η_k`. Every other click is
    /// Poisson with window mean `λ_k = (Rη_k + d_k)·w`.
    pub fn g2_zero(&self) -> f64 {
        let w = self.window_ps * 1e-12;
        let r_i = singles_rate(self.pair_rate_hz, self.eta_idler, self.dark_idler_hz);
        if r_i == 0.0 {
            return f64::NAN;
        }
        let f = self.pair_rate_hz * self.eta_idler / r_i;
        let a1 = f * self.capture * self.eta_s1;
        let a2 = f * self.capture * self.eta_s2;
        let q1 = -(-(self.pair_rate_hz * self.eta_s1 + self.dark_s1_hz) * w).exp_m1();
        let q2 = -(-(self.pair_rate_hz * self.eta_s2 + self.dark_s2_hz) * w).exp_m1();
        let p1 = a1 + (1.0 - a1) * q1;
        let p2 = a2 + (1.0 - a2) * q2;
        let p12 = a1 * q2 + a2 * q1 + (1.0 - a1 - a2) * q1 * q2;
        p12 / (p1 * p2)
    }
}
