//! Forward model of the pair source and detection chain.
//!
//! Pairs are emitted as a Poisson process. Each photon independently
//! survives its arm (loss stages × detector efficiency) and is routed to one
//! of the arm's output ports; the idler trails its signal by an
//! exponentially distributed cavity delay. Splitting the process by joint
//! (signal, idler) outcome gives independent Poisson processes, so only the
//! detected categories need timestamps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::events::{EventStream, Record};
use crate::error::{Error, Result};

/// dB → power transmission.
pub fn db_to_transmission(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Power transmission → dB loss.
pub fn transmission_to_db(t: f64) -> f64 {
    -10.0 * t.log10()
}

/// One measured operating point used to fix the saturation power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub power_uw: f64,
    pub rate_mhz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelaySign {
    /// Idler detected after its signal.
    IdlerLate,
    /// Idler detected before its signal.
    IdlerEarly,
}

impl DelaySign {
    fn factor(self) -> f64 {
        match self {
            DelaySign::IdlerLate => 1.0,
            DelaySign::IdlerEarly => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    /// Independent pairs; several may overlap in time.
    Poisson,
    /// At most one pair in flight: emission times are separated by at least `min_gap_ps`.
    Isolated { min_gap_ps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub pgr_slope_mhz_per_uw: f64,
    pub pump_power_uw: f64,
    pub saturation: Option<SaturationPoint>,
    pub pair_lifetime_ps: f64,
    pub delay_sign: DelaySign,
    /// Loss stages of the signal arm [dB].
    pub signal_losses_db: Vec<f64>,
    /// Loss stages of the idler arm [dB].
    pub idler_losses_db: Vec<f64>,
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_sigma_ps: f64,
    pub emission: Emission,
}

/// Per-arm loss stages: low-pass filter, dichroic mirror, fibre adapters,
/// taper coupling, backscatter split 10·log10(21/20), collection.
pub const DEFAULT_ARM_LOSSES_DB: [f64; 6] = [2.2, 2.4, 8.7, 3.0, 0.211_892_990_699_380_8, 3.78];
/// Insertion loss of one DWDM channel [dB].
pub const DWDM_INSERTION_DB: f64 = 4.0;

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            pgr_slope_mhz_per_uw: 5.13,
            pump_power_uw: 46.5,
            saturation: None,
            pair_lifetime_ps: 200.0,
            delay_sign: DelaySign::IdlerLate,
            signal_losses_db: DEFAULT_ARM_LOSSES_DB.to_vec(),
            idler_losses_db: DEFAULT_ARM_LOSSES_DB.to_vec(),
            detector_efficiency: 0.85,
            dark_rate_hz: 100.0,
            jitter_sigma_ps: 40.0,
            emission: Emission::Poisson,
        }
    }
}

impl SourceModel {
    /// Lossless, dark-free, jitter-free detection of the same source.
    pub fn ideal_detection(mut self) -> Self {
        self.signal_losses_db.clear();
        self.idler_losses_db.clear();
        self.detector_efficiency = 1.0;
        self.dark_rate_hz = 0.0;
        self.jitter_sigma_ps = 0.0;
        self
    }

    pub fn with_power(mut self, power_uw: f64) -> Self {
        self.pump_power_uw = power_uw;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument(what.to_string()))
            }
        };
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        check(nonneg(self.pgr_slope_mhz_per_uw), "pgr slope must be ≥ 0")?;
        check(nonneg(self.pump_power_uw), "pump power must be ≥ 0")?;
        check(nonneg(self.pair_lifetime_ps), "pair lifetime must be ≥ 0")?;
        check(nonneg(self.dark_rate_hz), "dark rate must be ≥ 0")?;
        check(nonneg(self.jitter_sigma_ps), "jitter must be ≥ 0")?;
        check(
            (0.0..=1.0).contains(&self.detector_efficiency),
            "detector efficiency must lie in [0, 1]",
        )?;
        check(
            self.signal_losses_db.iter().chain(&self.idler_losses_db).all(|&l| nonneg(l)),
            "loss stages must be ≥ 0 dB",
        )?;
        if let Some(p) = self.saturation {
            check(
                p.power_uw > 0.0 && p.rate_mhz > 0.0 && p.rate_mhz < self.pgr_slope_mhz_per_uw * p.power_uw,
                "saturation point must lie below the linear rate",
            )?;
        }
        if let Emission::Isolated { min_gap_ps } = self.emission {
            check(nonneg(min_gap_ps), "minimum pair gap must be ≥ 0")?;
        }
        Ok(())
    }

    /// `P_sat` of `rate = slope·P/(1 + P/P_sat)`, if saturation is on.
    pub fn saturation_power_uw(&self) -> Option<f64> {
        self.saturation.map(|p| {
            let linear = self.pgr_slope_mhz_per_uw * p.power_uw;
            p.power_uw / (linear / p.rate_mhz - 1.0)
        })
    }

    pub fn pair_rate_at(&self, power_uw: f64) -> f64 {
        let linear = self.pgr_slope_mhz_per_uw * power_uw * 1e6;
        match self.saturation_power_uw() {
            Some(p_sat) => linear / (1.0 + power_uw / p_sat),
            None => linear,
        }
    }

    /// Generated pairs per second at the configured pump power.
    pub fn pair_rate_hz(&self) -> f64 {
        self.pair_rate_at(self.pump_power_uw)
    }

    pub fn signal_loss_db(&self) -> f64 {
        self.signal_losses_db.iter().sum()
    }

    pub fn idler_loss_db(&self) -> f64 {
        self.idler_losses_db.iter().sum()
    }

    /// Generation-to-click transmission of each arm.
    pub fn arm_transmissions(&self) -> (f64, f64) {
        (
            db_to_transmission(self.signal_loss_db()) * self.detector_efficiency,
            db_to_transmission(self.idler_loss_db()) * self.detector_efficiency,
        )
    }

    /// Adds a loss stage to one arm (`signal = true` for the signal arm).
    pub fn with_extra_loss(mut self, signal: bool, db: f64) -> Self {
        if signal {
            self.signal_losses_db.push(db);
        } else {
            self.idler_losses_db.push(db);
        }
        self
    }
}

/// Detector port of an interferometer or splitter output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Port {
    pub channel: u8,
    /// Fraction of surviving photons sent here.
    pub probability: f64,
    /// Extra propagation delay [ps].
    pub delay_ps: f64,
}

impl Port {
    pub fn direct(channel: u8) -> Self {
        Port {
            channel,
            probability: 1.0,
            delay_ps: 0.0,
        }
    }
}

/// Routing of each arm onto detector channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMap {
    pub signal: Vec<Port>,
    pub idler: Vec<Port>,
    pub channel_count: u16,
}

impl ChannelMap {
    /// Signal on channel 0, idler on channel 1.
    pub fn two_fold() -> Self {
        ChannelMap {
            signal: vec![Port::direct(0)],
            idler: vec![Port::direct(1)],
            channel_count: 2,
        }
    }

    /// Idler herald on channel 0; signal split onto channels 1 and 2.
    pub fn heralded(split: f64) -> Self {
        ChannelMap {
            signal: vec![
                Port {
                    channel: 1,
                    probability: split,
                    delay_ps: 0.0,
                },
                Port {
                    channel: 2,
                    probability: 1.0 - split,
                    delay_ps: 0.0,
                },
            ],
            idler: vec![Port::direct(0)],
            channel_count: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for ports in [&self.signal, &self.idler] {
            let total: f64 = ports.iter().map(|p| p.probability).sum();
            if ports.iter().any(|p| !(p.probability >= 0.0) || !p.delay_ps.is_finite())
                || total > 1.0 + 1e-12
            {
                return Err(Error::InvalidArgument(format!(
                    "port probabilities must be ≥ 0 and sum to at most 1 (got {total})"
                )));
            }
            for p in ports {
                if u16::from(p.channel) >= self.channel_count {
                    return Err(Error::UnknownChannel {
                        channel: p.channel,
                        channel_count: self.channel_count,
                    });
                }
            }
        }
        Ok(())
    }
}

/// An event stream plus the ground truth that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub stream: EventStream,
    pub generated_pairs: u64,
}

impl Simulation {
    pub fn true_rate_hz(&self) -> f64 {
        self.generated_pairs as f64 / self.stream.duration_s()
    }
}

/// Outcome of one photon: a port index, or `None` if lost.
fn outcomes(ports: &[Port], transmission: f64) -> Vec<(Option<usize>, f64)> {
    let mut out: Vec<(Option<usize>, f64)> = ports
        .iter()
        .enumerate()
        .map(|(k, p)| (Some(k), transmission * p.probability))
        .collect();
    let kept: f64 = out.iter().map(|o| o.1).sum();
    out.push((None, (1.0 - kept).max(0.0)));
    out
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    } else {
        0
    }
}

struct Timing {
    lifetime: Option<Exp<f64>>,
    sign: f64,
    jitter: Option<Normal<f64>>,
    duration_ps: f64,
}

impl Timing {
    fn jitter(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.jitter.map_or(0.0, |n| n.sample(rng))
    }

    fn cavity_delay(&self, rng: &mut ChaCha8Rng) -> f64 {
        self.lifetime.map_or(0.0, |e| self.sign * e.sample(rng))
    }

    fn push(&self, records: &mut Vec<Record>, channel: u8, t: f64) {
        let t = t.round();
        if t >= 0.0 && t < self.duration_ps {
            records.push(Record {
                channel,
                timestamp_ps: t as u64,
            });
        }
    }
}

/// Simulates `duration_s` of detections. Deterministic for a given seed.
///
/// Photons whose jittered or delayed timestamp falls outside `[0, duration)`
/// are discarded, as a real acquisition window would.
pub fn generate_events(
    source: &SourceModel,
    channels: &ChannelMap,
    duration_s: f64,
    seed: u64,
) -> Result<Simulation> {
    source.validate()?;
    channels.validate()?;
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration_s} s"
        )));
    }
    let duration_ps = duration_s * 1e12;
    if duration_ps >= u64::MAX as f64 {
        return Err(Error::InvalidArgument(format!("duration {duration_s} s overflows 64-bit ps")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timing = Timing {
        lifetime: (source.pair_lifetime_ps > 0.0)
            .then(|| Exp::new(1.0 / source.pair_lifetime_ps).expect("positive rate")),
        sign: source.delay_sign.factor(),
        jitter: (source.jitter_sigma_ps > 0.0)
            .then(|| Normal::new(0.0, source.jitter_sigma_ps).expect("positive sigma")),
        duration_ps,
    };
    let (eta_s, eta_i) = source.arm_transmissions();
    let sig = outcomes(&channels.signal, eta_s);
    let idl = outcomes(&channels.idler, eta_i);
    let rate = source.pair_rate_hz();

    let mut records = Vec::new();
    let emit = |rng: &mut ChaCha8Rng, records: &mut Vec<Record>, t: f64, s: Option<usize>, i: Option<usize>| {
        if let Some(k) = s {
            let p = channels.signal[k];
            let ts = t + p.delay_ps + timing.jitter(rng);
            timing.push(records, p.channel, ts);
        }
        if let Some(k) = i {
            let p = channels.idler[k];
            let ti = t + timing.cavity_delay(rng) + p.delay_ps + timing.jitter(rng);
            timing.push(records, p.channel, ti);
        }
    };

    let generated_pairs = match source.emission {
        Emission::Poisson => {
            let mut total = 0u64;
            for &(s, ps) in &sig {
                for &(i, pi) in &idl {
                    let n = poisson(&mut rng, rate * duration_s * ps * pi);
                    total += n;
                    if s.is_none() && i.is_none() {
                        continue;
                    }
                    for _ in 0..n {
                        let t = rng.random::<f64>() * duration_ps;
                        emit(&mut rng, &mut records, t, s, i);
                    }
                }
            }
            total
        }
        Emission::Isolated { min_gap_ps } => {
            let mut total = 0u64;
            if rate > 0.0 {
                let wait = Exp::new(rate * 1e-12).expect("positive rate");
                let pick = |u: f64, table: &[(Option<usize>, f64)]| {
                    let mut acc = 0.0;
                    for &(o, p) in table {
                        acc += p;
                        if u < acc {
                            return o;
                        }
                    }
                    None
                };
                let mut t = wait.sample(&mut rng);
                while t < duration_ps {
                    total += 1;
                    let s = pick(rng.random::<f64>(), &sig);
                    let i = pick(rng.random::<f64>(), &idl);
                    emit(&mut rng, &mut records, t, s, i);
                    t += min_gap_ps + wait.sample(&mut rng);
                }
            }
            total
        }
    };

    if source.dark_rate_hz > 0.0 {
        for ch in 0..channels.channel_count {
            let n = poisson(&mut rng, source.dark_rate_hz * duration_s);
            for _ in 0..n {
                let t = rng.random::<f64>() * duration_ps;
                timing.push(&mut records, ch as u8, t);
            }
        }
    }
    // Stable: simultaneous clicks on one channel keep generation order.
    records.sort_by_key(|r| (r.timestamp_ps, r.channel));
    let stream = EventStream::new(records, channels.channel_count, duration_ps as u64, seed)?;
    Ok(Simulation {
        stream,
        generated_pairs,
    })
}
