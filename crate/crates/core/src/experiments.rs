//! Named experiments wired from a [`RunConfig`]: each returns a [`Table`].
//!
//! Results are independent of the worker count: parallel stages collect in
//! input order and every stochastic point draws from its own derived seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::config::{EmissionName, Experiment, FamilyConfig, PolarizationName, RoleName, RunConfig};
use crate::entanglement::{classical_fringe, extract_visibility, peak_counts, phase_grid, quantum_fringe, sample_counts, apply_umi, PeakCounts};
use crate::error::{Error, Result};
use crate::pair_statistics::closed_form::best_capture;
use crate::pair_statistics::coincidence::{heralded_g2, histogram, two_fold_metrics, TwoFoldResult, TwoFoldSettings};
use crate::pair_statistics::dwdm::DwdmGrid;
use crate::pair_statistics::events::EventStream;
use crate::pair_statistics::source::{generate_events, ChannelMap, Emission, SaturationPoint, Simulation, SourceModel};
use crate::phase_matching::{
    accumulate_intensity, bandwidth_scan, enumerate_triples, AmplitudePrefactor, Cavity, DetuningRamp, IntensityTrace,
    PhaseProfile, ScanEntry, ScanSettings, Triple,
};
use crate::resonator::{
    calibrate_family, flatten_group_index, fsr, mode_near, pin_resonance, resonance_comb, DiskGeometry, ModeFamily,
    ModePolarization, ResonatorMode, Role,
};
use crate::scalar::{frequency_ghz, wavelength_nm};
use crate::table::{Cell, Table};

/// One round of the splitmix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sweep point `index`: `mix64(seed ^ index)`. Adding points never
/// changes the seeds of existing ones.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ index)
}

/// Runs `f` on a pool with `parallelism` workers (0 = one per core).
pub fn with_parallelism<R: Send>(parallelism: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Signal wavelength whose energy-conjugate partner for `pump_nm` is `signal_nm`.
pub fn conjugate_nm(pump_nm: f64, signal_nm: f64) -> f64 {
    wavelength_nm(frequency_ghz(pump_nm) - frequency_ghz(signal_nm))
}

/// Calibrated cavity, its mode families and the pinned pump resonance.
#[derive(Debug, Clone)]
pub struct Device {
    pub cavity: Cavity<f64>,
    pub families: Vec<ModeFamily<f64>>,
    pub pump: ResonatorMode<f64>,
}

impl Device {
    pub fn with_role(&self, role: Role) -> Vec<ModeFamily<f64>> {
        self.families.iter().filter(|f| f.role == role).cloned().collect()
    }

    pub fn family(&self, id: &str) -> Option<&ModeFamily<f64>> {
        self.families.iter().find(|f| f.id == id)
    }
}

fn role_of(r: RoleName) -> Role {
    match r {
        RoleName::Pump => Role::Pump,
        RoleName::Signal => Role::Signal,
        RoleName::Idler => Role::Idler,
    }
}

fn polarization_of(p: PolarizationName) -> ModePolarization {
    match p {
        PolarizationName::Te => ModePolarization::Te,
        PolarizationName::Tm => ModePolarization::Tm,
    }
}

fn pump_config(cfg: &RunConfig) -> &FamilyConfig {
    cfg.resonator
        .families
        .iter()
        .find(|f| f.role == RoleName::Pump)
        .expect("validated config has a pump family")
}

/// Builds every family: pin (directly or at the energy conjugate of another
/// family's pin), optionally flatten the group index, then calibrate the FSR,
/// all at `resonator.calibration_nm`.
pub fn build_device(cfg: &RunConfig) -> Result<Device> {
    let material = cfg.material_model()?;
    let r = &cfg.resonator;
    let geometry = DiskGeometry::new(r.radius_um, r.thickness_um, r.wedge_angle_deg)?;
    let pump_nm = pump_config(cfg).pin_nm.expect("validated pump is pinned");
    let mut families = Vec::with_capacity(r.families.len());
    for fc in &r.families {
        let mut fam = ModeFamily::new(
            fc.id.clone(),
            role_of(fc.role),
            polarization_of(fc.polarization),
            fc.radial_number,
            fc.q_loaded,
        )?;
        let pin = match (&fc.pin_nm, &fc.conjugate_of) {
            (Some(nm), _) => Some(*nm),
            (None, Some(other)) => {
                let anchor = r
                    .families
                    .iter()
                    .find(|g| &g.id == other)
                    .and_then(|g| g.pin_nm)
                    .expect("validated conjugate target is pinned");
                Some(conjugate_nm(pump_nm, anchor))
            }
            (None, None) => None,
        };
        match (pin, fc.pin_m) {
            (Some(nm), Some(m)) => fam = pin_resonance(&fam, &material, &geometry, nm, m)?,
            _ => fam.correction.offset = fc.index_offset,
        }
        if fc.flat_group_index {
            fam = flatten_group_index(&fam, &material, r.calibration_nm)?;
        }
        if let Some(target) = fc.target_fsr_nm {
            fam = calibrate_family(&fam, &material, &geometry, target, r.calibration_nm)?;
        }
        families.push(fam);
    }
    let cavity = Cavity { material, geometry };
    let pump_family = families.iter().find(|f| f.role == Role::Pump).expect("validated");
    let pump_fc = pump_config(cfg);
    let pump = mode_near(pump_family, &cavity.material, &cavity.geometry, pump_nm, 1.0)?
        .filter(|m| Some(m.m) == pump_fc.pin_m)
        .ok_or_else(|| Error::Calibration(format!("pump family `{}` has no resonance at {pump_nm} nm", pump_fc.id)))?;
    Ok(Device { cavity, families, pump })
}

pub fn scan_settings(cfg: &RunConfig) -> ScanSettings<f64> {
    let m = &cfg.matching;
    ScanSettings {
        linewidth_ghz: m.linewidth_ghz,
        window_fraction: m.window_fraction,
        overlap_fundamental: m.overlap_fundamental,
        overlap_higher: m.overlap_higher,
        overlap_mixed: m.overlap_mixed,
        points_per_turn: m.grid_points,
        n_turns: m.n_turns,
        ramp: m.ramp.map(|r| DetuningRamp {
            cutoff_nm: r.cutoff_nm,
            ghz_per_nm: r.ghz_per_nm,
        }),
    }
}

pub fn source_model(cfg: &RunConfig) -> SourceModel {
    let s = &cfg.source;
    SourceModel {
        pgr_slope_mhz_per_uw: s.pgr_slope_mhz_per_uw,
        pump_power_uw: s.pump_power_uw,
        saturation: s.saturation.then_some(SaturationPoint {
            power_uw: s.saturation_point[0],
            rate_mhz: s.saturation_point[1],
        }),
        pair_lifetime_ps: s.pair_lifetime_ps,
        delay_sign: s.delay_sign,
        signal_losses_db: s.signal_loss_db.clone(),
        idler_losses_db: s.idler_loss_db.clone(),
        detector_efficiency: s.detector_efficiency,
        dark_rate_hz: s.dark_rate_hz,
        jitter_sigma_ps: s.jitter_sigma_ps,
        emission: match s.emission {
            EmissionName::Poisson => Emission::Poisson,
            EmissionName::Isolated => Emission::Isolated { min_gap_ps: s.min_gap_ps },
        },
    }
}

/// The same source emitting a fixed pair rate, independent of pump power.
pub fn fixed_rate(source: &SourceModel, rate_hz: f64) -> SourceModel {
    SourceModel {
        pgr_slope_mhz_per_uw: rate_hz * 1e-6,
        pump_power_uw: 1.0,
        saturation: None,
        ..source.clone()
    }
}

pub fn two_fold_settings(cfg: &RunConfig) -> TwoFoldSettings {
    let c = &cfg.coincidence;
    TwoFoldSettings {
        window_ps: c.window_ps,
        offsets_ps: c.offsets_ns.iter().map(|o| o * 1e3).collect(),
        peak_search_ps: c.peak_search_ps,
    }
}

pub fn dwdm_grid(cfg: &RunConfig) -> Result<DwdmGrid> {
    let d = &cfg.dwdm;
    DwdmGrid::new(d.start_nm, d.width_nm, d.channels, d.insertion_loss_db)
}

/// Capture of true pairs by the best-placed coincidence window, with both
/// detectors' jitter.
pub fn window_capture(source: &SourceModel, window_ps: f64) -> f64 {
    best_capture(window_ps, source.pair_lifetime_ps, source.jitter_sigma_ps * std::f64::consts::SQRT_2).0
}

fn parse_band(band: (f64, f64)) -> Result<(f64, f64)> {
    if band.0 > 0.0 && band.1 > band.0 {
        Ok(band)
    } else {
        Err(Error::InvalidArgument(format!("band [{}, {}] nm must be increasing and positive", band.0, band.1)))
    }
}

/// Resonance combs of every family. Pump families are listed over the
/// half-wavelength band.
pub fn run_modes(cfg: &RunConfig, band_nm: Option<(f64, f64)>) -> Result<Table> {
    let device = build_device(cfg)?;
    let band = parse_band(band_nm.unwrap_or((cfg.matching.scan_band_nm[0], cfg.matching.scan_band_nm[1])))?;
    let mut t = Table::new(["family_id", "m", "wavelength_nm", "n_eff", "linewidth_GHz"]);
    for fam in &device.families {
        let b = if fam.role == Role::Pump { (band.0 / 2.0, band.1 / 2.0) } else { band };
        for mode in resonance_comb(fam, &device.cavity.material, &device.cavity.geometry, b)? {
            t.push(vec![
                fam.id.as_str().into(),
                mode.m.into(),
                mode.wavelength_nm.into(),
                mode.n_eff.into(),
                mode.linewidth_ghz.into(),
            ]);
        }
    }
    Ok(t)
}

/// Per-family FSR and group index at the calibration wavelength.
pub fn run_family_summary(cfg: &RunConfig) -> Result<Table> {
    let device = build_device(cfg)?;
    let at = cfg.resonator.calibration_nm;
    let mut t = Table::new(["family_id", "role", "polarization", "radial_number", "fsr_nm", "group_index"]);
    for fam in &device.families {
        let lam = if fam.role == Role::Pump { device.pump.wavelength_nm } else { at };
        t.push(vec![
            fam.id.as_str().into(),
            format!("{:?}", fam.role).to_lowercase().into(),
            format!("{:?}", fam.polarization).to_uppercase().into(),
            fam.radial_number.into(),
            fsr(fam, &device.cavity.material, &device.cavity.geometry, lam)?.into(),
            fam.group_index(&device.cavity.material, lam / 1000.0)?.into(),
        ]);
    }
    Ok(t)
}

fn triple_row(t: &Triple<f64>) -> Vec<Cell> {
    vec![
        t.signal.family.id.as_str().into(),
        t.idler.family.id.as_str().into(),
        t.signal.m.into(),
        t.idler.m.into(),
        t.pump.m.into(),
        t.signal.wavelength_nm.into(),
        t.idler.wavelength_nm.into(),
        t.delta_m.into(),
    ]
}

const TRIPLE_COLUMNS: [&str; 8] = [
    "signal_family",
    "idler_family",
    "m_signal",
    "m_idler",
    "m_pump",
    "signal_nm",
    "idler_nm",
    "delta_m",
];

/// Candidate triples within ten matching windows of energy conservation over
/// the scan band, with the window decision.
pub fn run_match(cfg: &RunConfig, band_nm: Option<(f64, f64)>) -> Result<Table> {
    let device = build_device(cfg)?;
    let settings = scan_settings(cfg);
    let band = parse_band(band_nm.unwrap_or((cfg.matching.scan_band_nm[0], cfg.matching.scan_band_nm[1])))?;
    let tol = 10.0 * settings.half_window_ghz();
    let (mat, geo) = (&device.cavity.material, &device.cavity.geometry);
    let mut signals = Vec::new();
    for f in device.with_role(Role::Signal) {
        signals.extend(resonance_comb(&f, mat, geo, band)?);
    }
    let idler_band = (conjugate_nm(device.pump.wavelength_nm, band.1) - 5.0, conjugate_nm(device.pump.wavelength_nm, band.0) + 5.0);
    let mut idlers = Vec::new();
    for f in device.with_role(Role::Idler) {
        idlers.extend(resonance_comb(&f, mat, geo, idler_band)?);
    }
    let mut triples = enumerate_triples(&device.pump, &signals, &idlers, tol);
    triples.sort_by(|a, b| a.signal.wavelength_nm.total_cmp(&b.signal.wavelength_nm));
    let mut t = Table::new(TRIPLE_COLUMNS.iter().copied().chain(["delta_f_ghz", "matched"]));
    for tr in &triples {
        let df = settings.effective_delta_f(tr);
        let mut row = triple_row(tr);
        row.push(df.into());
        row.push((df.abs() <= settings.half_window_ghz()).into());
        t.push(row);
    }
    Ok(t)
}

/// Matched triples with their integrated conversion strengths.
pub fn scan_entries(cfg: &RunConfig, device: &Device, band_nm: (f64, f64)) -> Result<Vec<ScanEntry<f64>>> {
    bandwidth_scan(
        &device.cavity,
        &device.pump,
        &device.with_role(Role::Signal),
        &device.with_role(Role::Idler),
        parse_band(band_nm)?,
        &scan_settings(cfg),
    )
}

/// Bandwidth scan: matched triples in the band with relative strengths.
pub fn run_scan(cfg: &RunConfig, band_nm: Option<(f64, f64)>) -> Result<Table> {
    let device = build_device(cfg)?;
    let band = band_nm.unwrap_or((cfg.matching.scan_band_nm[0], cfg.matching.scan_band_nm[1]));
    let entries = scan_entries(cfg, &device, band)?;
    let mut t = Table::new(TRIPLE_COLUMNS.iter().copied().chain(["delta_f_ghz", "intensity", "strength"]));
    for e in &entries {
        let mut row = triple_row(&e.triple);
        row.extend([e.delta_f_ghz.into(), e.intensity.into(), e.strength.into()]);
        t.push(row);
    }
    Ok(t)
}

/// The triple used for single-triple traces: the first signal family's mode
/// nearest its pin (or the calibration wavelength) with the first idler
/// family's mode nearest its energy conjugate.
pub fn reference_triple(cfg: &RunConfig, device: &Device) -> Result<Triple<f64>> {
    let (mat, geo) = (&device.cavity.material, &device.cavity.geometry);
    let sig_cfg = cfg.resonator.families.iter().find(|f| f.role == RoleName::Signal).expect("validated");
    let idl_cfg = cfg.resonator.families.iter().find(|f| f.role == RoleName::Idler).expect("validated");
    let sig_fam = device.family(&sig_cfg.id).expect("built");
    let idl_fam = device.family(&idl_cfg.id).expect("built");
    let target = sig_cfg.pin_nm.unwrap_or(cfg.resonator.calibration_nm);
    let signal = mode_near(sig_fam, mat, geo, target, 10.0)?
        .ok_or_else(|| Error::InvalidArgument(format!("family `{}` has no mode near {target} nm", sig_fam.id)))?;
    let conj = conjugate_nm(device.pump.wavelength_nm, signal.wavelength_nm);
    let idler = mode_near(idl_fam, mat, geo, conj, 10.0)?
        .ok_or_else(|| Error::InvalidArgument(format!("family `{}` has no mode near {conj} nm", idl_fam.id)))?;
    Ok(Triple::new(device.pump.clone(), signal, idler))
}

/// Intensity build-up along the rim for the reference triple with its
/// azimuthal mismatch replaced by `delta_m`.
pub fn trace(cfg: &RunConfig, delta_m: i64, n_turns: usize) -> Result<IntensityTrace<f64>> {
    let device = build_device(cfg)?;
    let triple = reference_triple(cfg, &device)?;
    let profile = PhaseProfile::new(&triple, &device.cavity)?.with_delta_m(triple.delta_m, delta_m);
    let settings = scan_settings(cfg);
    let prefactor = AmplitudePrefactor::for_triple(&triple, settings.overlap_for(&triple))?;
    accumulate_intensity(
        &profile,
        &device.cavity.material.tensor.d_eff_fourier(),
        &prefactor,
        cfg.matching.grid_points,
        n_turns,
    )
}

/// `theta_rad, intensity` rows, every `stride`-th grid point plus the last.
pub fn run_trace(cfg: &RunConfig, delta_m: i64, n_turns: usize, stride: usize) -> Result<Table> {
    let tr = trace(cfg, delta_m, n_turns)?;
    let stride = stride.max(1);
    let mut t = Table::new(["theta_rad", "intensity"]);
    let last = tr.theta.len() - 1;
    for k in (0..=last).filter(|k| k % stride == 0 || *k == last) {
        t.push(vec![tr.theta[k].into(), tr.intensity[k].into()]);
    }
    Ok(t)
}

/// Share of generated pairs whose signal falls in each DWDM channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelShare {
    pub channel: usize,
    pub lower_nm: f64,
    pub center_nm: f64,
    pub upper_nm: f64,
    pub triples: usize,
    pub share: f64,
}

/// Per-channel pair shares. Each matched triple over the generation band is
/// weighted by its conversion intensity and the Lorentzian overlap of its
/// residual mismatch with the cavity line; shares are normalised over the
/// whole generation band.
pub fn channel_shares(cfg: &RunConfig, device: &Device) -> Result<Vec<ChannelShare>> {
    let g = cfg.matching.generation_band_nm;
    let entries = scan_entries(cfg, device, (g[0], g[1]))?;
    let half = scan_settings(cfg).half_window_ghz();
    let weight = |e: &ScanEntry<f64>| e.intensity / (1.0 + (e.delta_f_ghz / half).powi(2));
    let total: f64 = entries.iter().map(weight).sum();
    let grid = dwdm_grid(cfg)?;
    let mut out: Vec<ChannelShare> = (0..grid.channels)
        .map(|k| ChannelShare {
            channel: k,
            lower_nm: grid.lower_nm(k),
            center_nm: grid.center_nm(k),
            upper_nm: grid.lower_nm(k) + grid.width_nm,
            triples: 0,
            share: 0.0,
        })
        .collect();
    for e in &entries {
        if let Some(k) = grid.channel_of(e.triple.signal.wavelength_nm) {
            out[k].triples += 1;
            if total > 0.0 {
                out[k].share += weight(e) / total;
            }
        }
    }
    Ok(out)
}

/// Largest channel share of the generated pairs.
pub fn peak_share(cfg: &RunConfig, device: &Device) -> Result<f64> {
    Ok(channel_shares(cfg, device)?.iter().map(|c| c.share).fold(0.0, f64::max))
}

/// Coincidences per DWDM channel over `spectrum.integration_s`: pair rate ×
/// channel share × both arms' transmissions (DWDM included) × window capture.
/// `counts` is a Poisson draw around `expected_counts`.
pub fn run_spectrum(cfg: &RunConfig) -> Result<Table> {
    let device = build_device(cfg)?;
    let shares = channel_shares(cfg, &device)?;
    let grid = dwdm_grid(cfg)?;
    let source = source_model(cfg);
    let (eta_s, eta_i) = source.arm_transmissions();
    let capture = window_capture(&source, cfg.coincidence.window_ps);
    let scale = source.pair_rate_hz() * eta_s * eta_i * grid.transmission().powi(2) * capture * cfg.spectrum.integration_s;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = Table::new(["channel", "lower_nm", "center_nm", "upper_nm", "triples", "expected_counts", "counts"]);
    for c in &shares {
        let expected = scale * c.share;
        let counts = if expected > 0.0 {
            Poisson::new(expected).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(&mut rng) as u64
        } else {
            0
        };
        t.push(vec![
            c.channel.into(),
            c.lower_nm.into(),
            c.center_nm.into(),
            c.upper_nm.into(),
            c.triples.into(),
            expected.into(),
            counts.into(),
        ]);
    }
    Ok(t)
}

/// Two-fold event run of the configured source.
pub fn run_simulate(cfg: &RunConfig, duration_s: f64) -> Result<Simulation> {
    generate_events(&source_model(cfg), &ChannelMap::two_fold(), duration_s, cfg.seed)
}

pub fn simulation_summary(sim: &Simulation) -> Table {
    let mut t = Table::new(["channel", "records"]);
    for ch in 0..sim.stream.channel_count {
        t.push(vec![ch.into(), sim.stream.count(ch as u8).into()]);
    }
    t.with_leading(&[
        ("duration_s", sim.stream.duration_s().into()),
        ("generated_pairs", sim.generated_pairs.into()),
        ("seed", sim.stream.seed.into()),
    ])
}

const TWO_FOLD_COLUMNS: [&str; 9] = [
    "n1",
    "n2",
    "n12",
    "duration_s",
    "peak_delay_ps",
    "accidentals",
    "pgr_estimate_hz",
    "car",
    "car_sigma",
];

fn two_fold_row(r: &TwoFoldResult) -> Vec<Cell> {
    vec![
        r.n1.into(),
        r.n2.into(),
        r.n12.into(),
        r.duration_s.into(),
        r.peak_delay_ps.into(),
        r.accidentals.into(),
        r.pgr_estimate.into(),
        r.car.into(),
        r.car_sigma.into(),
    ]
}

/// Singles, coincidences, accidentals, PGR estimate and CAR between channels 0 and 1.
pub fn run_coinc(cfg: &RunConfig, stream: &EventStream) -> Result<Table> {
    let r = two_fold_metrics(stream, 0, 1, &two_fold_settings(cfg))?;
    let mut t = Table::new(TWO_FOLD_COLUMNS);
    t.push(two_fold_row(&r));
    Ok(t)
}

/// `t₁ − t₀` delay histogram.
pub fn run_histogram(cfg: &RunConfig, stream: &EventStream) -> Result<Table> {
    let h = histogram(stream, 0, 1, cfg.coincidence.bin_width_ps, cfg.coincidence.span_ps)?;
    let mut t = Table::new(["delay_ps", "counts"]);
    for (d, c) in h.delays_ps.iter().zip(&h.counts) {
        t.push(vec![(*d).into(), (*c).into()]);
    }
    Ok(t)
}

/// One two-fold run per pump power, each with seed `derive_seed(seed, index)`.
pub fn run_power_sweep(cfg: &RunConfig, powers_uw: &[f64]) -> Result<Table> {
    let base = source_model(cfg);
    let settings = two_fold_settings(cfg);
    let duration = cfg.power_sweep.duration_s;
    let rows = powers_uw
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            if !(p > 0.0) {
                return Err(Error::InvalidArgument(format!("pump power must be positive, got {p} µW")));
            }
            let source = base.clone().with_power(p);
            let sim = generate_events(&source, &ChannelMap::two_fold(), duration, derive_seed(cfg.seed, i as u64))?;
            let r = two_fold_metrics(&sim.stream, 0, 1, &settings)?;
            let mut row: Vec<Cell> = vec![p.into(), source.pair_rate_hz().into(), sim.true_rate_hz().into()];
            row.extend(two_fold_row(&r));
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(["power_uw", "pair_rate_hz", "generated_rate_hz"].into_iter().chain(TWO_FOLD_COLUMNS));
    for row in rows {
        t.push(row);
    }
    Ok(t)
}

/// Least-squares slope through the origin.
pub fn slope_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    sxy / sxx
}

/// One-parameter fit of `rate = slope·P/(1 + P/P_sat)` with known slope;
/// returns `P_sat` [µW] minimising the squared residual.
pub fn fit_saturation_power(powers_uw: &[f64], rates_mhz: &[f64], slope_mhz_per_uw: f64) -> Result<f64> {
    if powers_uw.len() != rates_mhz.len() || powers_uw.is_empty() {
        return Err(Error::InvalidArgument("saturation fit needs matching, nonempty power and rate lists".into()));
    }
    let sse = |log_ps: f64| {
        let ps = log_ps.exp();
        powers_uw
            .iter()
            .zip(rates_mhz)
            .map(|(&p, &r)| (r - slope_mhz_per_uw * p / (1.0 + p / ps)).powi(2))
            .sum::<f64>()
    };
    // Golden-section search in ln P_sat over [1e-3, 1e9] µW.
    let (mut a, mut b) = (1e-3f64.ln(), 1e9f64.ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..300 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if sse(c) <= sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let ps = (0.5 * (a + b)).exp();
    if !(ps.is_finite() && ps > 1e-3 * 1.01 && ps < 1e9 * 0.99) {
        return Err(Error::Fit {
            reason: "saturation power ran to the edge of the search range".into(),
            residual: sse(ps.ln()),
        });
    }
    Ok(ps)
}

/// Pair rate of the brightest DWDM channel: the collective rate (if set)
/// or the source rate at the configured pump power, times the channel share.
pub fn channel_pair_rate_hz(cfg: &RunConfig, device: &Device) -> Result<f64> {
    let collective = if cfg.g2.collective_pgr_mhz > 0.0 {
        cfg.g2.collective_pgr_mhz * 1e6
    } else {
        source_model(cfg).pair_rate_hz()
    };
    Ok(collective * peak_share(cfg, device)?)
}

pub fn g2_taus_ps(cfg: &RunConfig, tau_max_ns: f64) -> Vec<f64> {
    let step = cfg.g2.tau_step_ns;
    let n = (tau_max_ns / step).floor() as i64;
    (-n..=n).map(|k| k as f64 * step * 1e3).collect()
}

/// Heralded `g²(τ)` of the brightest DWDM channel. The signal is split onto
/// two detectors; detection is ideal unless `g2.lossy` is set.
pub fn run_g2(cfg: &RunConfig, tau_max_ns: f64) -> Result<Table> {
    let device = build_device(cfg)?;
    let rate = channel_pair_rate_hz(cfg, &device)?;
    let mut source = fixed_rate(&source_model(cfg), rate);
    if cfg.g2.lossy {
        let db = cfg.dwdm.insertion_loss_db;
        source = source.with_extra_loss(true, db).with_extra_loss(false, db);
    } else {
        source = source.ideal_detection();
    }
    let sim = generate_events(&source, &ChannelMap::heralded(cfg.g2.split), cfg.g2.duration_s, cfg.seed)?;
    g2_table(&sim.stream, &g2_taus_ps(cfg, tau_max_ns), cfg.coincidence.window_ps)
}

/// `g²(τ)` table of a three-channel stream (idler on 0, signal on 1 and 2).
pub fn g2_table(stream: &EventStream, taus_ps: &[f64], window_ps: f64) -> Result<Table> {
    let points = heralded_g2(stream, 0, 1, 2, taus_ps, window_ps)?;
    let mut t = Table::new(["tau_ns", "heralds", "n_is1", "n_is2", "n_is1s2", "g2"]);
    for p in &points {
        t.push(vec![
            (p.tau_ps * 1e-3).into(),
            p.heralds.into(),
            p.n_is1.into(),
            p.n_is2.into(),
            p.n_is1s2.into(),
            p.g2.into(),
        ]);
    }
    Ok(t)
}

/// Expected central-peak fringe parameters of a Franson run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FransonExpectation {
    pub pair_rate_hz: f64,
    /// Fringe amplitude `S` of `S(1 + V cos 2ξ)/2` per phase point.
    pub signal: f64,
    /// Accidentals in the central window per phase point.
    pub background: f64,
    /// Two-photon visibility after arm imbalance, before accidentals.
    pub visibility: f64,
    /// Signal-arm singles per phase point (classical fringe amplitude).
    pub singles: f64,
}

/// Source detected through the configured losses plus one DWDM channel per arm.
pub fn channel_source(cfg: &RunConfig, rate_hz: f64) -> SourceModel {
    let db = cfg.dwdm.insertion_loss_db;
    fixed_rate(&source_model(cfg), rate_hz)
        .with_extra_loss(true, db)
        .with_extra_loss(false, db)
}

pub fn franson_expectation(cfg: &RunConfig, source: &SourceModel, integration_s: f64) -> FransonExpectation {
    let u = &cfg.umi;
    let rate = source.pair_rate_hz();
    let (eta_s, eta_i) = source.arm_transmissions();
    let through = u.short_transmission + u.long_transmission;
    let capture = window_capture(source, cfg.coincidence.window_ps);
    let equal_arms = u.short_transmission.powi(2) + u.long_transmission.powi(2);
    let signal = 2.0 * rate * eta_s * eta_i * equal_arms * capture * integration_s;
    let r_s = rate * eta_s * through + source.dark_rate_hz;
    let r_i = rate * eta_i * through + source.dark_rate_hz;
    let background = r_s * r_i * cfg.coincidence.window_ps * 1e-12 * integration_s;
    let balance = if equal_arms > 0.0 {
        2.0 * u.short_transmission * u.long_transmission / equal_arms
    } else {
        0.0
    };
    FransonExpectation {
        pair_rate_hz: rate,
        signal,
        background,
        visibility: u.intrinsic_visibility * balance,
        singles: r_s * integration_s,
    }
}

/// Quantum (central-peak) and classical fringes over `ξ ∈ [0, 2π)`, Poisson
/// sampled per point with derived seeds, and the fitted two-photon visibility
/// in the last row.
pub fn run_franson(cfg: &RunConfig, xi_steps: usize, integration_s: f64) -> Result<Table> {
    let device = build_device(cfg)?;
    let source = channel_source(cfg, channel_pair_rate_hz(cfg, &device)?);
    franson_table(cfg, &source, xi_steps, integration_s)
}

pub fn franson_table(cfg: &RunConfig, source: &SourceModel, xi_steps: usize, integration_s: f64) -> Result<Table> {
    if xi_steps < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 phase steps, got {xi_steps}")));
    }
    if !(integration_s > 0.0) {
        return Err(Error::InvalidArgument(format!("integration time must be positive, got {integration_s} s")));
    }
    let e = franson_expectation(cfg, source, integration_s);
    let xi = phase_grid(xi_steps, std::f64::consts::TAU);
    let quantum = quantum_fringe(&xi, e.visibility, e.signal, e.background);
    let classical = classical_fringe(&xi, cfg.umi.intrinsic_visibility, e.singles);
    let sampled: Vec<(u64, u64)> = (0..xi_steps)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(cfg.seed, k as u64);
            (sample_counts(&quantum[k..=k], seed)[0], sample_counts(&classical[k..=k], mix64(seed))[0])
        })
        .collect();
    let q: Vec<f64> = sampled.iter().map(|s| s.0 as f64).collect();
    let fit = extract_visibility(&xi, &q)?;
    let mut t = Table::new(["xi_rad", "quantum_counts", "classical_counts", "fit_visibility", "fit_sigma"]);
    for (k, (&x, s)) in xi.iter().zip(&sampled).enumerate() {
        let last = k + 1 == xi_steps;
        t.push(vec![
            x.into(),
            s.0.into(),
            s.1.into(),
            if last { fit.visibility.into() } else { Cell::Empty },
            if last { fit.sigma.into() } else { Cell::Empty },
        ]);
    }
    Ok(t)
}

/// Event-level UMI run: coincidence counts in the three peaks.
pub fn franson_peaks(cfg: &RunConfig, source: &SourceModel, duration_s: f64, seed: u64) -> Result<(PeakCounts, f64)> {
    let umi = cfg.umi.umi();
    umi.validate(cfg.coincidence.window_ps)?;
    let sim = generate_events(source, &ChannelMap::two_fold(), duration_s, seed)?;
    let tagged = apply_umi(&sim.stream, &umi, mix64(seed))?;
    peak_counts(&tagged.stream, 0, 1, umi.arm_delay_ps(), cfg.coincidence.window_ps)
}

/// Runs the configured experiment with its default arguments.
pub fn run_experiment(cfg: &RunConfig) -> Result<Table> {
    match cfg.experiment {
        Experiment::Spectrum => run_spectrum(cfg),
        Experiment::Scan => run_scan(cfg, None),
        Experiment::Coinc => run_coinc(cfg, &run_simulate(cfg, cfg.source.duration_s)?.stream),
        Experiment::G2 => run_g2(cfg, cfg.g2.tau_max_ns),
        Experiment::Franson => run_franson(cfg, cfg.umi.xi_steps, cfg.umi.integration_s),
        Experiment::PowerSweep => run_power_sweep(cfg, &cfg.power_sweep.powers_uw),
    }
}

fn value_cell(v: &toml::Value) -> Cell {
    match v {
        toml::Value::Integer(i) => Cell::Int(*i),
        toml::Value::Float(f) => Cell::Float(*f),
        toml::Value::String(s) => Cell::Text(s.clone()),
        other => Cell::Text(other.to_string()),
    }
}

/// Runs the configured experiment once per sweep value. Point `i` uses seed
/// `derive_seed(seed, i)`; rows are emitted in value order with `point` and
/// the swept value as leading columns.
pub fn run_sweep(cfg: &RunConfig) -> Result<Table> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("no [sweep] section in the configuration".into()))?;
    let points: Vec<RunConfig> = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut c = cfg.with_value(&spec.variable, v.clone())?;
            c.seed = derive_seed(cfg.seed, i as u64);
            c.sweep = None;
            Ok(c)
        })
        .collect::<std::result::Result<_, crate::config::ConfigError>>()?;
    let tables = points.par_iter().map(run_experiment).collect::<Result<Vec<_>>>()?;
    let mut out = Table::default();
    for (i, (t, v)) in tables.into_iter().zip(&spec.values).enumerate() {
        out.extend(t.with_leading(&[("point", i.into()), (spec.variable.as_str(), value_cell(v))]))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn conjugate_wavelength_conserves_energy() {
        let li = conjugate_nm(774.86, 1552.52);
        assert!((frequency_ghz(1552.52) + frequency_ghz(li) - frequency_ghz(774.86)).abs() < 1e-6);
    }

    #[test]
    fn saturation_fit_recovers_power() {
        let p = [1.0, 5.0, 10.0, 20.0, 40.0];
        let r: Vec<f64> = p.iter().map(|&x| 5.13 * x / (1.0 + x / 1050.0)).collect();
        let ps = fit_saturation_power(&p, &r, 5.13).unwrap();
        assert!((ps / 1050.0 - 1.0).abs() < 1e-6, "{ps}");
    }

    #[test]
    fn default_device_pins_the_fundamental_pair() {
        let cfg = RunConfig::default();
        let dev = build_device(&cfg).unwrap();
        assert_eq!(dev.pump.m, 792);
        let t = reference_triple(&cfg, &dev).unwrap();
        assert_eq!(t.delta_m, 1);
        assert!((t.signal.wavelength_nm - 1552.52).abs() < 1e-6);
        assert!(t.delta_f_ghz.abs() < 0.01, "{}", t.delta_f_ghz);
    }
}
