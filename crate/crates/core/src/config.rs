//! Run configuration: a TOML document with fixed sections, every key optional
//! and defaulted, unknown keys rejected.
//!
//! Errors name the offending key path (`resonator.families[0].q_loaded`) and,
//! where the key appears in the file, its line.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::entanglement::UmiConfig;
use crate::material::{ZELMON_EXTRAORDINARY, ZELMON_ORDINARY, ZELMON_RANGE_UM};
use crate::pair_statistics::coincidence::{DEFAULT_OFFSETS_NS, DEFAULT_PEAK_SEARCH_PS, DEFAULT_WINDOW_PS};
use crate::pair_statistics::source::{DelaySign, DEFAULT_ARM_LOSSES_DB};
use crate::phase_matching::MIN_GRID_POINTS;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {} does not exist", path.display())]
    MissingFile { path: PathBuf },
    #[error("cannot read config file {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("syntax error{}: {message}", at_line(*line))]
    Syntax { line: Option<usize>, message: String },
    #[error("unknown key `{key}`{}", at_line(*line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("missing required key `{key}`{}", at_line(*line))]
    MissingKey { key: String, line: Option<usize> },
    #[error("type mismatch at `{key}`{}: {message}", at_line(*line))]
    TypeMismatch {
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("invalid value for `{key}`{}: {message}", at_line(*line))]
    Invariant {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

fn at_line(line: Option<usize>) -> String {
    line.map_or_else(String::new, |l| format!(" (line {l})"))
}

impl ConfigError {
    /// Key path the error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::MissingKey { key, .. }
            | ConfigError::TypeMismatch { key, .. }
            | ConfigError::Invariant { key, .. } => Some(key),
            _ => None,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. }
            | ConfigError::UnknownKey { line, .. }
            | ConfigError::MissingKey { line, .. }
            | ConfigError::TypeMismatch { line, .. }
            | ConfigError::Invariant { line, .. } => *line,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Spectrum,
    Scan,
    Coinc,
    G2,
    Franson,
    PowerSweep,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::Spectrum => "spectrum",
            Experiment::Scan => "scan",
            Experiment::Coinc => "coinc",
            Experiment::G2 => "g2",
            Experiment::Franson => "franson",
            Experiment::PowerSweep => "power_sweep",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub parallelism: usize,
    pub output: OutputConfig,
    pub material: MaterialConfig,
    pub resonator: ResonatorConfig,
    pub matching: MatchingConfig,
    pub source: SourceConfig,
    pub coincidence: CoincidenceConfig,
    pub dwdm: DwdmConfig,
    pub spectrum: SpectrumConfig,
    pub g2: G2Config,
    pub umi: UmiSection,
    pub power_sweep: PowerSweepConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Spectrum,
            seed: 1,
            parallelism: 0,
            output: OutputConfig::default(),
            material: MaterialConfig::default(),
            resonator: ResonatorConfig::default(),
            matching: MatchingConfig::default(),
            source: SourceConfig::default(),
            coincidence: CoincidenceConfig::default(),
            dwdm: DwdmConfig::default(),
            spectrum: SpectrumConfig::default(),
            g2: G2Config::default(),
            umi: UmiSection::default(),
            power_sweep: PowerSweepConfig::default(),
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    /// Ordinary Sellmeier pairs `[B₁, C₁, B₂, C₂, …]`, `n² = 1 + Σ Bλ²/(λ² − C)`, λ in µm.
    pub sellmeier_o: Vec<f64>,
    pub sellmeier_e: Vec<f64>,
    pub d22_pm_per_v: f64,
    pub d31_pm_per_v: f64,
    pub valid_range_um: [f64; 2],
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig {
            sellmeier_o: ZELMON_ORDINARY.to_vec(),
            sellmeier_e: ZELMON_EXTRAORDINARY.to_vec(),
            d22_pm_per_v: crate::material::DEFAULT_D22_PM_PER_V,
            d31_pm_per_v: crate::material::DEFAULT_D31_PM_PER_V,
            valid_range_um: [ZELMON_RANGE_UM.0, ZELMON_RANGE_UM.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleName {
    Pump,
    Signal,
    Idler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolarizationName {
    #[serde(rename = "TE", alias = "te")]
    Te,
    #[serde(rename = "TM", alias = "tm")]
    Tm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub id: String,
    pub role: RoleName,
    pub polarization: PolarizationName,
    #[serde(default)]
    pub radial_number: u32,
    pub q_loaded: f64,
    /// Calibrate the index slope to this FSR at `resonator.calibration_nm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_fsr_nm: Option<f64>,
    /// Pin a resonance of order `pin_m` at this wavelength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin_nm: Option<f64>,
    /// Pin a resonance at the energy-conjugate of another family's pin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conjugate_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin_m: Option<i64>,
    /// Index offset when the family is not pinned.
    #[serde(default)]
    pub index_offset: f64,
    /// Make the group index stationary at `resonator.calibration_nm`.
    #[serde(default)]
    pub flat_group_index: bool,
}

impl FamilyConfig {
    fn base(id: &str, role: RoleName, polarization: PolarizationName, radial_number: u32, q_loaded: f64) -> Self {
        FamilyConfig {
            id: id.to_string(),
            role,
            polarization,
            radial_number,
            q_loaded,
            target_fsr_nm: None,
            pin_nm: None,
            conjugate_of: None,
            pin_m: None,
            index_offset: 0.0,
            flat_group_index: false,
        }
    }
}

/// Signal anchors of the six broadband TE/TM family pairs [nm], spaced by a sixth of their FSR.
pub const BROADBAND_ANCHORS_NM: [f64; 6] = [1550.30, 1550.93, 1551.56, 1552.19, 1552.82, 1553.45];
/// Azimuthal orders `(m_signal, m_idler)` of the broadband anchors.
pub const BROADBAND_ORDERS: [(i64, i64); 6] = [(382, 411), (382, 411), (382, 411), (382, 411), (381, 412), (381, 412)];
pub const BROADBAND_FSR_NM: f64 = 3.78;

/// The replication device: a high-order TM pump family, the fundamental
/// TE/TM pair matched at 1552.52 nm with Δm = 1, and six group-velocity
/// matched, dispersion-flattened higher-order pairs.
pub fn default_families() -> Vec<FamilyConfig> {
    use PolarizationName::{Te, Tm};
    use RoleName::{Idler, Pump, Signal};
    let mut out = vec![
        FamilyConfig {
            pin_nm: Some(774.86),
            pin_m: Some(792),
            ..FamilyConfig::base("pump", Pump, Tm, 4, 2.9e5)
        },
        FamilyConfig {
            pin_nm: Some(1552.52),
            pin_m: Some(386),
            target_fsr_nm: Some(3.89),
            ..FamilyConfig::base("te0", Signal, Te, 0, 1.0e5)
        },
        FamilyConfig {
            conjugate_of: Some("te0".into()),
            pin_m: Some(407),
            target_fsr_nm: Some(3.67),
            ..FamilyConfig::base("tm0", Idler, Tm, 0, 1.0e5)
        },
    ];
    for (k, (&anchor, &(ms, mi))) in BROADBAND_ANCHORS_NM.iter().zip(&BROADBAND_ORDERS).enumerate() {
        let p = k as u32 + 1;
        let te = format!("te{p}");
        out.push(FamilyConfig {
            pin_nm: Some(anchor),
            pin_m: Some(ms),
            target_fsr_nm: Some(BROADBAND_FSR_NM),
            flat_group_index: true,
            ..FamilyConfig::base(&te, Signal, Te, p, 1.0e5)
        });
        out.push(FamilyConfig {
            conjugate_of: Some(te),
            pin_m: Some(mi),
            target_fsr_nm: Some(BROADBAND_FSR_NM),
            flat_group_index: true,
            ..FamilyConfig::base(&format!("tm{p}"), Idler, Tm, p, 1.0e5)
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonatorConfig {
    pub radius_um: f64,
    pub thickness_um: f64,
    pub wedge_angle_deg: f64,
    /// Wavelength at which FSR targets and dispersion flattening apply [nm].
    pub calibration_nm: f64,
    pub families: Vec<FamilyConfig>,
}

impl Default for ResonatorConfig {
    fn default() -> Self {
        ResonatorConfig {
            radius_um: 46.5,
            thickness_um: 0.9,
            wedge_angle_deg: 35.0,
            calibration_nm: 1552.0,
            families: default_families(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampConfig {
    pub cutoff_nm: f64,
    pub ghz_per_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    pub linewidth_ghz: f64,
    pub window_fraction: f64,
    pub overlap_fundamental: f64,
    /// Overlap when signal and idler share a higher radial number.
    pub overlap_higher: f64,
    /// Overlap when signal and idler radial numbers differ.
    pub overlap_mixed: f64,
    pub grid_points: usize,
    pub n_turns: usize,
    /// Signal band of `scan` [nm].
    pub scan_band_nm: [f64; 2],
    /// Signal band over which generated pairs are shared out [nm].
    pub generation_band_nm: [f64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp: Option<RampConfig>,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            linewidth_ghz: 0.3,
            window_fraction: 0.5,
            overlap_fundamental: 1.0,
            overlap_higher: 0.3,
            overlap_mixed: 0.3,
            grid_points: crate::phase_matching::DEFAULT_GRID_POINTS,
            n_turns: 1,
            scan_band_nm: [1500.0, 1700.0],
            generation_band_nm: [1450.0, 1750.0],
            ramp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionName {
    #[default]
    Poisson,
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub pgr_slope_mhz_per_uw: f64,
    pub pump_power_uw: f64,
    pub saturation: bool,
    /// Operating point `[power µW, rate MHz]` the saturation curve passes through.
    pub saturation_point: [f64; 2],
    pub pair_lifetime_ps: f64,
    pub delay_sign: DelaySign,
    pub emission: EmissionName,
    /// Minimum spacing of isolated pairs [ps].
    pub min_gap_ps: f64,
    pub signal_loss_db: Vec<f64>,
    pub idler_loss_db: Vec<f64>,
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_sigma_ps: f64,
    /// Run length of `simulate` and `coinc` [s].
    pub duration_s: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pgr_slope_mhz_per_uw: 5.13,
            pump_power_uw: 46.5,
            saturation: false,
            saturation_point: [27.3, 136.5],
            pair_lifetime_ps: 200.0,
            delay_sign: DelaySign::IdlerLate,
            emission: EmissionName::Poisson,
            min_gap_ps: 10_000.0,
            signal_loss_db: DEFAULT_ARM_LOSSES_DB.to_vec(),
            idler_loss_db: DEFAULT_ARM_LOSSES_DB.to_vec(),
            detector_efficiency: 0.85,
            dark_rate_hz: 100.0,
            jitter_sigma_ps: 40.0,
            duration_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoincidenceConfig {
    pub window_ps: f64,
    pub offsets_ns: Vec<f64>,
    pub peak_search_ps: f64,
    pub bin_width_ps: u64,
    pub span_ps: u64,
}

impl Default for CoincidenceConfig {
    fn default() -> Self {
        CoincidenceConfig {
            window_ps: DEFAULT_WINDOW_PS,
            offsets_ns: DEFAULT_OFFSETS_NS.to_vec(),
            peak_search_ps: DEFAULT_PEAK_SEARCH_PS,
            bin_width_ps: 50,
            span_ps: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DwdmConfig {
    pub start_nm: f64,
    pub width_nm: f64,
    pub channels: usize,
    pub insertion_loss_db: f64,
}

impl Default for DwdmConfig {
    fn default() -> Self {
        DwdmConfig {
            start_nm: 1535.0,
            width_nm: 0.8,
            channels: 38,
            insertion_loss_db: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub integration_s: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { integration_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct G2Config {
    /// Pair rate summed over all channels [MHz].
    pub collective_pgr_mhz: f64,
    pub tau_max_ns: f64,
    pub tau_step_ns: f64,
    /// Fraction of the signal sent to detector s₁.
    pub split: f64,
    pub duration_s: f64,
    /// Include transmission losses and darks in the heralded run.
    pub lossy: bool,
}

impl Default for G2Config {
    fn default() -> Self {
        G2Config {
            collective_pgr_mhz: 70.2,
            tau_max_ns: 50.0,
            tau_step_ns: 1.0,
            split: 0.5,
            duration_s: 2.0,
            lossy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UmiSection {
    pub arm_delay_ns: f64,
    pub phase_xi: f64,
    pub short_transmission: f64,
    pub long_transmission: f64,
    pub rad_per_kelvin: f64,
    pub intrinsic_visibility: f64,
    pub xi_steps: usize,
    pub integration_s: f64,
    /// Duration of the event-level run that measures the three peaks [s].
    pub peak_run_s: f64,
}

impl Default for UmiSection {
    fn default() -> Self {
        let u = UmiConfig::default();
        UmiSection {
            arm_delay_ns: u.arm_delay_ns,
            phase_xi: u.phase_xi,
            short_transmission: u.short_transmission,
            long_transmission: u.long_transmission,
            rad_per_kelvin: u.rad_per_kelvin,
            intrinsic_visibility: u.intrinsic_visibility,
            xi_steps: 32,
            integration_s: 120.0,
            peak_run_s: 1.0,
        }
    }
}

impl UmiSection {
    pub fn umi(&self) -> UmiConfig {
        UmiConfig {
            arm_delay_ns: self.arm_delay_ns,
            phase_xi: self.phase_xi,
            short_transmission: self.short_transmission,
            long_transmission: self.long_transmission,
            rad_per_kelvin: self.rad_per_kelvin,
            intrinsic_visibility: self.intrinsic_visibility,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSweepConfig {
    pub powers_uw: Vec<f64>,
    pub duration_s: f64,
}

impl Default for PowerSweepConfig {
    fn default() -> Self {
        PowerSweepConfig {
            powers_uw: vec![0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            duration_s: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted key path, e.g. `source.pump_power_uw` or `resonator.families[1].q_loaded`.
    pub variable: String,
    pub values: Vec<toml::Value>,
}

/// Documented defaults, one `key = value` per line. Kept in sync with
/// [`RunConfig::default`] by a test.
pub const DEFAULTS_HELP: &str = "\
experiment = \"spectrum\"
seed = 1
parallelism = 0
output.format = \"csv\"
material.sellmeier_o = [2.6734, 0.01764, 1.229, 0.05914, 12.614, 474.6]
material.sellmeier_e = [2.9804, 0.02047, 0.5981, 0.0666, 8.9543, 416.08]
material.d22_pm_per_v = 2.1
material.d31_pm_per_v = -4.35
material.valid_range_um = [0.4, 5.0]
resonator.radius_um = 46.5
resonator.thickness_um = 0.9
resonator.wedge_angle_deg = 35.0
resonator.calibration_nm = 1552.0
matching.linewidth_ghz = 0.3
matching.window_fraction = 0.5
matching.overlap_fundamental = 1.0
matching.overlap_higher = 0.3
matching.overlap_mixed = 0.3
matching.grid_points = 4096
matching.n_turns = 1
matching.scan_band_nm = [1500.0, 1700.0]
matching.generation_band_nm = [1450.0, 1750.0]
source.pgr_slope_mhz_per_uw = 5.13
source.pump_power_uw = 46.5
source.saturation = false
source.saturation_point = [27.3, 136.5]
source.pair_lifetime_ps = 200.0
source.delay_sign = \"idler_late\"
source.emission = \"poisson\"
source.min_gap_ps = 10000.0
source.signal_loss_db = [2.2, 2.4, 8.7, 3.0, 0.2118929906993808, 3.78]
source.idler_loss_db = [2.2, 2.4, 8.7, 3.0, 0.2118929906993808, 3.78]
source.detector_efficiency = 0.85
source.dark_rate_hz = 100.0
source.jitter_sigma_ps = 40.0
source.duration_s = 1.0
coincidence.window_ps = 800.0
coincidence.offsets_ns = [-50.0, -35.0, -20.0, -10.0, -5.0, 5.0, 10.0, 20.0, 35.0, 50.0]
coincidence.peak_search_ps = 5000.0
coincidence.bin_width_ps = 50
coincidence.span_ps = 20000
dwdm.start_nm = 1535.0
dwdm.width_nm = 0.8
dwdm.channels = 38
dwdm.insertion_loss_db = 4.0
spectrum.integration_s = 10.0
g2.collective_pgr_mhz = 70.2
g2.tau_max_ns = 50.0
g2.tau_step_ns = 1.0
g2.split = 0.5
g2.duration_s = 2.0
g2.lossy = false
umi.arm_delay_ns = 1.6
umi.phase_xi = 0.0
umi.short_transmission = 0.5
umi.long_transmission = 0.5
umi.rad_per_kelvin = 1.0
umi.intrinsic_visibility = 0.97
umi.xi_steps = 32
umi.integration_s = 120.0
umi.peak_run_s = 1.0
power_sweep.powers_uw = [0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0]
power_sweep.duration_s = 0.2
resonator.families = the replication device (pump, te0/tm0, te1..te6/tm1..tm6); see configs/paper_replication.toml
";

/// Splits `a.b[2].c` into segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Key(String),
    Index(usize),
}

pub fn parse_key_path(path: &str) -> Option<Vec<Segment>> {
    let mut out = Vec::new();
    for part in path.split('.') {
        let (name, mut rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if name.is_empty() {
            return None;
        }
        out.push(Segment::Key(name.to_string()));
        while !rest.is_empty() {
            let close = rest.find(']')?;
            out.push(Segment::Index(rest[1..close].parse().ok()?));
            rest = &rest[close + 1..];
        }
    }
    Some(out)
}

/// 1-based line of the deepest key of `path` present in `src`.
pub fn locate_key(src: &str, path: &str) -> Option<usize> {
    use toml::de::{DeTable, DeValue};
    let segments = parse_key_path(path)?;
    let root = DeTable::parse(src).ok()?;
    let line_of = |offset: usize| src[..offset.min(src.len())].matches('\n').count() + 1;
    let mut found = None;
    let mut table = Some(root.get_ref());
    let mut array: Option<&toml::de::DeArray> = None;
    for seg in &segments {
        let value = match (seg, table, array) {
            (Segment::Key(k), Some(t), _) => {
                let (key, value) = t.get_key_value(k.as_str())?;
                found = Some(line_of(key.span().start));
                value
            }
            (Segment::Index(i), _, Some(a)) => {
                let v = a.get(*i)?;
                found = Some(line_of(v.span().start));
                v
            }
            _ => break,
        };
        (table, array) = match value.get_ref() {
            DeValue::Table(t) => (Some(t), None),
            DeValue::Array(a) => (None, Some(a)),
            _ => (None, None),
        };
    }
    found
}

fn invariant(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invariant {
        key: key.into(),
        line: None,
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        let de = toml::de::Deserializer::parse(src).map_err(|e| ConfigError::Syntax {
            line: e.span().map(|s| src[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut key = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().to_string();
            let line_from_span = inner.span().map(|s| src[..s.start].matches('\n').count() + 1);
            if let Some(field) = backticked(&message, "unknown field") {
                if !key.ends_with(&field) {
                    key = if key == "." || key.is_empty() { field } else { format!("{key}.{field}") };
                }
                ConfigError::UnknownKey {
                    line: line_from_span.or_else(|| locate_key(src, &key)),
                    key,
                }
            } else if let Some(field) = backticked(&message, "missing field") {
                let key = if key == "." || key.is_empty() { field } else { format!("{key}.{field}") };
                ConfigError::MissingKey {
                    line: locate_key(src, key.rsplit_once('.').map_or("", |p| p.0)).or(line_from_span),
                    key,
                }
            } else {
                ConfigError::TypeMismatch {
                    line: line_from_span.or_else(|| locate_key(src, &key)),
                    key,
                    message,
                }
            }
        })?;
        cfg.validate().map_err(|e| match e {
            ConfigError::Invariant { key, message, .. } => ConfigError::Invariant {
                line: locate_key(src, &key),
                key,
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Checks every invariant; errors name the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invariant(key, format!("must be positive, got {v}")))
            }
        };
        let nonneg = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invariant(key, format!("must be ≥ 0, got {v}")))
            }
        };
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(invariant(key, format!("must lie in [0, 1], got {v}")))
            }
        };
        let band = |key: &str, b: [f64; 2]| {
            if b[0] > 0.0 && b[1] > b[0] {
                Ok(())
            } else {
                Err(invariant(key, format!("must be an increasing pair of positive values, got {b:?}")))
            }
        };

        let m = &self.material;
        for (key, c) in [("material.sellmeier_o", &m.sellmeier_o), ("material.sellmeier_e", &m.sellmeier_e)] {
            if c.is_empty() || c.len() % 2 != 0 {
                return Err(invariant(key, format!("needs (B, C) pairs, got {} numbers", c.len())));
            }
        }
        band("material.valid_range_um", m.valid_range_um)?;
        self.material_model()
            .map_err(|e| invariant("material", e.to_string()))?;

        let r = &self.resonator;
        pos("resonator.radius_um", r.radius_um)?;
        pos("resonator.thickness_um", r.thickness_um)?;
        pos("resonator.calibration_nm", r.calibration_nm)?;
        if r.families.is_empty() {
            return Err(invariant("resonator.families", "at least one family is required"));
        }
        for (i, f) in r.families.iter().enumerate() {
            let key = |k: &str| format!("resonator.families[{i}].{k}");
            pos(&key("q_loaded"), f.q_loaded)?;
            if let Some(v) = f.target_fsr_nm {
                pos(&key("target_fsr_nm"), v)?;
            }
            if let Some(v) = f.pin_nm {
                pos(&key("pin_nm"), v)?;
            }
            if f.pin_nm.is_some() && f.conjugate_of.is_some() {
                return Err(invariant(key("conjugate_of"), "cannot be combined with pin_nm"));
            }
            let pinned = f.pin_nm.is_some() || f.conjugate_of.is_some();
            match (pinned, f.pin_m) {
                (true, None) => return Err(invariant(key("pin_m"), "is required with pin_nm or conjugate_of")),
                (false, Some(_)) => return Err(invariant(key("pin_m"), "needs pin_nm or conjugate_of")),
                (_, Some(m)) if m <= 0 => return Err(invariant(key("pin_m"), format!("must be positive, got {m}"))),
                _ => {}
            }
            if r.families[..i].iter().any(|g| g.id == f.id) {
                return Err(invariant(key("id"), format!("duplicate family id `{}`", f.id)));
            }
            if let Some(target) = &f.conjugate_of {
                match r.families.iter().find(|g| &g.id == target) {
                    Some(g) if g.pin_nm.is_some() && g.role != RoleName::Pump => {}
                    _ => {
                        return Err(invariant(
                            key("conjugate_of"),
                            format!("`{target}` is not a pinned signal or idler family"),
                        ))
                    }
                }
            }
        }
        let count = |role| r.families.iter().filter(|f| f.role == role).count();
        if count(RoleName::Pump) != 1 {
            return Err(invariant("resonator.families", "exactly one pump family is required"));
        }
        if count(RoleName::Signal) == 0 || count(RoleName::Idler) == 0 {
            return Err(invariant("resonator.families", "signal and idler families are required"));
        }
        let pump = r.families.iter().find(|f| f.role == RoleName::Pump).expect("counted");
        if pump.pin_nm.is_none() {
            return Err(invariant(
                "resonator.families",
                format!("pump family `{}` must be pinned with pin_nm", pump.id),
            ));
        }
        if r.families.iter().any(|f| f.conjugate_of.is_some()) && pump.pin_nm.is_none() {
            return Err(invariant("resonator.families", "conjugate pins need a pinned pump"));
        }

        let mt = &self.matching;
        pos("matching.linewidth_ghz", mt.linewidth_ghz)?;
        pos("matching.window_fraction", mt.window_fraction)?;
        unit("matching.overlap_fundamental", mt.overlap_fundamental)?;
        unit("matching.overlap_higher", mt.overlap_higher)?;
        unit("matching.overlap_mixed", mt.overlap_mixed)?;
        if mt.grid_points < MIN_GRID_POINTS {
            return Err(invariant(
                "matching.grid_points",
                format!("must be at least {MIN_GRID_POINTS}, got {}", mt.grid_points),
            ));
        }
        if mt.n_turns == 0 {
            return Err(invariant("matching.n_turns", "must be at least 1"));
        }
        band("matching.scan_band_nm", mt.scan_band_nm)?;
        band("matching.generation_band_nm", mt.generation_band_nm)?;
        if let Some(rp) = mt.ramp {
            pos("matching.ramp.cutoff_nm", rp.cutoff_nm)?;
            nonneg("matching.ramp.ghz_per_nm", rp.ghz_per_nm)?;
        }

        let s = &self.source;
        nonneg("source.pgr_slope_mhz_per_uw", s.pgr_slope_mhz_per_uw)?;
        nonneg("source.pump_power_uw", s.pump_power_uw)?;
        nonneg("source.pair_lifetime_ps", s.pair_lifetime_ps)?;
        nonneg("source.min_gap_ps", s.min_gap_ps)?;
        unit("source.detector_efficiency", s.detector_efficiency)?;
        nonneg("source.dark_rate_hz", s.dark_rate_hz)?;
        nonneg("source.jitter_sigma_ps", s.jitter_sigma_ps)?;
        pos("source.duration_s", s.duration_s)?;
        for (name, losses) in [("signal_loss_db", &s.signal_loss_db), ("idler_loss_db", &s.idler_loss_db)] {
            for (k, &l) in losses.iter().enumerate() {
                nonneg(&format!("source.{name}[{k}]"), l)?;
            }
        }
        if s.saturation {
            let [p, rate] = s.saturation_point;
            if !(p > 0.0 && rate > 0.0 && rate < s.pgr_slope_mhz_per_uw * p) {
                return Err(invariant(
                    "source.saturation_point",
                    format!("[{p}, {rate}] must lie below the linear rate {} MHz", s.pgr_slope_mhz_per_uw * p),
                ));
            }
        }

        let c = &self.coincidence;
        pos("coincidence.window_ps", c.window_ps)?;
        pos("coincidence.peak_search_ps", c.peak_search_ps)?;
        if c.offsets_ns.is_empty() {
            return Err(invariant("coincidence.offsets_ns", "needs at least one offset window"));
        }
        if c.offsets_ns.iter().any(|o| o.abs() * 1e3 < c.window_ps) {
            return Err(invariant("coincidence.offsets_ns", "offset windows must not overlap the peak window"));
        }
        if c.bin_width_ps == 0 {
            return Err(invariant("coincidence.bin_width_ps", "must be at least 1 ps"));
        }

        let d = &self.dwdm;
        pos("dwdm.width_nm", d.width_nm)?;
        pos("dwdm.start_nm", d.start_nm)?;
        nonneg("dwdm.insertion_loss_db", d.insertion_loss_db)?;
        if d.channels == 0 {
            return Err(invariant("dwdm.channels", "must be at least 1"));
        }
        pos("spectrum.integration_s", self.spectrum.integration_s)?;

        let g = &self.g2;
        nonneg("g2.collective_pgr_mhz", g.collective_pgr_mhz)?;
        pos("g2.tau_max_ns", g.tau_max_ns)?;
        pos("g2.tau_step_ns", g.tau_step_ns)?;
        pos("g2.duration_s", g.duration_s)?;
        if !(g.split > 0.0 && g.split < 1.0) {
            return Err(invariant("g2.split", format!("must lie strictly between 0 and 1, got {}", g.split)));
        }

        let u = &self.umi;
        self.umi
            .umi()
            .validate(c.window_ps)
            .map_err(|e| invariant("umi", e.to_string()))?;
        if u.xi_steps < 8 {
            return Err(invariant("umi.xi_steps", format!("must be at least 8, got {}", u.xi_steps)));
        }
        pos("umi.integration_s", u.integration_s)?;
        pos("umi.peak_run_s", u.peak_run_s)?;

        let ps = &self.power_sweep;
        pos("power_sweep.duration_s", ps.duration_s)?;
        for (k, &p) in ps.powers_uw.iter().enumerate() {
            pos(&format!("power_sweep.powers_uw[{k}]"), p)?;
        }

        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(invariant("sweep.values", "needs at least one value"));
            }
            if sw.variable.starts_with("sweep") {
                return Err(invariant("sweep.variable", "cannot sweep the sweep itself"));
            }
            let value = toml::Value::try_from(self).expect("serializable");
            if lookup(&value, &sw.variable).is_none() {
                return Err(invariant(
                    "sweep.variable",
                    format!("`{}` does not name a configuration key", sw.variable),
                ));
            }
        }
        Ok(())
    }

    pub fn material_model(&self) -> crate::Result<crate::material::Material<f64>> {
        let m = &self.material;
        Ok(crate::material::Material {
            sellmeier: crate::material::SellmeierSet::new(
                m.sellmeier_o.clone(),
                m.sellmeier_e.clone(),
                (m.valid_range_um[0], m.valid_range_um[1]),
            )?,
            tensor: crate::material::NonlinearTensor::new(m.d22_pm_per_v, m.d31_pm_per_v)?,
        })
    }

    /// Copy of this config with the value at `path` replaced.
    pub fn with_value(&self, path: &str, value: toml::Value) -> Result<Self, ConfigError> {
        let mut doc = toml::Value::try_from(self).expect("serializable");
        let slot = lookup_mut(&mut doc, path).ok_or_else(|| invariant(path, "does not name a configuration key"))?;
        *slot = value;
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::TypeMismatch {
            key: path.to_string(),
            line: None,
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn backticked(message: &str, prefix: &str) -> Option<String> {
    let rest = &message[message.find(prefix)? + prefix.len()..];
    let start = rest.find('`')? + 1;
    let end = start + rest[start..].find('`')?;
    Some(rest[start..end].to_string())
}

/// Value at a key path inside a TOML value.
pub fn lookup<'a>(value: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    let mut v = value;
    for seg in parse_key_path(path)? {
        v = match seg {
            Segment::Key(k) => v.as_table()?.get(&k)?,
            Segment::Index(i) => v.as_array()?.get(i)?,
        };
    }
    Some(v)
}

fn lookup_mut<'a>(value: &'a mut toml::Value, path: &str) -> Option<&'a mut toml::Value> {
    let mut v = value;
    for seg in parse_key_path(path)? {
        v = match seg {
            Segment::Key(k) => v.as_table_mut()?.get_mut(&k)?,
            Segment::Index(i) => v.as_array_mut()?.get_mut(i)?,
        };
    }
    Some(v)
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    if !path.exists() {
        return Err(ConfigError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_toml_str(&src)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml_str("experiment = \"spectrum\"\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn negative_q_names_the_key_and_line() {
        let src = "experiment = \"spectrum\"\n\n[[resonator.families]]\nid = \"p\"\nrole = \"pump\"\npolarization = \"TM\"\npin_nm = 774.86\npin_m = 792\nq_loaded = -5.0\n";
        let err = RunConfig::from_toml_str(src).unwrap_err();
        match &err {
            ConfigError::Invariant { key, line, .. } => {
                assert_eq!(key, "resonator.families[0].q_loaded");
                assert_eq!(*line, Some(9));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_kinds_are_distinct() {
        let unknown = RunConfig::from_toml_str("[source]\npower = 3.0\n").unwrap_err();
        assert!(matches!(&unknown, ConfigError::UnknownKey { key, line: Some(2) } if key == "source.power"), "{unknown:?}");
        let mismatch = RunConfig::from_toml_str("seed = 1\n[source]\npump_power_uw = \"high\"\n").unwrap_err();
        assert!(
            matches!(&mismatch, ConfigError::TypeMismatch { key, line: Some(3), .. } if key == "source.pump_power_uw"),
            "{mismatch:?}"
        );
        let missing = RunConfig::from_toml_str("[[resonator.families]]\nid = \"x\"\n").unwrap_err();
        assert!(matches!(missing, ConfigError::MissingKey { .. }), "{missing:?}");
        let syntax = RunConfig::from_toml_str("seed = = 1\n").unwrap_err();
        assert!(matches!(syntax, ConfigError::Syntax { line: Some(1), .. }), "{syntax:?}");
        let file = load_config(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(matches!(file, ConfigError::MissingFile { .. }));
    }

    #[test]
    fn key_paths() {
        assert_eq!(
            parse_key_path("resonator.families[2].q_loaded").unwrap(),
            vec![
                Segment::Key("resonator".into()),
                Segment::Key("families".into()),
                Segment::Index(2),
                Segment::Key("q_loaded".into())
            ]
        );
        assert!(parse_key_path("a..b").is_none());
        let cfg = RunConfig::default();
        let changed = cfg.with_value("source.pump_power_uw", toml::Value::Float(3.0)).unwrap();
        assert_eq!(changed.source.pump_power_uw, 3.0);
        let changed = cfg.with_value("resonator.families[1].q_loaded", toml::Value::Float(2e5)).unwrap();
        assert_eq!(changed.resonator.families[1].q_loaded, 2e5);
        assert!(cfg.with_value("source.nope", toml::Value::Float(1.0)).is_err());
        assert!(cfg.with_value("source.pump_power_uw", toml::Value::String("x".into())).is_err());
    }

    #[test]
    fn help_defaults_match_applied_defaults() {
        let applied = toml::Value::try_from(RunConfig::default()).unwrap();
        let mut checked = 0;
        for line in DEFAULTS_HELP.lines() {
            let (key, text) = line.split_once(" = ").unwrap();
            if key == "resonator.families" {
                let fams = lookup(&applied, key).unwrap().as_array().unwrap();
                assert_eq!(fams.len(), 15);
                continue;
            }
            let doc: toml::Table = toml::from_str(&format!("v = {text}")).unwrap();
            let documented = &doc["v"];
            let actual = lookup(&applied, key).unwrap_or_else(|| panic!("{key} missing"));
            assert_eq!(documented, actual, "{key}");
            checked += 1;
        }
        // Every scalar leaf of the defaults is documented.
        fn leaves(v: &toml::Value, prefix: String, out: &mut Vec<String>) {
            match v {
                toml::Value::Table(t) => {
                    for (k, v) in t {
                        let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        leaves(v, p, out);
                    }
                }
                _ => out.push(prefix),
            }
        }
        let mut all = Vec::new();
        leaves(&applied, String::new(), &mut all);
        all.retain(|k| k != "resonator.families");
        assert_eq!(checked, all.len(), "{all:?}");
    }
}
