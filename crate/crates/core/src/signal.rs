//! Domain types shared across the sorter: traces, candidates, sorted spikes
//! and the sorter configuration.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A single channel of sampled voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    pub samples: Vec<f32>,
    pub sample_rate_hz: f64,
    pub channel_id: u32,
}

impl RawTrace {
    pub fn new(samples: Vec<f32>, sample_rate_hz: f64, channel_id: u32) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            channel_id,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }
}

/// A fixed-length waveform segment aligned on its extremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCandidate {
    pub waveform: Vec<f64>,
    pub peak_index: usize,
    pub timestamp_samples: u64,
    /// Set when alignment had to clamp the extremum at the window edge.
    #[serde(default)]
    pub clamped: bool,
}

impl SpikeCandidate {
    pub fn new(waveform: Vec<f64>, peak_index: usize, timestamp_samples: u64) -> Self {
        Self {
            waveform,
            peak_index,
            timestamp_samples,
            clamped: false,
        }
    }

    pub fn len(&self) -> usize {
        self.waveform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waveform.is_empty()
    }

    /// True when the largest absolute value sits at `peak_index`.
    pub fn is_peak_aligned(&self) -> bool {
        let Some(peak) = self.waveform.get(self.peak_index) else {
            return false;
        };
        let max = self.waveform.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        peak.abs() >= max
    }
}

/// Label attached to a sorted spike.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Unit {
    /// Assigned during the initial state; no perception node crossed threshold.
    Provisional,
    /// 1-based perception node id.
    Node(u32),
}

impl Unit {
    pub fn id(self) -> Option<u32> {
        match self {
            Unit::Provisional => None,
            Unit::Node(id) => Some(id),
        }
    }

    pub fn is_provisional(self) -> bool {
        matches!(self, Unit::Provisional)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Unit::Provisional => f.write_str("PROVISIONAL"),
            Unit::Node(id) => write!(f, "{id}"),
        }
    }
}

impl Serialize for Unit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Unit::Provisional => s.serialize_str("PROVISIONAL"),
            Unit::Node(id) => s.serialize_u32(*id),
        }
    }
}

impl<'de> Deserialize<'de> for Unit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Label(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(0) => Err(serde::de::Error::custom("unit ids start at 1")),
            Raw::Id(id) => Ok(Unit::Node(id)),
            Raw::Label(s) if s == "PROVISIONAL" => Ok(Unit::Provisional),
            Raw::Label(s) => Err(serde::de::Error::custom(format!("unknown unit label {s:?}"))),
        }
    }
}

/// One line of sorter output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SortedSpike {
    pub channel_id: u32,
    pub timestamp_samples: u64,
    pub unit: Unit,
    pub potential: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub timestamp_samples: u64,
    pub unit: u32,
}

/// Every tunable of the sorter. Field names double as CLI flag names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SorterConfig {
    /// Lower bound of the receptive field interval.
    pub i_min: f64,
    /// Upper bound of the receptive field interval.
    pub i_max: f64,
    /// Receptive field shape factor, in [1, 2].
    pub beta: f64,
    /// Mean distance between neighbouring receptive field centers.
    pub d_r: f64,
    /// Firing threshold as a fraction of the window length.
    pub th_d_factor: f64,
    pub tau_h_plus: f64,
    pub tau_h_minus: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Candidate length N.
    pub window_len: usize,
    /// Index of the extremum inside an aligned candidate.
    pub align_index: usize,
    pub perception_nodes: usize,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// NEO threshold multiplier applied to the running mean.
    pub detect_k: f64,
    /// Length of the trailing NEO averaging window.
    pub detect_window_s: f64,
    /// Detections whose filtered extremum is smaller than this are dropped.
    pub detect_min_amplitude: f64,
    /// Detections whose filtered extremum is smaller than this multiple of
    /// the estimated noise standard deviation are dropped.
    pub detect_min_snr: f64,
    pub align_iterations: usize,
    pub upsample_factor: usize,
    pub seed: u64,
    /// Threshold encoder activations at 0.5 instead of drawing events.
    pub deterministic: bool,
    /// Matching tolerance used by evaluation.
    pub tolerance_ms: f64,
    /// Fire count a node needs before it is reported as a valid unit.
    pub min_fires: u64,
}

impl Default for SorterConfig {
    fn default() -> Self {
        default_config()
    }
}

pub fn default_config() -> SorterConfig {
    SorterConfig {
        i_min: -200.0,
        i_max: 200.0,
        beta: 2.0,
        d_r: 13.0,
        th_d_factor: 0.4,
        tau_h_plus: 0.2,
        tau_h_minus: 0.1,
        w_min: 0.0,
        w_max: 1.0,
        window_len: 64,
        align_index: 20,
        perception_nodes: 9,
        band_low_hz: 300.0,
        band_high_hz: 3000.0,
        detect_k: 8.0,
        detect_window_s: 1.0,
        detect_min_amplitude: 20.0,
        detect_min_snr: 4.0,
        align_iterations: 5,
        upsample_factor: 4,
        seed: 0,
        deterministic: false,
        tolerance_ms: 0.5,
        min_fires: 10,
    }
}

impl SorterConfig {
    /// Perception node firing threshold.
    pub fn th_d(&self) -> f64 {
        self.window_len as f64 * self.th_d_factor
    }

    /// Number of receptive field nodes per time point.
    pub fn encoder_nodes(&self) -> usize {
        let ratio = (self.i_max - self.i_min) / self.d_r;
        // guard against 30.000000001 rounding up
        (ratio - 1e-9).ceil().max(0.0) as usize
    }

    pub fn tolerance_samples(&self, sample_rate_hz: f64) -> u64 {
        (self.tolerance_ms * 1e-3 * sample_rate_hz).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let v = validate_config(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    EmptyInterval,
    BetaOutOfRange(f64),
    NonPositive(&'static str),
    Negative(&'static str),
    WeightBounds,
    TooFewEncoderNodes(usize),
    AlignIndexOutOfWindow { align_index: usize, window_len: usize },
    BadPassband { low: f64, high: f64 },
    NonFinite(&'static str),
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::EmptyInterval => f.write_str("empty receptive field interval"),
            ConfigViolation::BetaOutOfRange(b) => write!(f, "β out of [1,2] (got {b})"),
            ConfigViolation::NonPositive(name) => write!(f, "{name} must be positive"),
            ConfigViolation::Negative(name) => write!(f, "{name} must not be negative"),
            ConfigViolation::WeightBounds => f.write_str("w_min must be below w_max"),
            ConfigViolation::TooFewEncoderNodes(m) => {
                write!(f, "receptive field needs at least 3 nodes, got {m}")
            }
            ConfigViolation::AlignIndexOutOfWindow {
                align_index,
                window_len,
            } => write!(f, "align_index {align_index} outside window of {window_len}"),
            ConfigViolation::BadPassband { low, high } => {
                write!(f, "passband [{low}, {high}] Hz is not a valid band")
            }
            ConfigViolation::NonFinite(name) => write!(f, "{name} must be finite"),
        }
    }
}

/// Checks every invariant and returns all violations found.
pub fn validate_config(cfg: &SorterConfig) -> Vec<ConfigViolation> {
    use ConfigViolation::*;
    let mut out = Vec::new();

    let reals = [
        ("i_min", cfg.i_min),
        ("i_max", cfg.i_max),
        ("beta", cfg.beta),
        ("d_r", cfg.d_r),
        ("th_d_factor", cfg.th_d_factor),
        ("tau_h_plus", cfg.tau_h_plus),
        ("tau_h_minus", cfg.tau_h_minus),
        ("w_min", cfg.w_min),
        ("w_max", cfg.w_max),
        ("band_low_hz", cfg.band_low_hz),
        ("band_high_hz", cfg.band_high_hz),
        ("detect_k", cfg.detect_k),
        ("detect_window_s", cfg.detect_window_s),
        ("detect_min_amplitude", cfg.detect_min_amplitude),
        ("detect_min_snr", cfg.detect_min_snr),
        ("tolerance_ms", cfg.tolerance_ms),
    ];
    for (name, v) in reals {
        if !v.is_finite() {
            out.push(NonFinite(name));
        }
    }

    for (name, v) in [
        ("detect_min_amplitude", cfg.detect_min_amplitude),
        ("detect_min_snr", cfg.detect_min_snr),
    ] {
        if v < 0.0 {
            out.push(Negative(name));
        }
    }
    if cfg.i_min >= cfg.i_max {
        out.push(EmptyInterval);
    }
    if !(1.0..=2.0).contains(&cfg.beta) {
        out.push(BetaOutOfRange(cfg.beta));
    }
    if cfg.w_min >= cfg.w_max {
        out.push(WeightBounds);
    }
    for (name, v) in [
        ("d_r", cfg.d_r),
        ("th_d_factor", cfg.th_d_factor),
        ("tau_h_plus", cfg.tau_h_plus),
        ("tau_h_minus", cfg.tau_h_minus),
        ("detect_k", cfg.detect_k),
        ("detect_window_s", cfg.detect_window_s),
        ("tolerance_ms", cfg.tolerance_ms),
    ] {
        if !(v > 0.0) {
            out.push(NonPositive(name));
        }
    }
    for (name, v) in [
        ("window_len", cfg.window_len),
        ("perception_nodes", cfg.perception_nodes),
        ("align_iterations", cfg.align_iterations),
        ("upsample_factor", cfg.upsample_factor),
    ] {
        if v == 0 {
            out.push(NonPositive(name));
        }
    }
    if cfg.i_min < cfg.i_max && cfg.d_r > 0.0 {
        let m = cfg.encoder_nodes();
        if m < 3 {
            out.push(TooFewEncoderNodes(m));
        }
    }
    if cfg.window_len > 0 && cfg.align_index >= cfg.window_len {
        out.push(AlignIndexOutOfWindow {
            align_index: cfg.align_index,
            window_len: cfg.window_len,
        });
    }
    if !(cfg.band_low_hz > 0.0 && cfg.band_low_hz < cfg.band_high_hz) {
        out.push(BadPassband {
            low: cfg.band_low_hz,
            high: cfg.band_high_hz,
        });
    }
    out
}

/// Derives an independent seed for `stream` from a master seed (SplitMix64).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_parameter_table() {
        let cfg = default_config();
        assert!((cfg.th_d() - 25.6).abs() < 1e-12);
        assert_eq!(cfg.encoder_nodes(), 31);
        assert_eq!(cfg.perception_nodes, 9);
        assert_eq!((cfg.band_low_hz, cfg.band_high_hz), (300.0, 3000.0));
        assert_eq!((cfg.w_min, cfg.w_max), (0.0, 1.0));
        assert_eq!(cfg.tolerance_samples(30_000.0), 15);
    }

    #[test]
    fn defaults_are_valid() {
        assert!(validate_config(&default_config()).is_empty());
    }

    #[test]
    fn beta_out_of_range_is_reported() {
        let cfg = SorterConfig {
            beta: 3.0,
            ..default_config()
        };
        let v = validate_config(&cfg);
        assert_eq!(v, vec![ConfigViolation::BetaOutOfRange(3.0)]);
        assert!(v[0].to_string().contains("β out of [1,2]"));
    }

    #[test]
    fn every_violation_is_reported() {
        let cfg = SorterConfig {
            i_min: 5.0,
            i_max: 5.0,
            beta: 0.5,
            w_min: 1.0,
            w_max: 1.0,
            tau_h_plus: 0.0,
            ..default_config()
        };
        let v = validate_config(&cfg);
        assert!(v.contains(&ConfigViolation::EmptyInterval));
        assert!(v.contains(&ConfigViolation::BetaOutOfRange(0.5)));
        assert!(v.contains(&ConfigViolation::WeightBounds));
        assert!(v.contains(&ConfigViolation::NonPositive("tau_h_plus")));
        assert_eq!(v.len(), 4);
        assert_eq!(
            ConfigViolation::EmptyInterval.to_string(),
            "empty receptive field interval"
        );
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = default_config();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: SorterConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unit_serializes_as_number_or_label() {
        assert_eq!(serde_json::to_string(&Unit::Node(4)).unwrap(), "4");
        assert_eq!(
            serde_json::to_string(&Unit::Provisional).unwrap(),
            "\"PROVISIONAL\""
        );
        let u: Unit = serde_json::from_str("\"PROVISIONAL\"").unwrap();
        assert_eq!(u, Unit::Provisional);
        assert!(serde_json::from_str::<Unit>("0").is_err());
    }

    #[test]
    fn raw_trace_rejects_non_finite() {
        let err = RawTrace::new(vec![0.0, f32::NAN], 30_000.0, 0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteSample { index: 1 }));
        assert!(RawTrace::new(vec![], 0.0, 0).is_err());
    }
}
