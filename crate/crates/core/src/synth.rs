//! Synthetic recordings with exact ground truth.
//!
//! Units fire as renewal processes with an absolute refractory period. Each
//! spike adds a scaled copy of the unit's template to Gaussian background
//! noise. Variants cover late-onset units, linear amplitude drift, a
//! pre-cut candidate stream with one deforming waveform, and hybrid traces
//! at fixed noise-to-amplitude ratios.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::detect::{RawWindow, ALIGN_PAD};
use crate::preprocess::filter::{design_bandpass, FilterState};
use crate::preprocess::realign;
use crate::signal::{derive_seed, GroundTruthEvent, RawTrace, SpikeCandidate};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 30_000.0;

/// Insertions closer than this are counted as collisions.
pub const COLLISION_WINDOW_MS: f64 = 2.0;

/// Noise levels of the hybrid datasets.
pub const HYBRID_LEVELS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];

const NOISE_STREAM: u64 = 0x6e6f_6973_65;
const ORDER_STREAM: u64 = 0x6f72_6465_72;

/// One Gaussian component of an analytic template, in milliseconds
/// relative to the main extremum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub amplitude: f64,
    pub center_ms: f64,
    pub width_ms: f64,
}

const fn bump(amplitude: f64, center_ms: f64, width_ms: f64) -> Bump {
    Bump {
        amplitude,
        center_ms,
        width_ms,
    }
}

const BUILTIN: [&[Bump]; 3] = [
    &[
        bump(-1.0, 0.0, 0.11),
        bump(0.26, -0.31, 0.21),
        bump(0.39, 0.55, 0.20),
    ],
    &[
        bump(1.0, 0.0, 0.076),
        bump(-0.20, -0.40, 0.275),
        bump(-0.42, 1.23, 0.10),
        bump(-0.45, 1.24, 0.38),
    ],
    &[bump(-1.0, 0.0, 0.081), bump(0.54, -0.36, 0.33)],
];

const HYBRID: [&[Bump]; 3] = [
    &[
        bump(-1.0, 0.0, 0.0623),
        bump(-0.381, 1.019, 0.1014),
        bump(0.793, -0.233, 0.1146),
    ],
    &[
        bump(1.0, 0.0, 0.0694),
        bump(-0.760, -0.365, 0.2995),
        bump(-0.374, 1.294, 0.3816),
        bump(0.305, 0.449, 0.3990),
    ],
    &[
        bump(-1.0, 0.0, 0.0722),
        bump(0.661, -0.303, 0.2780),
        bump(-0.516, 0.444, 0.1878),
    ],
];

/// Default peak amplitude of hybrid spikes, in trace units.
pub const HYBRID_AMPLITUDE: f64 = 55.0;

/// Milliseconds of template kept before and after the main extremum.
const TEMPLATE_PRE_MS: f64 = 4.0 / 3.0;
const TEMPLATE_POST_MS: f64 = 8.0 / 3.0;

/// A spike shape normalized so its largest absolute value is 1, sampled at
/// the trace rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformTemplate {
    pub id: u32,
    pub shape: Vec<f64>,
    /// Index of the main extremum; insertion times refer to this sample.
    pub peak_index: usize,
}

impl WaveformTemplate {
    /// Normalizes `shape` by its largest magnitude, which must sit at `peak_index`.
    pub fn new(id: u32, shape: Vec<f64>, peak_index: usize) -> Result<Self> {
        let max = shape.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::InvalidParameter(format!("template {id} is empty or non-finite")));
        }
        let peak = shape.get(peak_index).copied().unwrap_or(0.0).abs();
        if peak < max {
            return Err(Error::InvalidParameter(format!(
                "template {id} peaks away from index {peak_index}"
            )));
        }
        Ok(Self {
            id,
            shape: shape.into_iter().map(|v| v / max).collect(),
            peak_index,
        })
    }

    /// Sum of Gaussian bumps sampled at `sample_rate_hz`.
    pub fn from_bumps(id: u32, bumps: &[Bump], sample_rate_hz: f64) -> Result<Self> {
        let pre = (TEMPLATE_PRE_MS * 1e-3 * sample_rate_hz).round() as usize;
        let post = (TEMPLATE_POST_MS * 1e-3 * sample_rate_hz).round() as usize;
        let shape = (0..pre + post + 1)
            .map(|j| {
                let t = (j as f64 - pre as f64) / sample_rate_hz * 1e3;
                bumps
                    .iter()
                    .map(|b| {
                        let d = (t - b.center_ms) / b.width_ms;
                        b.amplitude * (-0.5 * d * d).exp()
                    })
                    .sum()
            })
            .collect();
        Self::new(id, shape, pre)
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    /// Signed value at the main extremum (±1).
    pub fn peak_value(&self) -> f64 {
        self.shape[self.peak_index]
    }

    /// `len` samples with the extremum at `align_index`, zero outside the template.
    pub fn crop(&self, len: usize, align_index: usize) -> Vec<f64> {
        (0..len)
            .map(|j| {
                let k = self.peak_index as isize + j as isize - align_index as isize;
                if k >= 0 && (k as usize) < self.shape.len() {
                    self.shape[k as usize]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// The three built-in templates, ids 1 to 3.
pub fn builtin_templates(sample_rate_hz: f64) -> Vec<WaveformTemplate> {
    library(&BUILTIN, sample_rate_hz)
}

/// Narrower shapes used by the hybrid-noise datasets, ids 1 to 3.
pub fn hybrid_templates(sample_rate_hz: f64) -> Vec<WaveformTemplate> {
    library(&HYBRID, sample_rate_hz)
}

fn library(set: &[&[Bump]], sample_rate_hz: f64) -> Vec<WaveformTemplate> {
    set.iter()
        .enumerate()
        .map(|(i, b)| {
            WaveformTemplate::from_bumps(i as u32 + 1, b, sample_rate_hz)
                .expect("built-in templates peak at their first bump")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    White,
    /// White noise band-passed to the spike band, rescaled to the requested std.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub templates: Vec<WaveformTemplate>,
    pub rates_hz: Vec<f64>,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Peak amplitude of an unscaled insertion.
    pub amplitude_scale: f64,
    pub refractory_ms: f64,
    pub noise_std: f64,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl SynthSpec {
    /// Three built-in units at 3, 5 and 8 Hz for 60 s at 30 kHz.
    pub fn standard(seed: u64) -> Self {
        Self {
            templates: builtin_templates(DEFAULT_SAMPLE_RATE_HZ),
            rates_hz: vec![3.0, 5.0, 8.0],
            duration_s: 60.0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            amplitude_scale: 100.0,
            refractory_ms: 3.0,
            noise_std: 5.0,
            noise_kind: NoiseKind::White,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.templates.is_empty() {
            return bad("no templates".into());
        }
        if self.templates.len() != self.rates_hz.len() {
            return bad(format!(
                "{} templates but {} rates",
                self.templates.len(),
                self.rates_hz.len()
            ));
        }
        if let Some(r) = self.rates_hz.iter().find(|r| !(1.0..=10.0).contains(*r)) {
            return bad(format!("firing rate {r} Hz outside [1, 10]"));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {} s", self.duration_s));
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        if !(self.refractory_ms >= 0.0) {
            return bad(format!("refractory period {} ms", self.refractory_ms));
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise std {}", self.noise_std));
        }
        if !(self.amplitude_scale > 0.0) {
            return bad(format!("amplitude scale {}", self.amplitude_scale));
        }
        Ok(())
    }

    fn unit_index(&self, unit: u32) -> Result<usize> {
        self.templates
            .iter()
            .position(|t| t.id == unit)
            .ok_or_else(|| Error::InvalidParameter(format!("no unit {unit}")))
    }
}

/// Generation metadata written next to a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    pub noise_std: f64,
    pub collisions: u64,
    pub unit_counts: BTreeMap<u32, u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inhibited_unit: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub onset_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deforming_unit: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trace: RawTrace,
    pub truth: Vec<GroundTruthEvent>,
    pub meta: DatasetMeta,
}

/// Spike times in seconds of a renewal process with mean rate `rate_hz`:
/// each interval is the refractory period plus an exponential draw.
pub fn gen_spike_times(rate_hz: f64, duration_s: f64, refractory_ms: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spike_times(rate_hz, duration_s, refractory_ms, &mut rng)
}

fn spike_times<R: Rng + ?Sized>(
    rate_hz: f64,
    duration_s: f64,
    refractory_ms: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let refractory = refractory_ms * 1e-3;
    if !(rate_hz > 0.0) || rate_hz * refractory >= 1.0 || refractory < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rate {rate_hz} Hz is infeasible with a {refractory_ms} ms refractory period"
        )));
    }
    let exp = Exp::new(1.0 / (1.0 / rate_hz - refractory))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut out = Vec::new();
    let mut t = exp.sample(rng);
    while t < duration_s {
        out.push(t);
        t += refractory + exp.sample(rng);
    }
    Ok(out)
}

struct Insertion {
    time: u64,
    unit_index: usize,
    ratio: f64,
}

fn background(n: usize, std: f64, kind: NoiseKind, fs: f64, seed: u64) -> Result<Vec<f64>> {
    if std == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let white: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    match kind {
        NoiseKind::White => Ok(white),
        NoiseKind::Filtered => {
            let mut f = FilterState::new(design_bandpass(300.0, 3000.0, fs)?);
            let y: Vec<f64> = white.iter().map(|&x| f.process(x)).collect();
            let rms = (y.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
            let gain = if rms > 0.0 { std / rms } else { 0.0 };
            Ok(y.into_iter().map(|v| v * gain).collect())
        }
    }
}

fn render(
    spec: &SynthSpec,
    insertions: &mut Vec<Insertion>,
    kind: &str,
) -> Result<Dataset> {
    let fs = spec.sample_rate_hz;
    let n = (spec.duration_s * fs).round() as usize;
    let mut x = background(n, spec.noise_std, spec.noise_kind, fs, spec.seed)?;

    insertions.sort_by_key(|i| (i.time, i.unit_index));
    let mut truth = Vec::with_capacity(insertions.len());
    let mut unit_counts = BTreeMap::new();
    for t in &spec.templates {
        unit_counts.insert(t.id, 0);
    }
    for ins in insertions.iter() {
        let tpl = &spec.templates[ins.unit_index];
        let Some(start) = (ins.time as usize).checked_sub(tpl.peak_index) else {
            continue;
        };
        if start + tpl.len() > n {
            continue;
        }
        let a = spec.amplitude_scale * ins.ratio;
        for (j, v) in tpl.shape.iter().enumerate() {
            x[start + j] += a * v;
        }
        truth.push(GroundTruthEvent {
            timestamp_samples: ins.time,
            unit: tpl.id,
        });
        *unit_counts.entry(tpl.id).or_insert(0) += 1;
    }

    let window = (COLLISION_WINDOW_MS * 1e-3 * fs).round() as u64;
    let collisions = truth
        .windows(2)
        .filter(|w| w[1].timestamp_samples - w[0].timestamp_samples < window)
        .count() as u64;

    let samples = x.into_iter().map(|v| v as f32).collect();
    Ok(Dataset {
        trace: RawTrace::new(samples, fs, 0)?,
        truth,
        meta: DatasetMeta {
            kind: kind.into(),
            seed: spec.seed,
            sample_rate_hz: fs,
            duration_s: spec.duration_s,
            noise_std: spec.noise_std,
            collisions,
            unit_counts,
            ..DatasetMeta::default()
        },
    })
}

/// Spike times per unit, each unit drawing from its own seeded stream.
fn unit_trains(spec: &SynthSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    spec.templates
        .iter()
        .zip(&spec.rates_hz)
        .map(|(t, &r)| {
            gen_spike_times(
                r,
                spec.duration_s,
                spec.refractory_ms,
                derive_seed(spec.seed, t.id as u64),
            )
        })
        .collect()
}

fn to_insertions(spec: &SynthSpec, trains: &[Vec<f64>], ratio: impl Fn(usize, usize, &[f64]) -> f64) -> Vec<Insertion> {
    let mut out = Vec::new();
    for (u, times) in trains.iter().enumerate() {
        for (k, &t) in times.iter().enumerate() {
            out.push(Insertion {
                time: (t * spec.sample_rate_hz).round() as u64,
                unit_index: u,
                ratio: ratio(u, k, times),
            });
        }
    }
    out
}

/// Units firing at stable rates with fixed waveforms.
pub fn gen_syn1(spec: &SynthSpec) -> Result<Dataset> {
    let trains = unit_trains(spec)?;
    let mut ins = to_insertions(spec, &trains, |_, _, _| 1.0);
    render(spec, &mut ins, "syn1")
}

/// As [`gen_syn1`], but `inhibited_unit` stays silent for the first
/// `onset_fraction` of the recording.
pub fn gen_syn2(spec: &SynthSpec, inhibited_unit: u32, onset_fraction: f64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&onset_fraction) {
        return Err(Error::InvalidParameter(format!(
            "onset fraction {onset_fraction} outside [0, 1)"
        )));
    }
    let idx = spec.unit_index(inhibited_unit)?;
    let mut trains = unit_trains(spec)?;
    let onset = onset_fraction * spec.duration_s;
    trains[idx].retain(|&t| t >= onset);
    let mut ins = to_insertions(spec, &trains, |_, _, _| 1.0);
    let mut d = render(spec, &mut ins, "syn2")?;
    d.meta.inhibited_unit = Some(inhibited_unit);
    d.meta.onset_fraction = Some(onset_fraction);
    Ok(d)
}

/// As [`gen_syn1`], but the amplitude of `deforming_unit` grows linearly
/// from 1 at its first spike to `max_ratio` at its last.
pub fn gen_syn3(spec: &SynthSpec, deforming_unit: u32, max_ratio: f64) -> Result<Dataset> {
    if !(max_ratio > 1.0 && max_ratio <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "deformation ratio {max_ratio} outside (1, 2]"
        )));
    }
    let idx = spec.unit_index(deforming_unit)?;
    let trains = unit_trains(spec)?;
    let mut ins = to_insertions(spec, &trains, |u, k, times| {
        if u != idx || times.len() < 2 {
            return 1.0;
        }
        let (first, last) = (times[0], times[times.len() - 1]);
        1.0 + (max_ratio - 1.0) * (times[k] - first) / (last - first)
    });
    let mut d = render(spec, &mut ins, "syn3")?;
    d.meta.deforming_unit = Some(deforming_unit);
    d.meta.max_ratio = Some(max_ratio);
    Ok(d)
}

/// Pre-cut candidates of two interleaved waveforms.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisStream {
    pub candidates: Vec<SpikeCandidate>,
    /// Source template id of each candidate.
    pub labels: Vec<u32>,
    /// Amplitude ratio applied to each candidate.
    pub ratios: Vec<f64>,
    /// Global index of the first stretched candidate.
    pub deformation_onset: usize,
}

pub const ANALYSIS_PER_UNIT: usize = 1000;
pub const ANALYSIS_STRETCH_AFTER: usize = 500;
pub const ANALYSIS_NOISE_STD: f64 = 2.0;

/// 1000 copies each of built-in templates 1 and 2 with light white noise,
/// randomly interleaved and aligned into 64-sample candidates peaked at
/// index 20. Template 2 stretches
/// linearly after its 500th occurrence, reaching twice its amplitude at
/// its last.
pub fn gen_analysis_stream(seed: u64) -> AnalysisStream {
    let (len, align) = (64, 20);
    let templates = builtin_templates(DEFAULT_SAMPLE_RATE_HZ);
    let pad = ALIGN_PAD;
    let crops: Vec<Vec<f64>> = templates[..2]
        .iter()
        .map(|t| t.crop(len + 2 * pad, align + pad))
        .collect();
    let mut order: Vec<usize> = [0usize; ANALYSIS_PER_UNIT]
        .into_iter()
        .chain([1usize; ANALYSIS_PER_UNIT])
        .collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, ORDER_STREAM)));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));
    let noise = Normal::new(0.0, ANALYSIS_NOISE_STD).expect("positive std");
    let spacing = (0.1 * DEFAULT_SAMPLE_RATE_HZ) as u64;
    let mut seen = [0usize; 2];
    let mut out = AnalysisStream {
        candidates: Vec::with_capacity(order.len()),
        labels: Vec::with_capacity(order.len()),
        ratios: Vec::with_capacity(order.len()),
        deformation_onset: order.len(),
    };
    let span = (ANALYSIS_PER_UNIT - ANALYSIS_STRETCH_AFTER) as f64;
    for (i, &u) in order.iter().enumerate() {
        seen[u] += 1;
        let k = seen[u];
        let ratio = if u == 1 && k > ANALYSIS_STRETCH_AFTER {
            if out.deformation_onset == order.len() {
                out.deformation_onset = i;
            }
            1.0 + (k - ANALYSIS_STRETCH_AFTER) as f64 / span
        } else {
            1.0
        };
        let mut w: Vec<f64> = crops[u].iter().map(|v| 100.0 * ratio * v).collect();
        for v in w.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        let coarse = (pad + align - 2..=pad + align + 2)
            .max_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()))
            .expect("non-empty range");
        let window = RawWindow {
            samples: w,
            peak_index: coarse,
            peak_timestamp: (i as u64 + 1) * spacing + coarse as u64 - (pad + align) as u64,
        };
        let r = realign(&window, len, align, 5, 4).expect("window longer than candidate");
        out.candidates.push(r.candidate);
        out.labels.push(templates[u].id);
        out.ratios.push(ratio);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSpec {
    pub templates: Vec<WaveformTemplate>,
    /// Background noise std as a fraction of the template peak amplitude.
    pub noise_level: f64,
    pub spike_count: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub amplitude_scale: f64,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl HybridSpec {
    pub fn standard(noise_level: f64, seed: u64) -> Self {
        Self {
            templates: hybrid_templates(DEFAULT_SAMPLE_RATE_HZ),
            noise_level,
            spike_count: 849,
            duration_s: 60.0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            amplitude_scale: HYBRID_AMPLITUDE,
            noise_kind: NoiseKind::White,
            seed,
        }
    }
}

/// Background noise at `noise_level` times the peak amplitude with
/// `spike_count` template copies at random non-overlapping times, units
/// chosen uniformly.
pub fn gen_hybrid(spec: &HybridSpec) -> Result<Dataset> {
    if !(spec.noise_level > 0.0 && spec.noise_level.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise level {} must be positive",
            spec.noise_level
        )));
    }
    if spec.templates.is_empty() {
        return Err(Error::InvalidParameter("no templates".into()));
    }
    let fs = spec.sample_rate_hz;
    let n = (spec.duration_s * fs).round() as u64;
    let longest = spec.templates.iter().map(|t| t.len()).max().unwrap_or(0) as u64;
    let margin = longest;
    let capacity = n.saturating_sub(2 * margin) / longest.max(1);
    if (spec.spike_count as u64) * 2 > capacity {
        return Err(Error::InvalidParameter(format!(
            "{} spikes do not fit in {} s without overlap",
            spec.spike_count, spec.duration_s
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, ORDER_STREAM));
    let mut times: Vec<u64> = Vec::with_capacity(spec.spike_count);
    while times.len() < spec.spike_count {
        let t = rng.random_range(margin..n - margin);
        let pos = times.partition_point(|&s| s < t);
        let clear_before = pos == 0 || t - times[pos - 1] >= longest;
        let clear_after = pos == times.len() || times[pos] - t >= longest;
        if clear_before && clear_after {
            times.insert(pos, t);
        }
    }
    let mut ins: Vec<Insertion> = times
        .into_iter()
        .map(|time| Insertion {
            time,
            unit_index: rng.random_range(0..spec.templates.len()),
            ratio: 1.0,
        })
        .collect();

    let synth = SynthSpec {
        templates: spec.templates.clone(),
        rates_hz: vec![1.0; spec.templates.len()],
        duration_s: spec.duration_s,
        sample_rate_hz: fs,
        amplitude_scale: spec.amplitude_scale,
        refractory_ms: 0.0,
        noise_std: spec.noise_level * spec.amplitude_scale,
        noise_kind: spec.noise_kind,
        seed: spec.seed,
    };
    let mut d = render(&synth, &mut ins, "hybrid")?;
    d.meta.noise_level = Some(spec.noise_level);
    Ok(d)
}
