//! Per-channel sorter: filtering, detection, alignment, encoding and
//! classification in a single pass, plus multi-channel fan-out.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodeMode, ReceptiveField};
use crate::error::{Error, Result};
use crate::network::{LayerState, PerceptionLayer};
use crate::preprocess::{DetectorDiagnostics, Preprocessor};
use crate::signal::{derive_seed, SortedSpike, SorterConfig, SpikeCandidate};
use crate::synth::builtin_templates;

const ENCODE_STREAM: u64 = 1;
const LAYER_STREAM: u64 = 2;

/// Running counters of one channel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SorterDiagnostics {
    pub candidates: u64,
    pub provisional: u64,
    /// Encoder events summed over all candidates.
    pub events: u64,
    /// Firing count of each perception node.
    pub fire_counts: Vec<u64>,
    pub detector: DetectorDiagnostics,
    /// Candidates whose extremum was clamped during alignment.
    pub clamped: u64,
}

impl SorterDiagnostics {
    /// Mean encoder events plus perception firings per candidate.
    pub fn avg_events_per_input(&self) -> f64 {
        if self.candidates == 0 {
            return 0.0;
        }
        let fired: u64 = self.fire_counts.iter().sum();
        (self.events + fired) as f64 / self.candidates as f64
    }

    pub fn provisional_fraction(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.provisional as f64 / self.candidates as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelSorter {
    channel_id: u32,
    cfg: SorterConfig,
    front: Preprocessor,
    field: ReceptiveField,
    layer: PerceptionLayer,
    mode: EncodeMode,
    rng: ChaCha8Rng,
    diag: SorterDiagnostics,
}

impl ChannelSorter {
    /// Sorter for one channel sampled at `sample_rate_hz`, seeded from `cfg.seed`.
    pub fn new(cfg: &SorterConfig, sample_rate_hz: f64, channel_id: u32) -> Result<Self> {
        cfg.validate()?;
        let front = Preprocessor::new(cfg, sample_rate_hz)?;
        let field = ReceptiveField::from_config(cfg)?;
        let layer = PerceptionLayer::from_config(cfg, derive_seed(cfg.seed, LAYER_STREAM));
        Ok(Self {
            channel_id,
            cfg: cfg.clone(),
            front,
            field,
            diag: SorterDiagnostics {
                fire_counts: vec![0; layer.nodes().len()],
                ..SorterDiagnostics::default()
            },
            layer,
            mode: EncodeMode::from_flag(cfg.deterministic),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, ENCODE_STREAM)),
        })
    }

    /// Replaces the learned state with `state`, keeping everything else.
    pub fn with_layer_state(mut self, state: LayerState) -> Result<Self> {
        let layer = PerceptionLayer::from_state(state, derive_seed(self.cfg.seed, LAYER_STREAM))?;
        let want = (self.field.nodes(), self.cfg.window_len);
        if layer.dims() != want {
            let (rows, cols) = layer.dims();
            return Err(Error::Dimension {
                expected_rows: want.0,
                expected_cols: want.1,
                rows,
                cols,
            });
        }
        self.diag.fire_counts = layer.fire_counts();
        self.layer = layer;
        Ok(self)
    }

    pub fn channel_id(&self) -> u32 {
        self.channel_id
    }

    pub fn config(&self) -> &SorterConfig {
        &self.cfg
    }

    pub fn layer(&self) -> &PerceptionLayer {
        &self.layer
    }

    pub fn field(&self) -> &ReceptiveField {
        &self.field
    }

    /// Feeds raw samples in stream order and returns every spike completed
    /// by this batch. A batch holding a non-finite sample is rejected whole.
    pub fn push_samples(&mut self, samples: &[f32]) -> Result<Vec<SortedSpike>> {
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample { index });
        }
        let mut out = Vec::new();
        for &x in samples {
            if let Some(c) = self.front.push(x as f64) {
                out.push(self.classify(&c)?);
            }
        }
        self.diag.clamped = self.front.clamped_count();
        Ok(out)
    }

    /// Classifies pre-detected candidates, skipping filtering and detection.
    /// The batch is checked before any candidate is processed.
    pub fn push_candidates(&mut self, candidates: &[SpikeCandidate]) -> Result<Vec<SortedSpike>> {
        let n = self.cfg.window_len;
        for (index, c) in candidates.iter().enumerate() {
            if c.len() != n {
                return Err(Error::CandidateLength {
                    index,
                    len: c.len(),
                    expected: n,
                });
            }
            if let Some(position) = c.waveform.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteCandidate { position });
            }
            if index > 0 && c.timestamp_samples < candidates[index - 1].timestamp_samples {
                return Err(Error::Unsorted { index });
            }
        }
        candidates.iter().map(|c| self.classify(c)).collect()
    }

    fn classify(&mut self, c: &SpikeCandidate) -> Result<SortedSpike> {
        let train = self.field.encode(c, self.mode, &mut self.rng)?;
        let spike = self.layer.classify_and_learn(&train, c, self.channel_id)?;
        self.diag.candidates += 1;
        self.diag.events += train.event_count() as u64;
        match spike.unit.id() {
            Some(id) => self.diag.fire_counts[id as usize - 1] += 1,
            None => self.diag.provisional += 1,
        }
        Ok(spike)
    }

    /// Ends the stream; windows still waiting for samples are dropped and counted.
    pub fn finish(&mut self) {
        self.front.finish();
        self.diag.detector = self.front.diagnostics();
    }

    pub fn diagnostics(&self) -> SorterDiagnostics {
        let mut d = self.diag.clone();
        d.detector = self.front.diagnostics();
        d.clamped = self.front.clamped_count();
        d
    }

    /// Nodes that fired at least `min_fires` times.
    pub fn valid_units(&self) -> Vec<u32> {
        self.layer.valid_units(self.cfg.min_fires)
    }

    pub fn avg_events_per_input(&self) -> f64 {
        self.diag.avg_events_per_input()
    }

    /// Bytes of streaming and learned state.
    pub fn state_bytes(&self) -> usize {
        self.front.buffer_bytes() + self.layer.state_bytes()
    }

    pub fn delay_samples(&self) -> u64 {
        self.front.delay_samples()
    }
}

/// Sorts a complete trace in one pass and finishes the stream.
pub fn sort_trace(
    cfg: &SorterConfig,
    samples: &[f32],
    sample_rate_hz: f64,
    channel_id: u32,
) -> Result<(Vec<SortedSpike>, ChannelSorter)> {
    let mut s = ChannelSorter::new(cfg, sample_rate_hz, channel_id)?;
    let out = s.push_samples(samples)?;
    s.finish();
    Ok((out, s))
}

/// Seed of `channel_id` under `master_seed`.
pub fn channel_seed(master_seed: u64, channel_id: u32) -> u64 {
    derive_seed(master_seed, 0x6368_0000 + channel_id as u64)
}

/// Independent sorters, one per channel, run on a worker pool.
#[derive(Debug, Clone)]
pub struct MultiChannelSorter {
    sorters: Vec<ChannelSorter>,
}

impl MultiChannelSorter {
    /// Each channel gets its own seed derived from `cfg.seed`.
    pub fn new(cfg: &SorterConfig, sample_rate_hz: f64, channel_ids: &[u32]) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        let sorters = channel_ids
            .iter()
            .map(|&id| {
                if !seen.insert(id) {
                    return Err(Error::InvalidParameter(format!("duplicate channel {id}")));
                }
                let ch = SorterConfig {
                    seed: channel_seed(cfg.seed, id),
                    ..cfg.clone()
                };
                ChannelSorter::new(&ch, sample_rate_hz, id)
            })
            .collect::<Result<_>>()?;
        Ok(Self { sorters })
    }

    pub fn channels(&self) -> impl Iterator<Item = u32> + '_ {
        self.sorters.iter().map(|s| s.channel_id)
    }

    pub fn sorter(&self, channel_id: u32) -> Option<&ChannelSorter> {
        self.sorters.iter().find(|s| s.channel_id == channel_id)
    }

    pub fn sorters(&self) -> &[ChannelSorter] {
        &self.sorters
    }

    /// Pushes one batch per channel, in construction order. Outputs keep
    /// per-channel order; all batches are validated before any is processed.
    pub fn push(&mut self, batches: &[&[f32]]) -> Result<Vec<Vec<SortedSpike>>> {
        if batches.len() != self.sorters.len() {
            return Err(Error::InvalidParameter(format!(
                "{} batches for {} channels",
                batches.len(),
                self.sorters.len()
            )));
        }
        for b in batches {
            if let Some(index) = b.iter().position(|s| !s.is_finite()) {
                return Err(Error::NonFiniteSample { index });
            }
        }
        self.sorters
            .par_iter_mut()
            .zip(batches.par_iter())
            .map(|(s, b)| s.push_samples(b))
            .collect()
    }

    /// Splits channel-interleaved samples and pushes them.
    pub fn push_interleaved(&mut self, samples: &[f32]) -> Result<Vec<Vec<SortedSpike>>> {
        let c = self.sorters.len();
        if c == 0 || samples.len() % c != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} interleaved samples do not divide into {c} channels",
                samples.len()
            )));
        }
        let split: Vec<Vec<f32>> = (0..c)
            .map(|k| samples.iter().skip(k).step_by(c).copied().collect())
            .collect();
        let refs: Vec<&[f32]> = split.iter().map(Vec::as_slice).collect();
        self.push(&refs)
    }

    pub fn finish(&mut self) {
        self.sorters.par_iter_mut().for_each(ChannelSorter::finish);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_spikes: usize,
    pub seconds: f64,
    pub mean_latency_s: f64,
    pub median_latency_s: f64,
    pub p99_latency_s: f64,
    pub max_latency_s: f64,
}

pub const MIN_BENCH_SPIKES: usize = 100;

/// Synthetic benchmark candidates: built-in templates with white noise.
pub fn bench_candidates(n: usize, window_len: usize, align_index: usize, seed: u64) -> Vec<SpikeCandidate> {
    let templates = builtin_templates(crate::synth::DEFAULT_SAMPLE_RATE_HZ);
    let crops: Vec<Vec<f64>> = templates
        .iter()
        .map(|t| t.crop(window_len, align_index))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 3.0).expect("positive std");
    (0..n)
        .map(|i| {
            let w = crops[i % crops.len()]
                .iter()
                .map(|v| 100.0 * v + noise.sample(&mut rng))
                .collect();
            SpikeCandidate::new(w, align_index, i as u64 * 3000)
        })
        .collect()
}

/// Times `n_spikes` synthetic candidates through `sorter`, one at a time.
pub fn bench_throughput(sorter: &mut ChannelSorter, n_spikes: usize) -> Result<BenchReport> {
    if n_spikes < MIN_BENCH_SPIKES {
        return Err(Error::InvalidParameter(format!(
            "benchmark needs at least {MIN_BENCH_SPIKES} spikes, got {n_spikes}"
        )));
    }
    let cfg = sorter.config();
    let cands = bench_candidates(n_spikes, cfg.window_len, cfg.align_index, cfg.seed);
    let mut lat = Vec::with_capacity(n_spikes);
    let start = Instant::now();
    for c in &cands {
        let t = Instant::now();
        sorter.push_candidates(std::slice::from_ref(c))?;
        lat.push(t.elapsed().as_secs_f64());
    }
    let seconds = start.elapsed().as_secs_f64();
    lat.sort_by(f64::total_cmp);
    let pick = |q: f64| lat[((lat.len() - 1) as f64 * q).round() as usize];
    Ok(BenchReport {
        n_spikes,
        seconds,
        mean_latency_s: lat.iter().sum::<f64>() / lat.len() as f64,
        median_latency_s: pick(0.5),
        p99_latency_s: pick(0.99),
        max_latency_s: lat[lat.len() - 1],
    })
}

/// Power draw in watts: events per input × inputs per second × channels × energy per event.
pub fn estimate_power(
    avg_events_per_input: f64,
    inputs_per_second: f64,
    channels: u32,
    alpha_joules: f64,
) -> Result<f64> {
    for (name, v) in [
        ("avg_events_per_input", avg_events_per_input),
        ("inputs_per_second", inputs_per_second),
        ("channels", channels as f64),
        ("alpha_joules", alpha_joules),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(avg_events_per_input * inputs_per_second * channels as f64 * alpha_joules)
}

/// Least-squares line through `(x, y)`: slope, intercept and R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}
