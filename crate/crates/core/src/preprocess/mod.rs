//! Raw trace to aligned spike candidates: band-pass filtering, NEO
//! detection and spline re-alignment.

pub mod align;
pub mod detect;
pub mod filter;

pub use align::{realign, CubicSpline, Realigned};
pub use detect::{detect, neo, DetectorDiagnostics, DetectorParams, DetectorState, RawWindow};
pub use filter::{design_bandpass, BandpassCoeffs, Biquad, FilterState};

use crate::error::Result;
use crate::signal::{SorterConfig, SpikeCandidate};

/// Streaming front end for one channel.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    filter: FilterState,
    detector: DetectorState,
    window_len: usize,
    align_index: usize,
    iterations: usize,
    upsample: usize,
    delay: u64,
    clamped: u64,
}

impl Preprocessor {
    pub fn new(cfg: &SorterConfig, sample_rate_hz: f64) -> Result<Self> {
        cfg.validate()?;
        let coeffs = design_bandpass(cfg.band_low_hz, cfg.band_high_hz, sample_rate_hz)?;
        let delay = coeffs.group_delay(coeffs.center_hz()).round().max(0.0) as u64;
        let mean_window = (cfg.detect_window_s * sample_rate_hz).round().max(1.0) as usize;
        let params = DetectorParams::new(cfg.detect_k, mean_window, cfg.window_len, cfg.align_index)
            .with_min_amplitude(cfg.detect_min_amplitude)
            .with_min_snr(cfg.detect_min_snr);
        Ok(Self {
            filter: FilterState::new(coeffs),
            detector: DetectorState::new(params),
            window_len: cfg.window_len,
            align_index: cfg.align_index,
            iterations: cfg.align_iterations,
            upsample: cfg.upsample_factor,
            delay,
            clamped: 0,
        })
    }

    /// Filter group delay (samples) subtracted from candidate timestamps.
    pub fn delay_samples(&self) -> u64 {
        self.delay
    }

    /// Feeds one raw sample and returns an aligned candidate when one completes.
    pub fn push(&mut self, x: f64) -> Option<SpikeCandidate> {
        let y = self.filter.process(x);
        let window = self.detector.push(y)?;
        let mut r = realign(
            &window,
            self.window_len,
            self.align_index,
            self.iterations,
            self.upsample,
        )
        .expect("detector windows are longer than the candidate");
        if r.candidate.clamped {
            self.clamped += 1;
        }
        r.candidate.timestamp_samples = r.candidate.timestamp_samples.saturating_sub(self.delay);
        Some(r.candidate)
    }

    pub fn finish(&mut self) {
        self.detector.finish();
    }

    pub fn diagnostics(&self) -> DetectorDiagnostics {
        self.detector.diagnostics()
    }

    pub fn clamped_count(&self) -> u64 {
        self.clamped
    }

    pub fn buffer_bytes(&self) -> usize {
        self.detector.buffer_bytes()
    }
}

/// Detects and aligns every candidate in a complete trace.
pub fn extract_candidates(
    samples: &[f32],
    sample_rate_hz: f64,
    cfg: &SorterConfig,
) -> Result<Vec<SpikeCandidate>> {
    let mut pre = Preprocessor::new(cfg, sample_rate_hz)?;
    let out = samples
        .iter()
        .filter_map(|&x| pre.push(x as f64))
        .collect();
    pre.finish();
    Ok(out)
}
