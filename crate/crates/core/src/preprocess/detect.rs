//! NEO-based spike detection on a filtered stream.
//!
//! ψ is smoothed with a 7-tap Bartlett kernel and compared against `k`
//! times its running mean over a trailing window. A trigger opens a search
//! of `lockout` samples for the largest |S|; the window is cut around that
//! extremum and no new trigger is accepted until `lockout` samples later.

use std::collections::VecDeque;

/// Nonlinear energy operator: `s_cur² - s_prev·s_next`.
#[inline]
pub fn neo(s_prev: f64, s_cur: f64, s_next: f64) -> f64 {
    s_cur * s_cur - s_prev * s_next
}

/// Samples the NEO mean must accumulate before triggering is allowed.
const WARMUP_SAMPLES: usize = 1024;

/// Bartlett kernel applied to ψ before thresholding.
const SMOOTHING: [f64; 7] = [1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0];
const SMOOTHING_HALF: usize = SMOOTHING.len() / 2;

/// NEO smoothed with a short Bartlett window, computed over a whole signal.
/// Positions within half a kernel of either end are zero.
pub fn smoothed_neo(s: &[f64]) -> Vec<f64> {
    let mut raw = vec![0.0; s.len()];
    for i in 1..s.len().saturating_sub(1) {
        raw[i] = neo(s[i - 1], s[i], s[i + 1]);
    }
    let norm: f64 = SMOOTHING.iter().sum();
    let h = SMOOTHING_HALF;
    (0..s.len())
        .map(|c| {
            if c < h + 1 || c + h + 1 >= s.len() {
                return 0.0;
            }
            SMOOTHING
                .iter()
                .enumerate()
                .map(|(j, w)| w * raw[c + j - h])
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// Extra samples kept on each side of a window so alignment can shift it.
pub const ALIGN_PAD: usize = 8;

/// An unaligned window cut around a detected extremum.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub samples: Vec<f64>,
    /// Index of the coarse extremum inside `samples`.
    pub peak_index: usize,
    /// Absolute stream position of the coarse extremum.
    pub peak_timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub k: f64,
    pub mean_window: usize,
    pub lockout: usize,
    /// Samples kept before the peak.
    pub pre: usize,
    /// Samples kept after the peak.
    pub post: usize,
    /// Searches whose largest |S| stays below this are dropped.
    pub min_amplitude: f64,
    /// Searches whose largest |S| stays below this multiple of the running
    /// noise level are dropped.
    pub min_snr: f64,
}

impl DetectorParams {
    /// Window geometry for candidates of length `window_len` peaked at `align_index`.
    pub fn new(k: f64, mean_window: usize, window_len: usize, align_index: usize) -> Self {
        Self {
            k,
            mean_window: mean_window.max(1),
            lockout: window_len,
            pre: align_index + ALIGN_PAD,
            post: window_len - align_index - 1 + ALIGN_PAD,
            min_amplitude: 0.0,
            min_snr: 0.0,
        }
    }

    pub fn with_min_snr(mut self, min_snr: f64) -> Self {
        self.min_snr = min_snr;
        self
    }

    pub fn with_min_amplitude(mut self, min_amplitude: f64) -> Self {
        self.min_amplitude = min_amplitude;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DetectorDiagnostics {
    pub triggers: u64,
    pub emitted: u64,
    /// Windows lost because the stream ended before they were complete.
    pub truncated: u64,
    /// Windows lost because the peak was too close to the stream start.
    pub edge_discarded: u64,
    /// Triggers whose extremum was below the amplitude floor.
    pub below_floor: u64,
    /// Triggers whose extremum was below the noise-relative floor.
    pub below_snr: u64,
}

#[derive(Debug, Clone, Copy)]
struct Search {
    end: u64,
    best: u64,
    best_abs: f64,
}

#[derive(Debug, Clone)]
pub struct DetectorState {
    params: DetectorParams,
    history: VecDeque<f64>,
    history_start: u64,
    consumed: u64,
    raw_psi: VecDeque<f64>,
    psi: VecDeque<f64>,
    psi_sum: f64,
    abs_s: VecDeque<f64>,
    abs_sum: f64,
    since_resum: usize,
    lockout_until: u64,
    search: Option<Search>,
    awaiting: VecDeque<u64>,
    diagnostics: DetectorDiagnostics,
}

impl DetectorState {
    pub fn new(params: DetectorParams) -> Self {
        Self {
            params,
            history: VecDeque::new(),
            history_start: 0,
            consumed: 0,
            raw_psi: VecDeque::with_capacity(SMOOTHING.len()),
            psi: VecDeque::with_capacity(params.mean_window + 1),
            psi_sum: 0.0,
            abs_s: VecDeque::with_capacity(params.mean_window + 1),
            abs_sum: 0.0,
            since_resum: 0,
            lockout_until: 0,
            search: None,
            awaiting: VecDeque::new(),
            diagnostics: DetectorDiagnostics::default(),
        }
    }

    pub fn params(&self) -> &DetectorParams {
        &self.params
    }

    pub fn diagnostics(&self) -> DetectorDiagnostics {
        self.diagnostics
    }

    /// Running mean of smoothed ψ over the trailing window, if warmed up.
    pub fn threshold_base(&self) -> Option<f64> {
        let need = self.params.mean_window.min(WARMUP_SAMPLES);
        (self.psi.len() >= need).then(|| self.psi_sum / self.psi.len() as f64)
    }

    /// Noise standard deviation estimated from the running mean of |S|,
    /// assuming Gaussian noise.
    pub fn noise_level(&self) -> f64 {
        if self.abs_s.is_empty() {
            return 0.0;
        }
        self.abs_sum / self.abs_s.len() as f64 * std::f64::consts::FRAC_PI_2.sqrt()
    }

    fn at(&self, idx: u64) -> f64 {
        self.history[(idx - self.history_start) as usize]
    }

    /// Feeds one filtered sample; returns a window when one completes.
    pub fn push(&mut self, s: f64) -> Option<RawWindow> {
        let idx = self.consumed;
        self.history.push_back(s);
        self.abs_s.push_back(s.abs());
        self.abs_sum += s.abs();
        if self.abs_s.len() > self.params.mean_window {
            self.abs_sum -= self.abs_s.pop_front().unwrap_or(0.0);
        }
        self.consumed += 1;

        if idx >= 2 {
            let c = idx - 1;
            self.raw_psi.push_back(neo(self.at(c - 1), self.at(c), s));
            if self.raw_psi.len() > SMOOTHING.len() {
                self.raw_psi.pop_front();
            }
            if self.raw_psi.len() == SMOOTHING.len() {
                let centre = c - SMOOTHING_HALF as u64;
                let psi = self.smoothed();
                if self.search.is_none() && centre >= self.lockout_until {
                    if let Some(mean) = self.threshold_base() {
                        if mean > 0.0 && psi > self.params.k * mean {
                            self.start_search(centre, idx);
                        }
                    }
                }
                self.push_psi(psi);
            }
        }

        if let Some(mut search) = self.search {
            if s.abs() > search.best_abs {
                search.best = idx;
                search.best_abs = s.abs();
            }
            if idx + 1 >= search.end {
                self.search = None;
                if search.best_abs < self.params.min_amplitude {
                    self.diagnostics.below_floor += 1;
                } else if search.best_abs < self.params.min_snr * self.noise_level() {
                    self.diagnostics.below_snr += 1;
                } else {
                    self.lockout_until = search.best + self.params.lockout as u64;
                    self.awaiting.push_back(search.best);
                }
            } else {
                self.search = Some(search);
            }
        }

        let out = match self.awaiting.front() {
            Some(&peak) if idx >= peak + self.params.post as u64 => {
                self.awaiting.pop_front();
                self.extract(peak)
            }
            _ => None,
        };

        let keep = self.params.pre + self.params.post + 2 * self.params.lockout + 4;
        while self.history.len() > keep {
            self.history.pop_front();
            self.history_start += 1;
        }
        out
    }

    fn smoothed(&self) -> f64 {
        let norm: f64 = SMOOTHING.iter().sum();
        self.raw_psi
            .iter()
            .zip(SMOOTHING)
            .map(|(p, w)| p * w)
            .sum::<f64>()
            / norm
    }

    /// Opens a peak search at `start`; samples up to `idx` are already buffered.
    fn start_search(&mut self, start: u64, idx: u64) {
        self.diagnostics.triggers += 1;
        let mut search = Search {
            end: start + self.params.lockout as u64,
            best: start,
            best_abs: self.at(start).abs(),
        };
        for j in start + 1..idx {
            let v = self.at(j).abs();
            if v > search.best_abs {
                search.best = j;
                search.best_abs = v;
            }
        }
        self.search = Some(search);
    }

    fn push_psi(&mut self, psi: f64) {
        self.psi.push_back(psi);
        self.psi_sum += psi;
        if self.psi.len() > self.params.mean_window {
            let old = self.psi.pop_front().unwrap_or(0.0);
            self.psi_sum -= old;
        }
        self.since_resum += 1;
        if self.since_resum >= self.params.mean_window {
            self.psi_sum = self.psi.iter().sum();
            self.abs_sum = self.abs_s.iter().sum();
            self.since_resum = 0;
        }
    }

    fn extract(&mut self, peak: u64) -> Option<RawWindow> {
        let pre = self.params.pre as u64;
        if peak < pre || peak - pre < self.history_start {
            self.diagnostics.edge_discarded += 1;
            return None;
        }
        let start = peak - pre;
        let len = self.params.pre + self.params.post + 1;
        let off = (start - self.history_start) as usize;
        let samples: Vec<f64> = self.history.range(off..off + len).copied().collect();
        self.diagnostics.emitted += 1;
        Some(RawWindow {
            samples,
            peak_index: self.params.pre,
            peak_timestamp: peak,
        })
    }

    /// Ends the stream, discarding any window that cannot be completed.
    pub fn finish(&mut self) {
        let lost = self.awaiting.len() as u64 + u64::from(self.search.is_some());
        self.diagnostics.truncated += lost;
        self.awaiting.clear();
        self.search = None;
    }

    /// Bytes held by the streaming buffers.
    pub fn buffer_bytes(&self) -> usize {
        (self.history.capacity() + self.psi.capacity() + self.raw_psi.capacity() + self.abs_s.capacity())
            * std::mem::size_of::<f64>()
            + self.awaiting.capacity() * std::mem::size_of::<u64>()
    }
}

/// Runs the detector over a whole filtered signal and finishes the stream.
pub fn detect(filtered: &[f64], params: DetectorParams) -> (Vec<RawWindow>, DetectorDiagnostics) {
    let mut state = DetectorState::new(params);
    let mut out: Vec<RawWindow> = filtered.iter().filter_map(|&s| state.push(s)).collect();
    state.finish();
    out.shrink_to_fit();
    (out, state.diagnostics())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn neo_examples() {
        for c in [-3.0, 0.0, 2.5] {
            assert_eq!(neo(c, c, c), 0.0);
        }
        assert_eq!(neo(1.0, 2.0, 3.0), 1.0);
        assert_eq!(neo(0.0, 1.0, 0.0), 1.0);
    }

    fn params() -> DetectorParams {
        DetectorParams::new(8.0, 30_000, 64, 20)
    }

    fn pulse_in_noise(seed: u64, peak_at: usize, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 5.0).unwrap();
        (0..20_000)
            .map(|j| {
                let d = j as f64 - peak_at as f64;
                noise.sample(&mut rng) - amp * (-d * d / (2.0 * 2.0 * 2.0)).exp()
            })
            .collect()
    }

    #[test]
    fn smoothed_neo_matches_streaming_trigger_source() {
        let x: Vec<f64> = (0..40).map(|i| ((i * i) % 11) as f64 - 5.0).collect();
        let sm = smoothed_neo(&x);
        let c = 20;
        let direct: f64 = (0..7)
            .map(|j| SMOOTHING[j] * neo(x[c + j - 4], x[c + j - 3], x[c + j - 2]))
            .sum::<f64>()
            / 16.0;
        assert!((sm[c] - direct).abs() < 1e-12);
        assert_eq!(sm[0], 0.0);
    }

    #[test]
    fn zero_stream_has_no_candidates() {
        let (w, d) = detect(&vec![0.0; 10_000], params());
        assert!(w.is_empty());
        assert_eq!(d.triggers, 0);
    }

    #[test]
    fn single_pulse_in_noise() {
        let (w, _) = detect(&pulse_in_noise(3, 12_000, 100.0), params());
        assert_eq!(w.len(), 1);
        let t = w[0].peak_timestamp as i64;
        assert!((t - 12_000).abs() <= 3, "peak at {t}");
        assert_eq!(w[0].samples.len(), 64 + 2 * ALIGN_PAD);
        assert_eq!(w[0].peak_index, 20 + ALIGN_PAD);
    }

    #[test]
    fn huge_threshold_detects_nothing() {
        let x = pulse_in_noise(3, 12_000, 100.0);
        let p = DetectorParams { k: 1e12, ..params() };
        assert!(detect(&x, p).0.is_empty());
    }

    #[test]
    fn window_cut_at_stream_end_is_counted() {
        let mut x = pulse_in_noise(5, 12_000, 100.0);
        x.truncate(12_010);
        let (w, d) = detect(&x, params());
        assert!(w.is_empty());
        assert_eq!(d.truncated, 1);
    }
}
