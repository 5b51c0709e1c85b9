//! Sub-sample peak re-alignment with natural cubic splines.

use crate::error::{Error, Result};
use crate::preprocess::detect::RawWindow;
use crate::signal::SpikeCandidate;

/// Natural cubic spline through uniformly spaced samples at x = 0, 1, ..
#[derive(Debug, Clone)]
pub struct CubicSpline {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(y: &[f64]) -> Self {
        let n = y.len();
        let mut m = vec![0.0; n];
        if n >= 3 {
            // Thomas algorithm on m[i-1] + 4 m[i] + m[i+1] = 6 Δ²y, m[0] = m[n-1] = 0
            let k = n - 2;
            let mut c = vec![0.0; k];
            let mut d = vec![0.0; k];
            for i in 0..k {
                let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]);
                if i == 0 {
                    c[i] = 1.0 / 4.0;
                    d[i] = rhs / 4.0;
                } else {
                    let denom = 4.0 - c[i - 1];
                    c[i] = 1.0 / denom;
                    d[i] = (rhs - d[i - 1]) / denom;
                }
            }
            m[k] = d[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = d[i] - c[i] * m[i + 2];
            }
        }
        Self { y: y.to_vec(), m }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn segment(&self, x: f64) -> (usize, f64) {
        let last = self.y.len().saturating_sub(2);
        let x = x.clamp(0.0, (self.y.len() - 1) as f64);
        let i = (x.floor() as usize).min(last);
        (i, x - i as f64)
    }

    /// Value at `x`, clamped to the sampled range.
    pub fn eval(&self, x: f64) -> f64 {
        if self.y.len() == 1 {
            return self.y[0];
        }
        let (i, t) = self.segment(x);
        let u = 1.0 - t;
        u * self.y[i]
            + t * self.y[i + 1]
            + ((u * u * u - u) * self.m[i] + (t * t * t - t) * self.m[i + 1]) / 6.0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        if self.y.len() == 1 {
            return 0.0;
        }
        let (i, t) = self.segment(x);
        let u = 1.0 - t;
        self.y[i + 1] - self.y[i]
            + ((1.0 - 3.0 * u * u) * self.m[i] + (3.0 * t * t - 1.0) * self.m[i + 1]) / 6.0
    }

    /// Stationary points of segment `i` as absolute positions.
    fn stationary_points(&self, i: usize) -> Vec<f64> {
        // S'(t) = A t² + B t + C on t ∈ [0, 1]
        let (y0, y1, m0, m1) = (self.y[i], self.y[i + 1], self.m[i], self.m[i + 1]);
        let a = (m1 - m0) / 2.0;
        let b = m0;
        let c = y1 - y0 - m0 / 3.0 - m1 / 6.0;
        let mut roots = Vec::with_capacity(2);
        if a.abs() < 1e-14 {
            if b.abs() > 1e-14 {
                roots.push(-c / b);
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                // numerically stable pair
                let q = -0.5 * (b + b.signum() * sq);
                if q != 0.0 {
                    roots.push(q / a);
                    roots.push(c / q);
                } else {
                    roots.push(0.0);
                }
            }
        }
        roots
            .into_iter()
            .filter(|t| (0.0..=1.0).contains(t))
            .map(|t| i as f64 + t)
            .collect()
    }

    /// Position of the largest |S(x)| within `[lo, hi]`.
    ///
    /// A coarse grid with `upsample` points per sample picks the region,
    /// then the exact stationary points of the covered segments refine it.
    pub fn abs_extremum(&self, lo: f64, hi: f64, upsample: usize) -> f64 {
        let upsample = upsample.max(1);
        let steps = ((hi - lo) * upsample as f64).round().max(1.0) as usize;
        let mut best = lo;
        let mut best_abs = self.eval(lo).abs();
        for k in 1..=steps {
            let x = lo + (hi - lo) * k as f64 / steps as f64;
            let v = self.eval(x).abs();
            if v > best_abs {
                best = x;
                best_abs = v;
            }
        }
        if self.y.len() < 2 {
            return best;
        }
        let first = lo.floor().max(0.0) as usize;
        let last = (hi.ceil() as usize).min(self.y.len() - 2);
        for i in first..=last {
            for x in self.stationary_points(i) {
                if x < lo || x > hi {
                    continue;
                }
                let v = self.eval(x).abs();
                if v > best_abs {
                    best = x;
                    best_abs = v;
                }
            }
        }
        best
    }
}

/// Result of aligning one raw window.
#[derive(Debug, Clone, PartialEq)]
pub struct Realigned {
    pub candidate: SpikeCandidate,
    /// Continuous extremum position in stream samples.
    pub peak_position: f64,
}

/// Shifts below this are treated as converged.
const SHIFT_EPS: f64 = 1e-12;

/// Refines the extremum of `window` and resamples it to `window_len` points
/// with the extremum at `align_index`.
///
/// The first round locates the largest |S(x)| of the window spline over
/// every position a full candidate can be cut around, on a grid upsampled
/// by `upsample_factor`. Later rounds fit a spline to the resampled
/// waveform, relocate its extremum within half a sample of the alignment
/// index and correct the shift with a secant step. Rounds stop early once
/// the residual shift vanishes. Refinement stays within one sample of the
/// first-round shift and keeps the round with the smallest residual.
/// Samples that still exceed the peak
/// magnitude are clipped to it and the candidate is flagged.
pub fn realign(
    window: &RawWindow,
    window_len: usize,
    align_index: usize,
    iterations: usize,
    upsample_factor: usize,
) -> Result<Realigned> {
    let len = window.samples.len();
    if len < window_len {
        return Err(Error::InvalidParameter(format!(
            "window of {len} samples is shorter than candidate length {window_len}"
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be ≥ 1".into()));
    }
    if align_index >= window_len || window.peak_index >= len {
        return Err(Error::InvalidParameter(format!(
            "alignment index {align_index} or peak {} out of range",
            window.peak_index
        )));
    }

    // shift range that keeps the whole candidate inside the window
    let max_shift = (len - window_len) as f64;
    let a = align_index as f64;
    let c = window.peak_index;
    let mut clamped = c < align_index || c > len - window_len + align_index;

    let original = CubicSpline::new(&window.samples);
    let p = original.abs_extremum(a, a + max_shift, upsample_factor);
    if on_edge(&original, p, a, a + max_shift) {
        clamped = true;
    }
    let snapped = if (p - p.round()).abs() < SNAP_EPS { p.round() } else { p };
    let mut total_shift = snapped - a;
    let coarse = total_shift;
    let mut cur = resample(&original, total_shift, window_len);

    let mut previous: Option<(f64, f64)> = None;
    let lo = (a - 0.5).max(0.0);
    let hi = (a + 0.5).min((window_len - 1) as f64);
    let mut best = (f64::INFINITY, total_shift);
    for round in 1..=iterations {
        let spline = CubicSpline::new(&cur);
        let residual = spline.abs_extremum(lo, hi, upsample_factor) - a;
        if residual.abs() < best.0 {
            best = (residual.abs(), total_shift);
        }
        if residual.abs() < SHIFT_EPS || round == iterations {
            break;
        }
        let next = match previous {
            Some((s0, r0)) if (residual - r0).abs() > 1e-15 => {
                total_shift - residual * (total_shift - s0) / (residual - r0)
            }
            _ => total_shift + residual,
        };
        previous = Some((total_shift, residual));
        total_shift = next.clamp((coarse - 1.0).max(0.0), (coarse + 1.0).min(max_shift));
        cur = resample(&original, total_shift, window_len);
    }
    if best.1 != total_shift {
        total_shift = best.1;
        cur = resample(&original, total_shift, window_len);
    }

    let peak = cur[align_index].abs();
    for v in cur.iter_mut() {
        if v.abs() > peak {
            if v.abs() - peak > CLIP_TOLERANCE * peak.max(1.0) {
                clamped = true;
            }
            *v = v.signum() * peak;
        }
    }

    let peak_position = window.peak_timestamp as f64 - c as f64 + a + total_shift;
    let timestamp = peak_position.round().max(0.0) as u64;
    Ok(Realigned {
        candidate: SpikeCandidate {
            waveform: cur,
            peak_index: align_index,
            timestamp_samples: timestamp,
            clamped,
        },
        peak_position,
    })
}

/// Extremum positions this close to a sample are snapped onto it.
const SNAP_EPS: f64 = 1e-9;
/// Relative overshoot of the peak that is clipped without flagging.
const CLIP_TOLERANCE: f64 = 1e-6;

fn on_edge(spline: &CubicSpline, p: f64, lo: f64, hi: f64) -> bool {
    let at_bound = (p - lo).abs() < 1e-9 && lo > 0.0 || (p - hi).abs() < 1e-9 && hi < (spline.len() - 1) as f64;
    at_bound && spline.derivative(p).abs() > 1e-9
}

fn resample(spline: &CubicSpline, shift: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| spline.eval(j as f64 + shift)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_window(center: f64, len: usize, amp: f64, width: f64) -> Vec<f64> {
        (0..len)
            .map(|j| {
                let d = j as f64 - center;
                amp * (-d * d / (2.0 * width * width)).exp()
            })
            .collect()
    }

    #[test]
    fn spline_interpolates_knots() {
        let y = [0.0, 1.0, 4.0, 2.0, -1.0, 0.5];
        let s = CubicSpline::new(&y);
        for (i, v) in y.iter().enumerate() {
            assert!((s.eval(i as f64) - v).abs() < 1e-12);
        }
        // natural end conditions
        assert_eq!(s.m[0], 0.0);
        assert_eq!(s.m[5], 0.0);
    }

    #[test]
    fn spline_derivative_matches_finite_difference() {
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let s = CubicSpline::new(&y);
        for x in [0.3, 2.5, 5.9, 9.1] {
            let h = 1e-6;
            let fd = (s.eval(x + h) - s.eval(x - h)) / (2.0 * h);
            assert!((fd - s.derivative(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_window_is_a_fixed_point() {
        let samples = gaussian_window(28.0, 80, -90.0, 3.0);
        let w = RawWindow {
            samples: samples.clone(),
            peak_index: 28,
            peak_timestamp: 1000,
        };
        let r = realign(&w, 64, 20, 5, 4).unwrap();
        assert_eq!(r.candidate.waveform, samples[8..72].to_vec());
        assert_eq!(r.candidate.timestamp_samples, 1000);
        assert!(!r.candidate.clamped);
    }

    #[test]
    fn off_grid_peak_is_recovered() {
        let samples = gaussian_window(28.4, 80, 80.0, 2.5);
        let w = RawWindow {
            samples,
            peak_index: 28,
            peak_timestamp: 5000,
        };
        let r = realign(&w, 64, 20, 5, 4).unwrap();
        assert!((r.peak_position - 5000.4).abs() < 0.15, "{}", r.peak_position);
        assert!(r.candidate.is_peak_aligned());
    }

    #[test]
    fn more_iterations_change_nothing() {
        let samples = gaussian_window(27.7, 80, -60.0, 2.0);
        let w = RawWindow {
            samples,
            peak_index: 28,
            peak_timestamp: 0,
        };
        let a = realign(&w, 64, 20, 5, 4).unwrap().candidate.waveform;
        let b = realign(&w, 64, 20, 10, 4).unwrap().candidate.waveform;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn boundary_peak_is_flagged() {
        let mut samples = vec![0.0; 80];
        samples[79] = 50.0;
        let w = RawWindow {
            samples,
            peak_index: 79,
            peak_timestamp: 79,
        };
        let r = realign(&w, 64, 20, 5, 4).unwrap();
        assert!(r.candidate.clamped);
        assert_eq!(r.candidate.len(), 64);
    }

    #[test]
    fn rejects_short_windows() {
        let w = RawWindow {
            samples: vec![0.0; 10],
            peak_index: 5,
            peak_timestamp: 5,
        };
        assert!(realign(&w, 64, 20, 5, 4).is_err());
    }
}
