//! Causal Butterworth band-pass filter realised as cascaded biquads.
//!
//! The design follows the classic analog route: Butterworth low-pass
//! prototype poles, low-pass to band-pass transform on prewarped band
//! edges, then the bilinear transform. Each conjugate (or real) pole pair
//! becomes one second-order section with numerator `1 - z^-2`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Band-pass order of the low-pass prototype.
pub const PROTOTYPE_ORDER: usize = 3;

/// Coefficients of one second-order section, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }
}

/// A designed band-pass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct BandpassCoeffs {
    pub sections: Vec<Biquad>,
    pub sample_rate_hz: f64,
    pub low_hz: f64,
    pub high_hz: f64,
}

/// Designs a 3rd-order Butterworth band-pass (6 poles, 3 sections).
pub fn design_bandpass(low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<BandpassCoeffs> {
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0) {
        return Err(Error::FilterBand(format!(
            "need 0 < low ({low_hz}) < high ({high_hz}) < fs/2 ({})",
            sample_rate_hz / 2.0
        )));
    }
    let fs2 = 2.0 * sample_rate_hz;
    let wl = fs2 * (PI * low_hz / sample_rate_hz).tan();
    let wh = fs2 * (PI * high_hz / sample_rate_hz).tan();
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let n = PROTOTYPE_ORDER;
    let mut analog_poles = Vec::with_capacity(2 * n);
    for k in 1..=n {
        let angle = PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, angle);
        let half = p * bw / 2.0;
        let disc = (half * half - w0_sq).sqrt();
        analog_poles.push(half + disc);
        analog_poles.push(half - disc);
    }

    // bilinear map; analog zeros: n at s = 0 -> z = 1, n at infinity -> z = -1
    let mut gain = Complex64::new(bw.powi(n as i32) * fs2.powi(n as i32), 0.0);
    let mut poles = Vec::with_capacity(2 * n);
    for &p in &analog_poles {
        gain /= fs2 - p;
        poles.push((fs2 + p) / (fs2 - p));
    }
    let gain = gain.re;

    let sections = pair_poles(&poles)
        .into_iter()
        .enumerate()
        .map(|(i, (p1, p2))| {
            let g = if i == 0 { gain } else { 1.0 };
            Biquad {
                b: [g, 0.0, -g],
                a: [1.0, -(p1 + p2).re, (p1 * p2).re],
            }
        })
        .collect();

    Ok(BandpassCoeffs {
        sections,
        sample_rate_hz,
        low_hz,
        high_hz,
    })
}

/// Groups poles into conjugate pairs, pairing leftover real poles together.
fn pair_poles(poles: &[Complex64]) -> Vec<(Complex64, Complex64)> {
    const EPS: f64 = 1e-10;
    let mut pairs = Vec::new();
    let mut reals = Vec::new();
    for &p in poles {
        if p.im > EPS {
            pairs.push((p, p.conj()));
        } else if p.im.abs() <= EPS {
            reals.push(Complex64::new(p.re, 0.0));
        }
    }
    reals.sort_by(|a, b| a.re.total_cmp(&b.re));
    for chunk in reals.chunks(2) {
        match chunk {
            [a, b] => pairs.push((*a, *b)),
            [a] => pairs.push((*a, Complex64::new(0.0, 0.0))),
            _ => unreachable!(),
        }
    }
    pairs
}

impl BandpassCoeffs {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    /// Digital frequency where the analog center frequency lands.
    pub fn center_hz(&self) -> f64 {
        let fs = self.sample_rate_hz;
        let fs2 = 2.0 * fs;
        let wl = fs2 * (PI * self.low_hz / fs).tan();
        let wh = fs2 * (PI * self.high_hz / fs).tan();
        (wl * wh).sqrt().atan2(fs2) * fs / PI
    }

    /// Group delay in samples at `freq_hz`, by central difference of the phase.
    pub fn group_delay(&self, freq_hz: f64) -> f64 {
        let df = 1e-3 * self.sample_rate_hz / 2.0 / 1000.0;
        let h1 = self.response(freq_hz - df);
        let h2 = self.response(freq_hz + df);
        let dphi = (h2 / h1).arg();
        let dw = 2.0 * PI * 2.0 * df / self.sample_rate_hz;
        -dphi / dw
    }
}

/// Streaming filter state: one transposed direct-form II delay line per section.
#[derive(Debug, Clone)]
pub struct FilterState {
    coeffs: BandpassCoeffs,
    delays: Vec<[f64; 2]>,
}

impl FilterState {
    pub fn new(coeffs: BandpassCoeffs) -> Self {
        let delays = vec![[0.0; 2]; coeffs.sections.len()];
        Self { coeffs, delays }
    }

    pub fn coeffs(&self) -> &BandpassCoeffs {
        &self.coeffs
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let mut y = x;
        for (s, d) in self.coeffs.sections.iter().zip(self.delays.iter_mut()) {
            let out = s.b[0] * y + d[0];
            d[0] = s.b[1] * y - s.a[1] * out + d[1];
            d[1] = s.b[2] * y - s.a[2] * out;
            y = out;
        }
        y
    }

    pub fn process_slice(&mut self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.process(x)).collect()
    }

    pub fn reset(&mut self) {
        self.delays.iter_mut().for_each(|d| *d = [0.0; 2]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn response_shape_of_default_band() {
        let c = design_bandpass(300.0, 3000.0, 30_000.0).unwrap();
        assert_eq!(c.sections.len(), 3);
        assert!(c.magnitude(0.0) < 1e-6);
        let fc = (300.0f64 * 3000.0).sqrt();
        let g = c.magnitude(fc);
        assert!((0.7..=1.0 + 1e-9).contains(&g), "gain at {fc} Hz = {g}");
        // analog center maps to unity gain exactly
        assert!((c.magnitude(c.center_hz()) - 1.0).abs() < 1e-9);
        // -3 dB at the band edges
        for f in [300.0, 3000.0] {
            assert!((c.magnitude(f) - 0.5f64.sqrt()).abs() < 1e-6);
        }
        assert!(c.magnitude(15_000.0) < 1e-6);
    }

    #[test]
    fn sections_are_stable() {
        let c = design_bandpass(300.0, 3000.0, 30_000.0).unwrap();
        for s in &c.sections {
            // both roots of 1 + a1 z^-1 + a2 z^-2 inside unit circle
            assert!(s.a[2].abs() < 1.0);
            assert!(s.a[1].abs() < 1.0 + s.a[2]);
        }
    }

    #[test]
    fn mains_hum_is_rejected() {
        let c = design_bandpass(300.0, 3000.0, 30_000.0).unwrap();
        let mut f = FilterState::new(c);
        let fs = 30_000.0;
        let x: Vec<f64> = (0..30_000)
            .map(|i| (2.0 * PI * 50.0 * i as f64 / fs).sin())
            .collect();
        let y = f.process_slice(&x);
        assert!(rms(&y) < 0.05 * rms(&x), "ratio {}", rms(&y) / rms(&x));
    }

    #[test]
    fn invalid_band_edges_are_rejected() {
        assert!(design_bandpass(3000.0, 300.0, 30_000.0).is_err());
        assert!(design_bandpass(300.0, 300.0, 30_000.0).is_err());
        assert!(design_bandpass(0.0, 300.0, 30_000.0).is_err());
        assert!(design_bandpass(300.0, 16_000.0, 30_000.0).is_err());
    }

    #[test]
    fn streaming_is_causal() {
        let c = design_bandpass(300.0, 3000.0, 30_000.0).unwrap();
        let mut a = FilterState::new(c.clone());
        let mut b = FilterState::new(c);
        let x: Vec<f64> = (0..200).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut y = x.clone();
        y[150] += 100.0;
        let ya = a.process_slice(&x);
        let yb = b.process_slice(&y);
        assert_eq!(ya[..150], yb[..150]);
        assert_ne!(ya[150], yb[150]);
    }

    #[test]
    fn group_delay_is_positive_in_band() {
        let c = design_bandpass(300.0, 3000.0, 30_000.0).unwrap();
        let d = c.group_delay(c.center_hz());
        assert!(d > 1.0 && d < 30.0, "delay {d}");
    }
}
