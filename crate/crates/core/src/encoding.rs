//! Gaussian receptive field encoder.
//!
//! Every time point of a candidate is presented to `M` sensor nodes with
//! overlapping Gaussian tuning curves. A node's activation is the firing
//! probability of a single event for that time point, so a candidate of
//! length `N` becomes an `M x N` binary event train. Only which nodes fired
//! is kept, not when.

use rand::Rng;

use crate::error::{Error, Result};
use crate::signal::{SorterConfig, SpikeCandidate};

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveField {
    centers: Vec<f64>,
    width: f64,
    i_min: f64,
    i_max: f64,
    beta: f64,
}

impl ReceptiveField {
    /// Builds the field from the interval, node distance and shape factor.
    pub fn from_config(cfg: &SorterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new(cfg.i_min, cfg.i_max, cfg.beta, cfg.encoder_nodes()))
    }

    /// Field with `nodes` centers over `[i_min, i_max]`; the two outer
    /// centers sit half a spacing outside the interval.
    pub fn new(i_min: f64, i_max: f64, beta: f64, nodes: usize) -> Self {
        assert!(nodes >= 3, "receptive field needs at least 3 nodes");
        let spacing = (i_max - i_min) / (nodes - 2) as f64;
        let centers = (1..=nodes)
            .map(|i| i_min + (2.0 * i as f64 - 3.0) / 2.0 * spacing)
            .collect();
        Self {
            centers,
            width: spacing / beta,
            i_min,
            i_max,
            beta,
        }
    }

    pub fn nodes(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Gaussian width θ.
    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn spacing(&self) -> f64 {
        (self.i_max - self.i_min) / (self.nodes() - 2) as f64
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.i_min, self.i_max)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Firing probability of 1-based `node` for `value`. Values outside the
    /// interval fall on the Gaussian tails; nothing is clamped.
    pub fn activation(&self, node: usize, value: f64) -> f64 {
        self.activation0(node - 1, value)
    }

    #[inline]
    fn activation0(&self, idx: usize, value: f64) -> f64 {
        let d = value - self.centers[idx];
        (-d * d / (2.0 * self.width * self.width)).exp()
    }

    /// Encodes one candidate. Stochastic mode draws one Bernoulli event per
    /// (node, time point); deterministic mode fires where activation ≥ 0.5.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        candidate: &SpikeCandidate,
        mode: EncodeMode,
        rng: &mut R,
    ) -> Result<EventTrain> {
        if let Some(position) = candidate.waveform.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCandidate { position });
        }
        let rows = self.nodes();
        let cols = candidate.waveform.len();
        let mut events = vec![false; rows * cols];
        for (n, &value) in candidate.waveform.iter().enumerate() {
            for m in 0..rows {
                let p = self.activation0(m, value);
                events[m * cols + n] = match mode {
                    EncodeMode::Deterministic => p >= 0.5,
                    EncodeMode::Stochastic => rng.random::<f64>() < p,
                };
            }
        }
        Ok(EventTrain { rows, cols, events })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Stochastic,
    Deterministic,
}

impl EncodeMode {
    pub fn from_flag(deterministic: bool) -> Self {
        if deterministic {
            EncodeMode::Deterministic
        } else {
            EncodeMode::Stochastic
        }
    }
}

/// Binary `rows x cols` matrix of sensor events, row-major (row = sensor node).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventTrain {
    rows: usize,
    cols: usize,
    events: Vec<bool>,
}

impl EventTrain {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            events: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut t = Self::zeros(rows, cols);
        for m in 0..rows {
            for n in 0..cols {
                t.events[m * cols + n] = f(m, n);
            }
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Event at 0-based sensor node `m`, time point `n`.
    pub fn get(&self, m: usize, n: usize) -> bool {
        self.events[m * self.cols + n]
    }

    pub fn set(&mut self, m: usize, n: usize, on: bool) {
        self.events[m * self.cols + n] = on;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.events
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::default_config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field() -> ReceptiveField {
        ReceptiveField::from_config(&default_config()).unwrap()
    }

    #[test]
    fn default_field_geometry() {
        let f = field();
        assert_eq!(f.nodes(), 31);
        assert!((f.width() - 0.5 * 400.0 / 29.0).abs() < 1e-12);
        assert!((f.width() - 6.8966).abs() < 1e-4);
        assert_eq!(f.centers()[15], 0.0);
        assert!((f.centers()[0] - (-200.0 - 0.5 * 400.0 / 29.0)).abs() < 1e-12);
        assert!((f.centers()[0] + 206.897).abs() < 1e-3);
        for w in f.centers().windows(2) {
            assert!((w[1] - w[0] - 400.0 / 29.0).abs() < 1e-9);
        }
    }

    #[test]
    fn activation_values() {
        let f = field();
        for node in [1, 16, 31] {
            assert_eq!(f.activation(node, f.centers()[node - 1]), 1.0);
        }
        let mid = (f.centers()[9] + f.centers()[10]) / 2.0;
        assert!((f.activation(10, mid) - f.activation(11, mid)).abs() < 1e-12);
        assert!((f.activation(16, f.width()) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((f.activation(16, 6.8966) - 0.6065).abs() < 1e-4);
        // tails beyond the interval are still evaluated
        assert!(f.activation(31, 260.0) > 0.0);
    }

    #[test]
    fn deterministic_encoding_of_zeros() {
        let f = field();
        let c = SpikeCandidate::new(vec![0.0; 64], 20, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = f.encode(&c, EncodeMode::Deterministic, &mut rng).unwrap();
        assert_eq!((t.rows(), t.cols()), (31, 64));
        for m in 0..31 {
            for n in 0..64 {
                assert_eq!(t.get(m, n), m == 15);
            }
        }
    }

    #[test]
    fn same_seed_same_train() {
        let f = field();
        let c = SpikeCandidate::new((0..64).map(|i| (i as f64 * 0.3).sin() * 90.0).collect(), 20, 0);
        let a = f
            .encode(&c, EncodeMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = f
            .encode(&c, EncodeMode::Stochastic, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_candidate_is_rejected() {
        let f = field();
        let mut w = vec![0.0; 64];
        w[7] = f64::INFINITY;
        let c = SpikeCandidate::new(w, 20, 0);
        let err = f
            .encode(&c, EncodeMode::Deterministic, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteCandidate { position: 7 }));
    }
}
