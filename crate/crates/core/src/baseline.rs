//! PCA + k-means sorter trained once and then frozen.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{SortedSpike, SpikeCandidate, Unit};

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_COMPONENTS: usize = 2;
pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PcaKmModel {
    pub mean: Vec<f64>,
    /// Principal directions, strongest first, each of length N.
    pub basis: Vec<Vec<f64>>,
    /// Variance along each principal direction.
    pub explained_variance: Vec<f64>,
    /// Cluster centers in the projected space; cluster `k` is unit `k + 1`.
    pub centroids: Vec<Vec<f64>>,
    pub trained: bool,
}

impl PcaKmModel {
    /// Fits the projection and the clusters on `candidates`.
    pub fn train(candidates: &[SpikeCandidate], k: usize, p: usize, seed: u64) -> Result<Self> {
        if k == 0 || p == 0 {
            return Err(Error::InvalidParameter("k and p must be positive".into()));
        }
        if candidates.len() < k {
            return Err(Error::InvalidParameter(format!(
                "{} candidates cannot form {k} clusters",
                candidates.len()
            )));
        }
        let n = candidates[0].len();
        if let Some(index) = candidates.iter().position(|c| c.len() != n) {
            return Err(Error::CandidateLength {
                index,
                len: candidates[index].len(),
                expected: n,
            });
        }
        if p > n {
            return Err(Error::InvalidParameter(format!("{p} components from {n} samples")));
        }

        let rows = candidates.len();
        let data = DMatrix::from_fn(rows, n, |r, c| candidates[r].waveform[c]);
        let mean: Vec<f64> = (0..n).map(|c| data.column(c).mean()).collect();
        let centered = DMatrix::from_fn(rows, n, |r, c| data[(r, c)] - mean[c]);
        let cov = centered.transpose() * &centered / (rows.max(2) - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let basis: Vec<Vec<f64>> = order[..p]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect();
        let explained_variance = order[..p].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

        let mut model = Self {
            mean,
            basis,
            explained_variance,
            centroids: Vec::new(),
            trained: false,
        };
        let points: Vec<Vec<f64>> = candidates.iter().map(|c| model.project(&c.waveform)).collect();
        model.centroids = kmeans(&points, k, seed);
        model.trained = true;
        Ok(model)
    }

    /// Coordinates of `waveform` along the principal directions.
    pub fn project(&self, waveform: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| {
                b.iter()
                    .zip(waveform.iter().zip(&self.mean))
                    .map(|(v, (x, m))| v * (x - m))
                    .sum()
            })
            .collect()
    }

    /// Nearest-centroid unit id (1-based); ties go to the lowest id.
    pub fn classify(&self, candidate: &SpikeCandidate) -> Result<u32> {
        self.nearest(candidate).map(|(u, _)| u)
    }

    fn nearest(&self, candidate: &SpikeCandidate) -> Result<(u32, f64)> {
        if !self.trained {
            return Err(Error::Untrained);
        }
        if candidate.len() != self.mean.len() {
            return Err(Error::CandidateLength {
                index: 0,
                len: candidate.len(),
                expected: self.mean.len(),
            });
        }
        let x = self.project(&candidate.waveform);
        let (k, d) = nearest(&x, &self.centroids);
        Ok((k as u32 + 1, d.sqrt()))
    }

    /// Labels every candidate; `potential` carries the centroid distance.
    pub fn sort(&self, candidates: &[SpikeCandidate], channel_id: u32) -> Result<Vec<SortedSpike>> {
        candidates
            .iter()
            .map(|c| {
                let (u, d) = self.nearest(c)?;
                Ok(SortedSpike {
                    channel_id,
                    timestamp_samples: c.timestamp_samples,
                    unit: Unit::Node(u),
                    potential: d,
                })
            })
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's algorithm from farthest-point seeds; the first seed is drawn
/// with `seed`. Empty clusters keep their previous center.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let far = points
            .iter()
            .map(|p| nearest(p, &centroids).1)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc })
            .0;
        centroids.push(points[far].clone());
    }
    lloyd(points, centroids, MAX_LLOYD_ITERATIONS)
}

/// Lloyd iterations from `centroids` until assignments stop changing.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> Vec<Vec<f64>> {
    let dim = points.first().map_or(0, Vec::len);
    let mut assign: Vec<usize> = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let k = nearest(p, &centroids).0;
            changed |= *a != k;
            *a = k;
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (k, c) in centroids.iter_mut().enumerate() {
            if counts[k] > 0 {
                *c = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
    }
    centroids
}

/// Within-cluster sum of squares of `points` under `centroids`.
pub fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> f64 {
    points.iter().map(|p| nearest(p, centroids).1).sum()
}

/// Trains on candidates before `train_until` (a timestamp) and labels the
/// whole stream with the frozen model.
pub fn sort_frozen(
    candidates: &[SpikeCandidate],
    train_until: u64,
    k: usize,
    p: usize,
    seed: u64,
) -> Result<(PcaKmModel, Vec<SortedSpike>)> {
    let split = candidates.partition_point(|c| c.timestamp_samples < train_until);
    let model = PcaKmModel::train(&candidates[..split], k, p, seed)?;
    let out = model.sort(candidates, 0)?;
    Ok((model, out))
}
