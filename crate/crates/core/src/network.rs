//! Perception layer: integrate-and-fire output nodes with winner-take-all
//! selection and a clamped Hebbian weight update.
//!
//! For each event train every node integrates `z = Σ J·ω` with its current
//! weights. If the strongest node reaches the firing threshold it wins and
//! labels the spike. Otherwise the spike is handed to a node without
//! labelling it (the initial state). In both cases only the winner learns:
//! synapses that saw an event gain `tau_h_plus`, the rest lose
//! `tau_h_minus`, clamped to `[w_min, w_max]`.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::EventTrain;
use crate::error::{Error, Result};
use crate::signal::{SortedSpike, SorterConfig, SpikeCandidate, Unit};

/// A node counts as blank while every weight is below this fraction of the range.
pub const BLANK_FRACTION: f64 = 0.05;

/// Slack on the firing comparison so sums of `tau_h_plus` steps that land
/// on the threshold exactly still fire.
const FIRE_EPS: f64 = 1e-9;

/// Fraction of a tentative node's weight mass an unlabelled train must hit
/// for the node to keep learning it.
pub const RECRUIT_MATCH: f64 = 0.4;

/// `rows x cols` synaptic weights of one perception node, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct WeightMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl WeightMap {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.values[m * self.cols + n]
    }

    pub fn set(&mut self, m: usize, n: usize, w: f64) {
        self.values[m * self.cols + n] = w;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl From<WeightMap> for Vec<Vec<f64>> {
    fn from(w: WeightMap) -> Self {
        w.values.chunks(w.cols.max(1)).map(|r| r.to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightMap {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged weight matrix".into());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.into_iter().flatten().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionNode {
    pub weights: WeightMap,
    pub fire_count: u64,
    pub last_potential: f64,
}

/// Membrane potential of `node` for `train`: the sum of weights on every
/// synapse that received an event.
pub fn potential(node: &PerceptionNode, train: &EventTrain) -> Result<f64> {
    let w = &node.weights;
    if w.rows != train.rows() || w.cols != train.cols() {
        return Err(Error::Dimension {
            expected_rows: w.rows,
            expected_cols: w.cols,
            rows: train.rows(),
            cols: train.cols(),
        });
    }
    Ok(integrate(&w.values, train.as_slice()))
}

#[inline]
fn integrate(weights: &[f64], events: &[bool]) -> f64 {
    weights
        .iter()
        .zip(events)
        .filter(|(_, &e)| e)
        .map(|(w, _)| w)
        .sum()
}

/// Outcome of presenting one event train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub unit: Unit,
    /// 0-based index of the node that learned this train.
    pub winner: usize,
    /// Largest membrane potential over all nodes, before learning.
    pub potential: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    pub th_d: f64,
    pub tau_h_plus: f64,
    pub tau_h_minus: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl LearningParams {
    pub fn from_config(cfg: &SorterConfig) -> Self {
        Self {
            th_d: cfg.th_d(),
            tau_h_plus: cfg.tau_h_plus,
            tau_h_minus: cfg.tau_h_minus,
            w_min: cfg.w_min,
            w_max: cfg.w_max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerceptionLayer {
    nodes: Vec<PerceptionNode>,
    rows: usize,
    cols: usize,
    params: LearningParams,
    rng: ChaCha8Rng,
}

impl PerceptionLayer {
    pub fn new(node_count: usize, rows: usize, cols: usize, params: LearningParams, seed: u64) -> Self {
        assert!(node_count > 0, "perception layer needs at least one node");
        assert!(params.th_d > 0.0, "firing threshold must be positive");
        let node = PerceptionNode {
            weights: WeightMap::filled(rows, cols, params.w_min.max(0.0).min(params.w_max)),
            fire_count: 0,
            last_potential: 0.0,
        };
        Self {
            nodes: vec![node; node_count],
            rows,
            cols,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_config(cfg: &SorterConfig, seed: u64) -> Self {
        Self::new(
            cfg.perception_nodes,
            cfg.encoder_nodes(),
            cfg.window_len,
            LearningParams::from_config(cfg),
            seed,
        )
    }

    pub fn nodes(&self) -> &[PerceptionNode] {
        &self.nodes
    }

    pub fn params(&self) -> &LearningParams {
        &self.params
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn blank_limit(&self) -> f64 {
        self.params.w_min + BLANK_FRACTION * (self.params.w_max - self.params.w_min)
    }

    pub fn is_blank(&self, idx: usize) -> bool {
        self.nodes[idx].weights.max() < self.blank_limit()
    }

    /// Potentials of all nodes for `train`, without learning.
    pub fn potentials(&self, train: &EventTrain) -> Result<Vec<f64>> {
        self.nodes.iter().map(|n| potential(n, train)).collect()
    }

    /// Classifies `train` and applies the update to the winner only.
    pub fn step(&mut self, train: &EventTrain) -> Result<Decision> {
        let z = self.potentials(train)?;
        // first maximum wins ties
        let (best, best_z) = z
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });

        let (winner, unit) = if best_z >= self.params.th_d - FIRE_EPS {
            (best, Unit::Node(best as u32 + 1))
        } else {
            (self.assign_unselected(&z), Unit::Provisional)
        };

        for (node, &zi) in self.nodes.iter_mut().zip(&z) {
            node.last_potential = zi;
        }
        if !unit.is_provisional() {
            self.nodes[winner].fire_count += 1;
        }
        self.learn(winner, train);
        Ok(Decision {
            unit,
            winner,
            potential: best_z,
        })
    }

    /// Picks the node that learns a train no node fired for.
    ///
    /// A tentative node (has weights, never fired) whose weight mass is
    /// mostly covered by the train keeps learning it; otherwise a random
    /// blank node is recruited, then a random tentative node, then any node.
    fn assign_unselected(&mut self, z: &[f64]) -> usize {
        let limit = self.blank_limit();
        let mut blank = Vec::new();
        let mut tentative = Vec::new();
        let mut best_match: Option<(usize, f64)> = None;
        for (i, node) in self.nodes.iter().enumerate() {
            if node.weights.max() < limit {
                blank.push(i);
            } else if node.fire_count == 0 {
                tentative.push(i);
                let mass = node.weights.sum();
                let score = if mass > 0.0 { z[i] / mass } else { 0.0 };
                if best_match.is_none_or(|(_, s)| score > s) {
                    best_match = Some((i, score));
                }
            }
        }
        if let Some((i, score)) = best_match {
            if score >= RECRUIT_MATCH {
                return i;
            }
        }
        let pool: Vec<usize> = if !blank.is_empty() {
            blank
        } else if !tentative.is_empty() {
            tentative
        } else {
            (0..self.nodes.len()).collect()
        };
        *pool.choose(&mut self.rng).expect("layer has nodes")
    }

    fn learn(&mut self, winner: usize, train: &EventTrain) {
        let p = self.params;
        let weights = &mut self.nodes[winner].weights.values;
        for (w, &e) in weights.iter_mut().zip(train.as_slice()) {
            *w = if e {
                (*w + p.tau_h_plus).min(p.w_max)
            } else {
                (*w - p.tau_h_minus).max(p.w_min)
            };
        }
    }

    /// Classifies one candidate's train and emits its output record.
    pub fn classify_and_learn(
        &mut self,
        train: &EventTrain,
        candidate: &SpikeCandidate,
        channel_id: u32,
    ) -> Result<SortedSpike> {
        let d = self.step(train)?;
        Ok(SortedSpike {
            channel_id,
            timestamp_samples: candidate.timestamp_samples,
            unit: d.unit,
            potential: d.potential,
        })
    }

    /// 1-based ids of nodes that fired at least `min_fires` times.
    pub fn valid_units(&self, min_fires: u64) -> Vec<u32> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.fire_count >= min_fires && n.fire_count > 0)
            .map(|(i, _)| i as u32 + 1)
            .collect()
    }

    pub fn snapshot_weights(&self) -> Vec<WeightMap> {
        self.nodes.iter().map(|n| n.weights.clone()).collect()
    }

    pub fn fire_counts(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.fire_count).collect()
    }

    /// Bytes of learned state; independent of how many spikes were seen.
    pub fn state_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.weights.values.capacity() * std::mem::size_of::<f64>() + std::mem::size_of::<PerceptionNode>())
            .sum::<usize>()
            + std::mem::size_of::<Self>()
    }

    pub fn to_state(&self) -> LayerState {
        LayerState {
            params: self.params,
            nodes: self.nodes.clone(),
        }
    }

    /// Restores a layer; the random stream restarts from `seed`.
    pub fn from_state(state: LayerState, seed: u64) -> Result<Self> {
        let first = state
            .nodes
            .first()
            .ok_or_else(|| Error::InvalidParameter("layer state has no nodes".into()))?;
        let (rows, cols) = (first.weights.rows, first.weights.cols);
        if state
            .nodes
            .iter()
            .any(|n| n.weights.rows != rows || n.weights.cols != cols)
        {
            return Err(Error::InvalidParameter("weight maps differ in shape".into()));
        }
        Ok(Self {
            nodes: state.nodes,
            rows,
            cols,
            params: state.params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

/// Serializable learned state of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub params: LearningParams,
    pub nodes: Vec<PerceptionNode>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::default_config;

    fn layer() -> PerceptionLayer {
        PerceptionLayer::from_config(&default_config(), 7)
    }

    fn pattern(rows: usize, cols: usize, offset: usize) -> EventTrain {
        EventTrain::from_fn(rows, cols, |m, n| m == (n + offset) % rows)
    }

    #[test]
    fn potential_examples() {
        let mut node = PerceptionNode {
            weights: WeightMap::filled(31, 64, 0.0),
            fire_count: 0,
            last_potential: 0.0,
        };
        let t = pattern(31, 64, 3);
        assert_eq!(potential(&node, &t).unwrap(), 0.0);
        node.weights = WeightMap::filled(31, 64, 1.0);
        assert_eq!(potential(&node, &t).unwrap(), 64.0);
        // weights at 1 exactly on the node's own 64 synapses
        let mut w = WeightMap::filled(31, 64, 0.0);
        for n in 0..64 {
            w.set((n + 3) % 31, n, 1.0);
        }
        node.weights = w;
        let z = potential(&node, &t).unwrap();
        assert_eq!(z, 64.0);
        assert!(z > default_config().th_d());
        assert!(potential(&node, &EventTrain::zeros(30, 64)).is_err());
    }

    #[test]
    fn fresh_layer_is_provisional_and_updates_one_node() {
        let mut l = layer();
        let d = l.step(&pattern(31, 64, 0)).unwrap();
        assert_eq!(d.unit, Unit::Provisional);
        let touched = l.nodes().iter().filter(|n| n.weights.max() > 0.0).count();
        assert_eq!(touched, 1);
    }

    #[test]
    fn clamped_updates() {
        let mut l = layer();
        let t = EventTrain::from_fn(31, 64, |m, n| m == 0 && n == 0);
        let mut w = WeightMap::filled(31, 64, 0.0);
        w.set(0, 0, 0.95);
        w.set(1, 0, 0.05);
        for node in &mut l.nodes {
            node.weights = w.clone();
        }
        l.learn(2, &t);
        assert_eq!(l.nodes[2].weights.get(0, 0), 1.0);
        assert_eq!(l.nodes[2].weights.get(1, 0), 0.0);
        assert_eq!(l.nodes[3].weights.get(0, 0), 0.95);
    }

    #[test]
    fn repeated_pattern_converges_on_one_node() {
        let mut l = layer();
        let t = pattern(31, 64, 5);
        let units: Vec<Unit> = (0..5).map(|_| l.step(&t).unwrap().unit).collect();
        assert_eq!(&units[..2], &[Unit::Provisional, Unit::Provisional]);
        let id = units[2];
        assert!(!id.is_provisional());
        assert!(units[2..].iter().all(|&u| u == id));
        let node = &l.nodes()[id.id().unwrap() as usize - 1];
        for n in 0..64 {
            assert_eq!(node.weights.get((n + 5) % 31, n), 1.0);
        }
        assert_eq!(l.nodes().iter().filter(|n| n.weights.max() > 0.0).count(), 1);
    }

    #[test]
    fn disjoint_patterns_get_distinct_units() {
        let mut l = layer();
        let a = pattern(31, 64, 0);
        let b = pattern(31, 64, 10);
        let mut ua = Unit::Provisional;
        let mut ub = Unit::Provisional;
        for _ in 0..6 {
            ua = l.step(&a).unwrap().unit;
            ub = l.step(&b).unwrap().unit;
        }
        assert!(!ua.is_provisional() && !ub.is_provisional());
        assert_ne!(ua, ub);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let mut l = layer();
        for node in &mut l.nodes {
            node.weights = WeightMap::filled(31, 64, 1.0);
        }
        let d = l.step(&pattern(31, 64, 0)).unwrap();
        assert_eq!(d.unit, Unit::Node(1));
    }

    #[test]
    fn valid_units_and_snapshots() {
        let l = layer();
        assert!(l.valid_units(10).is_empty());
        let snap = l.snapshot_weights();
        assert_eq!(snap.len(), 9);
        assert!(snap.iter().all(|w| w.max() == 0.0 && w.rows() == 31 && w.cols() == 64));
        assert_eq!(snap, l.snapshot_weights());
    }

    #[test]
    fn weight_map_json_is_nested_rows() {
        let mut w = WeightMap::filled(2, 3, 0.0);
        w.set(1, 2, 0.5);
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, "[[0.0,0.0,0.0],[0.0,0.0,0.5]]");
        let back: WeightMap = serde_json::from_str(&s).unwrap();
        assert_eq!(back, w);
        assert!(serde_json::from_str::<WeightMap>("[[1.0],[1.0,2.0]]").is_err());
    }
}
