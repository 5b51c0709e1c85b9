#![allow(dead_code)]

use neusort::encoding::EventTrain;
use neusort::network::{LearningParams, PerceptionLayer};
use neusort::pipeline::channel_seed;
use neusort::synth::{gen_hybrid, gen_spike_times, gen_syn1, gen_syn2, gen_syn3, HybridSpec, SynthSpec};
use neusort::{sort_trace, ChannelSorter, GroundTruthEvent, MultiChannelSorter, SorterConfig};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), TestCaseError>;

/// Short three-unit recording for invariants that need a real trace.
pub fn short_spec(seed: u64, duration_s: f64) -> SynthSpec {
    SynthSpec {
        duration_s,
        ..SynthSpec::standard(seed)
    }
}

pub fn random_trains(rows: usize, cols: usize, count: usize, density: f64, seed: u64) -> Vec<EventTrain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| EventTrain::from_fn(rows, cols, |_, _| rng.random::<f64>() < density))
        .collect()
}

pub fn weight_bounds(params: LearningParams, nodes: usize, density: f64, seed: u64) -> Check {
    let mut layer = PerceptionLayer::new(nodes, 6, 8, params, seed);
    for t in random_trains(6, 8, 60, density, seed ^ 1) {
        layer.step(&t).unwrap();
        for w in layer.snapshot_weights() {
            prop_assert!(w.min() >= params.w_min, "weight {} below {}", w.min(), params.w_min);
            prop_assert!(w.max() <= params.w_max, "weight {} above {}", w.max(), params.w_max);
        }
    }
    Ok(())
}

/// Only the winner learns, and at most one fire count moves, per input.
pub fn wta_exclusive(params: LearningParams, nodes: usize, density: f64, seed: u64) -> Check {
    let mut layer = PerceptionLayer::new(nodes, 6, 8, params, seed);
    for t in random_trains(6, 8, 60, density, seed ^ 2) {
        let before = layer.snapshot_weights();
        let fires_before = layer.fire_counts();
        let d = layer.step(&t).unwrap();
        let after = layer.snapshot_weights();
        for (i, (b, a)) in before.iter().zip(&after).enumerate() {
            if i != d.winner {
                prop_assert_eq!(b, a, "node {} learned but {} won", i, d.winner);
            }
        }
        let moved: Vec<usize> = layer
            .fire_counts()
            .iter()
            .zip(&fires_before)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        match d.unit.id() {
            Some(u) => prop_assert_eq!(moved, vec![u as usize - 1]),
            None => prop_assert!(moved.is_empty()),
        }
    }
    Ok(())
}

/// State size stops changing once the detector buffers are full.
pub fn constant_memory(seed: u64) -> Check {
    let d = gen_syn1(&short_spec(seed, 8.0)).unwrap();
    let x = &d.trace.samples;
    let mut s = ChannelSorter::new(&SorterConfig { seed, ..SorterConfig::default() }, 30_000.0, 0).unwrap();
    let warm = 60_000;
    s.push_samples(&x[..warm]).unwrap();
    let bytes = s.state_bytes();
    for chunk in x[warm..].chunks(30_000) {
        s.push_samples(chunk).unwrap();
        prop_assert_eq!(s.state_bytes(), bytes);
    }
    prop_assert!(s.diagnostics().candidates > 0);
    Ok(())
}

/// A channel's output depends only on its own samples and seed.
pub fn channels_independent(seed: u64) -> Check {
    let a = gen_syn1(&short_spec(seed, 3.0)).unwrap().trace.samples;
    let b = gen_syn1(&short_spec(seed + 1, 3.0)).unwrap().trace.samples;
    let c = gen_syn1(&short_spec(seed + 2, 3.0)).unwrap().trace.samples;
    let cfg = SorterConfig { seed, ..SorterConfig::default() };

    let mut ab = MultiChannelSorter::new(&cfg, 30_000.0, &[4, 9]).unwrap();
    let out_ab = ab.push(&[&a, &b]).unwrap();
    let mut ac = MultiChannelSorter::new(&cfg, 30_000.0, &[4, 9]).unwrap();
    let out_ac = ac.push(&[&a, &c]).unwrap();
    prop_assert_eq!(&out_ab[0], &out_ac[0]);

    let alone = SorterConfig {
        seed: channel_seed(seed, 4),
        ..cfg
    };
    let (single, _) = sort_trace(&alone, &a, 30_000.0, 4).unwrap();
    prop_assert_eq!(&out_ab[0], &single);
    Ok(())
}

fn min_gap_by_unit(truth: &[GroundTruthEvent]) -> Option<u64> {
    let mut units: Vec<u32> = truth.iter().map(|e| e.unit).collect();
    units.sort_unstable();
    units.dedup();
    units
        .into_iter()
        .filter_map(|u| {
            let ts: Vec<u64> = truth.iter().filter(|e| e.unit == u).map(|e| e.timestamp_samples).collect();
            ts.windows(2).map(|w| w[1] - w[0]).min()
        })
        .min()
}

/// Same-unit spikes never come closer than the refractory period, in any
/// generator; hybrid spikes never overlap at all.
pub fn isi_respects_refractory(seed: u64, rate_hz: f64, refractory_ms: f64) -> Check {
    let times = gen_spike_times(rate_hz, 20.0, refractory_ms, seed).unwrap();
    for w in times.windows(2) {
        prop_assert!(w[1] - w[0] >= refractory_ms * 1e-3 - 1e-12);
    }

    let spec = SynthSpec {
        refractory_ms,
        ..short_spec(seed, 10.0)
    };
    let r = (refractory_ms * 1e-3 * spec.sample_rate_hz).round() as u64;
    for d in [
        gen_syn1(&spec).unwrap(),
        gen_syn2(&spec, 3, 0.3).unwrap(),
        gen_syn3(&spec, 2, 2.0).unwrap(),
    ] {
        if let Some(g) = min_gap_by_unit(&d.truth) {
            prop_assert!(g >= r, "{} gap {} < {}", d.meta.kind, g, r);
        }
    }

    let h = gen_hybrid(&HybridSpec {
        duration_s: 10.0,
        spike_count: 120,
        ..HybridSpec::standard(0.1, seed)
    })
    .unwrap();
    let longest = h.trace.sample_rate_hz * 4e-3;
    for w in h.truth.windows(2) {
        prop_assert!((w[1].timestamp_samples - w[0].timestamp_samples) as f64 >= longest);
    }
    Ok(())
}

/// Generating and sorting twice from one seed gives identical results.
pub fn seed_deterministic(seed: u64) -> Check {
    let run = || {
        let d = gen_syn1(&short_spec(seed, 4.0)).unwrap();
        let cfg = SorterConfig { seed, ..SorterConfig::default() };
        let (out, s) = sort_trace(&cfg, &d.trace.samples, d.trace.sample_rate_hz, 0).unwrap();
        (d.trace.samples, d.truth, out, s.layer().to_state())
    };
    prop_assert_eq!(run(), run());
    Ok(())
}

pub fn learning_params() -> impl Strategy<Value = LearningParams> {
    (0.0f64..0.5, 0.1f64..2.0, 0.01f64..1.0, 0.01f64..1.0, 1.0f64..20.0).prop_map(
        |(w_min, span, plus, minus, th_d)| LearningParams {
            th_d,
            tau_h_plus: plus,
            tau_h_minus: minus,
            w_min,
            w_max: w_min + span,
        },
    )
}
