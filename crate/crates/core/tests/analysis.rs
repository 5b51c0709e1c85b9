use neusort::io::WeightSnapshot;
use neusort::synth::gen_analysis_stream;
use neusort::{ChannelSorter, SorterConfig};

#[test]
fn two_waveform_stream_learns_two_maps() {
    for seed in 0..4u64 {
        let stream = gen_analysis_stream(seed);
        let cfg = SorterConfig { seed, ..SorterConfig::default() };
        let mut s = ChannelSorter::new(&cfg, 30_000.0, 0).unwrap();
        s.push_candidates(&stream.candidates).unwrap();
        assert_eq!(s.valid_units().len(), 2, "seed {seed}");

        let state = s.layer().to_state();
        let snap = WeightSnapshot::from_state(&state);
        assert_eq!(snap.active_count(), 2, "seed {seed}");
        let strong = state.nodes.iter().filter(|n| n.weights.max() >= 0.9).count();
        assert_eq!(strong, 2, "seed {seed}");
    }
}

#[test]
fn realigned_stream_keeps_its_peaks() {
    for seed in 0..4u64 {
        let stream = gen_analysis_stream(seed);
        for (i, c) in stream.candidates.iter().enumerate() {
            assert!(c.waveform[c.peak_index].abs() > 80.0, "seed {seed} candidate {i}");
        }
    }
}
