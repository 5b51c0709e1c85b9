//! Online spike sorting with a receptive-field encoder and a layer of
//! self-organizing integrate-and-fire perception nodes.
//!
//! A [`ChannelSorter`] takes raw samples of one channel and returns sorted
//! spikes as soon as they are classified. Every input passes through the
//! network once; state size does not grow with the recording.

pub mod baseline;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod io;
pub mod network;
pub mod pipeline;
pub mod preprocess;
pub mod signal;
pub mod synth;

pub use baseline::PcaKmModel;
pub use encoding::{EncodeMode, EventTrain, ReceptiveField};
pub use error::{Error, Result};
pub use eval::{match_spikes, report, scores, MatchResult, ReportFormat, Scores};
pub use network::{potential, LayerState, PerceptionLayer, PerceptionNode, WeightMap};
pub use pipeline::{
    bench_throughput, estimate_power, sort_trace, BenchReport, ChannelSorter, MultiChannelSorter,
    SorterDiagnostics,
};
pub use signal::{
    default_config, derive_seed, validate_config, ConfigViolation, GroundTruthEvent, RawTrace,
    SortedSpike, SorterConfig, SpikeCandidate, Unit,
};
