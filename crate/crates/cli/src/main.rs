use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use neusort::io::{
    read_results, read_state, read_trace, read_truth, write_json, write_results, write_trace, write_truth, SavedState,
    TraceFile, WeightSnapshot,
};
use neusort::pipeline::{bench_throughput, linear_fit};
use neusort::synth::{
    gen_analysis_stream, gen_hybrid, gen_syn1, gen_syn2, gen_syn3, Dataset, HybridSpec, NoiseKind, SynthSpec,
    HYBRID_LEVELS,
};
use neusort::{
    estimate_power, match_spikes, report, scores, ChannelSorter, Error, GroundTruthEvent, MultiChannelSorter,
    ReportFormat, SortedSpike, SorterConfig, SpikeCandidate,
};

mod exit {
    pub const VALIDATION: u8 = 2;
    pub const IO: u8 = 3;
    pub const INTERNAL: u8 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "neusort", version, about = "Online spike sorting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset: trace, ground truth and metadata.
    Generate(GenerateArgs),
    /// Sort a trace (or pre-cut candidates) and write JSON-lines results.
    Sort(SortArgs),
    /// Score results against ground truth.
    Eval(EvalArgs),
    /// Time the sorter on synthetic candidates.
    Bench(BenchArgs),
    /// Estimate power draw from event counts.
    Power(PowerArgs),
    /// Export the weight maps of a saved state.
    Snapshot(SnapshotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Syn1,
    Syn2,
    Syn3,
    Analysis,
    Hybrid,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    kind: Kind,
    /// Output stem; writes <out>.bin, <out>.truth.csv and <out>.meta.json
    /// (<out>.candidates.jsonl instead of the trace for `analysis`).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "NEUSORT_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Band-pass the background noise to the spike band.
    #[arg(long)]
    filtered_noise: bool,
    /// Hybrid noise level relative to the spike peak.
    #[arg(long)]
    noise: Option<f64>,
    /// Accept hybrid noise levels outside 0.05, 0.1, 0.2 and 0.4.
    #[arg(long)]
    allow_any_noise: bool,
    /// Inhibited unit for syn2, deforming unit for syn3.
    #[arg(long)]
    unit: Option<u32>,
    #[arg(long, default_value_t = 0.3)]
    onset: f64,
    #[arg(long, default_value_t = 2.0)]
    max_ratio: f64,
    #[arg(long)]
    spike_count: Option<usize>,
    #[arg(long)]
    amplitude_scale: Option<f64>,
}

#[derive(Debug, Args)]
struct SortArgs {
    /// Trace file to sort.
    #[arg(long, conflicts_with = "candidates", required_unless_present = "candidates")]
    trace: Option<PathBuf>,
    /// JSON-lines file of pre-cut candidates, one channel.
    #[arg(long)]
    candidates: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write the learned state of channel 0 (or the only channel) here.
    #[arg(long)]
    save_state: Option<PathBuf>,
    /// Continue from a saved state instead of a blank layer.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also write the run summary to this file.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Channel of `results` to score; required when several are present.
    #[arg(long)]
    channel: Option<u32>,
    #[arg(long = "tolerance_ms", alias = "tolerance-ms", default_value_t = 0.5)]
    tolerance_ms: f64,
    #[arg(long = "sample_rate_hz", alias = "sample-rate-hz", default_value_t = 30_000.0)]
    sample_rate_hz: f64,
    #[arg(long, default_value = "text")]
    format: String,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Candidate counts to time, comma separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PowerArgs {
    /// Events per input; read from a sort summary when omitted.
    #[arg(long)]
    events_per_input: Option<f64>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value_t = 3.42e3)]
    inputs_per_second: f64,
    #[arg(long, default_value_t = 96)]
    channels: u32,
    /// Energy per event in picojoules.
    #[arg(long, default_value_t = 23.6)]
    alpha_pj: f64,
}

#[derive(Debug, Args)]
struct SnapshotArgs {
    #[arg(long)]
    state: PathBuf,
    /// Output stem; writes <out>.json and <out>.csv.
    #[arg(long)]
    out: PathBuf,
}

/// One optional flag per configuration field, named after the field.
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// JSON file with a full or partial configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "NEUSORT_SEED")]
    seed: Option<u64>,
    #[arg(long = "i_min", alias = "i-min", allow_hyphen_values = true)]
    i_min: Option<f64>,
    #[arg(long = "i_max", alias = "i-max", allow_hyphen_values = true)]
    i_max: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "d_r", alias = "d-r")]
    d_r: Option<f64>,
    #[arg(long = "th_d_factor", alias = "th-d-factor")]
    th_d_factor: Option<f64>,
    #[arg(long = "tau_h_plus", alias = "tau-h-plus")]
    tau_h_plus: Option<f64>,
    #[arg(long = "tau_h_minus", alias = "tau-h-minus")]
    tau_h_minus: Option<f64>,
    #[arg(long = "w_min", alias = "w-min", allow_hyphen_values = true)]
    w_min: Option<f64>,
    #[arg(long = "w_max", alias = "w-max")]
    w_max: Option<f64>,
    #[arg(long = "window_len", alias = "window-len")]
    window_len: Option<usize>,
    #[arg(long = "align_index", alias = "align-index")]
    align_index: Option<usize>,
    #[arg(long = "perception_nodes", alias = "perception-nodes")]
    perception_nodes: Option<usize>,
    #[arg(long = "band_low_hz", alias = "band-low-hz")]
    band_low_hz: Option<f64>,
    #[arg(long = "band_high_hz", alias = "band-high-hz")]
    band_high_hz: Option<f64>,
    #[arg(long = "detect_k", alias = "detect-k")]
    detect_k: Option<f64>,
    #[arg(long = "detect_window_s", alias = "detect-window-s")]
    detect_window_s: Option<f64>,
    #[arg(long = "detect_min_amplitude", alias = "detect-min-amplitude")]
    detect_min_amplitude: Option<f64>,
    #[arg(long = "detect_min_snr", alias = "detect-min-snr")]
    detect_min_snr: Option<f64>,
    #[arg(long = "align_iterations", alias = "align-iterations")]
    align_iterations: Option<usize>,
    #[arg(long = "upsample_factor", alias = "upsample-factor")]
    upsample_factor: Option<usize>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long = "tolerance_ms", alias = "tolerance-ms")]
    tolerance_ms: Option<f64>,
    #[arg(long = "min_fires", alias = "min-fires")]
    min_fires: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<SorterConfig, Error> {
        self.resolve_from(SorterConfig::default())
    }

    /// Layers the config file, then individual flags, over `base`.
    fn resolve_from(&self, base: SorterConfig) -> Result<SorterConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => base,
        };
        macro_rules! apply {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    cfg.$f = v;
                }
            )*};
        }
        apply!(
            seed, i_min, i_max, beta, d_r, th_d_factor, tau_h_plus, tau_h_minus, w_min, w_max, window_len,
            align_index, perception_nodes, band_low_hz, band_high_hz, detect_k, detect_window_s,
            detect_min_amplitude, detect_min_snr, align_iterations, upsample_factor, tolerance_ms, min_fires
        );
        if self.deterministic {
            cfg.deterministic = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Sort(a) => sort(&a),
        Command::Eval(a) => eval(&a),
        Command::Bench(a) => bench(&a),
        Command::Power(a) => power(&a),
        Command::Snapshot(a) => snapshot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Json(_) => exit::IO,
        Error::Untrained => exit::INTERNAL,
        _ => exit::VALIDATION,
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

#[derive(Serialize)]
struct GenerateMeta<'a, S: Serialize> {
    #[serde(flatten)]
    dataset: &'a neusort::synth::DatasetMeta,
    spec: &'a S,
}

fn synth_spec(a: &GenerateArgs) -> SynthSpec {
    let mut spec = SynthSpec::standard(a.seed);
    if let Some(d) = a.duration {
        spec.duration_s = d;
    }
    if let Some(s) = a.noise_std {
        spec.noise_std = s;
    }
    if let Some(s) = a.amplitude_scale {
        spec.amplitude_scale = s;
    }
    if a.filtered_noise {
        spec.noise_kind = NoiseKind::Filtered;
    }
    spec
}

fn write_dataset<S: Serialize>(out: &Path, d: &Dataset, spec: &S) -> Result<(), Error> {
    let trace = TraceFile {
        sample_rate_hz: d.trace.sample_rate_hz,
        channels: vec![d.trace.samples.clone()],
    };
    write_trace(&with_ext(out, ".bin"), &trace)?;
    write_truth(&with_ext(out, ".truth.csv"), &d.truth)?;
    write_json(
        &with_ext(out, ".meta.json"),
        &GenerateMeta {
            dataset: &d.meta,
            spec,
        },
    )
}

fn generate(a: &GenerateArgs) -> Result<(), Error> {
    if a.noise.is_some() && !matches!(a.kind, Kind::Hybrid) {
        return Err(invalid("--noise applies to hybrid datasets only"));
    }
    match a.kind {
        Kind::Syn1 => {
            let spec = synth_spec(a);
            write_dataset(&a.out, &gen_syn1(&spec)?, &spec)
        }
        Kind::Syn2 => {
            let spec = synth_spec(a);
            write_dataset(&a.out, &gen_syn2(&spec, a.unit.unwrap_or(3), a.onset)?, &spec)
        }
        Kind::Syn3 => {
            let spec = synth_spec(a);
            write_dataset(&a.out, &gen_syn3(&spec, a.unit.unwrap_or(2), a.max_ratio)?, &spec)
        }
        Kind::Hybrid => {
            let level = a.noise.ok_or_else(|| invalid("hybrid datasets need --noise"))?;
            if !HYBRID_LEVELS.contains(&level) {
                if !a.allow_any_noise {
                    return Err(invalid(format!(
                        "unsupported noise level {level} (expected one of {HYBRID_LEVELS:?}, or pass --allow-any-noise)"
                    )));
                }
                eprintln!("warning: noise level {level} is not one of {HYBRID_LEVELS:?}");
            }
            let mut spec = HybridSpec::standard(level, a.seed);
            if let Some(d) = a.duration {
                spec.duration_s = d;
            }
            if let Some(n) = a.spike_count {
                spec.spike_count = n;
            }
            if let Some(s) = a.amplitude_scale {
                spec.amplitude_scale = s;
            }
            if a.filtered_noise {
                spec.noise_kind = NoiseKind::Filtered;
            }
            write_dataset(&a.out, &gen_hybrid(&spec)?, &spec)
        }
        Kind::Analysis => {
            let s = gen_analysis_stream(a.seed);
            let path = with_ext(&a.out, ".candidates.jsonl");
            let mut text = String::new();
            for c in &s.candidates {
                text.push_str(&serde_json::to_string(c)?);
                text.push('\n');
            }
            std::fs::write(path, text)?;
            let truth: Vec<GroundTruthEvent> = s
                .candidates
                .iter()
                .zip(&s.labels)
                .map(|(c, &unit)| GroundTruthEvent {
                    timestamp_samples: c.timestamp_samples,
                    unit,
                })
                .collect();
            write_truth(&with_ext(&a.out, ".truth.csv"), &truth)?;
            write_json(
                &with_ext(&a.out, ".meta.json"),
                &serde_json::json!({
                    "kind": "analysis",
                    "seed": a.seed,
                    "candidates": s.candidates.len(),
                    "deformation_onset": s.deformation_onset,
                }),
            )
        }
    }
}

#[derive(Debug, Serialize)]
struct ChannelSummary {
    channel_id: u32,
    candidates: u64,
    valid_units: Vec<u32>,
    valid_unit_count: usize,
    provisional_fraction: f64,
    events_per_input: f64,
    fire_counts: Vec<u64>,
}

#[derive(Debug, Serialize)]
struct SortSummary {
    spikes: usize,
    channels: Vec<ChannelSummary>,
    events_per_input: f64,
}

fn summarize(s: &ChannelSorter) -> ChannelSummary {
    let d = s.diagnostics();
    let valid = s.valid_units();
    ChannelSummary {
        channel_id: s.channel_id(),
        candidates: d.candidates,
        valid_unit_count: valid.len(),
        valid_units: valid,
        provisional_fraction: d.provisional_fraction(),
        events_per_input: d.avg_events_per_input(),
        fire_counts: d.fire_counts,
    }
}

fn read_candidates(path: &Path) -> Result<Vec<SpikeCandidate>, Error> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                what: "candidates",
                detail: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn sort(a: &SortArgs) -> Result<(), Error> {
    let resumed = a.resume.as_deref().map(read_state).transpose()?;
    let cfg = match &resumed {
        Some(st) => a.config.resolve_from(st.config.clone())?,
        None => a.config.resolve()?,
    };
    let restore = |s: ChannelSorter| match &resumed {
        Some(st) => s.with_layer_state(st.layer.clone()),
        None => Ok(s),
    };

    if let Some(path) = &a.candidates {
        let cands = read_candidates(path)?;
        let fs = resumed.as_ref().map_or(30_000.0, |s| s.sample_rate_hz);
        let mut s = restore(ChannelSorter::new(&cfg, fs, 0)?)?;
        let out = s.push_candidates(&cands)?;
        return write_sort_outputs(a, &cfg, fs, out, &[s]);
    }

    let trace = read_trace(a.trace.as_deref().expect("clap requires trace or candidates"))?;
    let fs = trace.sample_rate_hz;
    if trace.channels.len() == 1 {
        let mut s = restore(ChannelSorter::new(&cfg, fs, 0)?)?;
        let out = s.push_samples(&trace.channels[0])?;
        s.finish();
        return write_sort_outputs(a, &cfg, fs, out, &[s]);
    }
    if resumed.is_some() {
        return Err(invalid("--resume needs a single-channel trace"));
    }
    let ids: Vec<u32> = (0..trace.channels.len() as u32).collect();
    let mut multi = MultiChannelSorter::new(&cfg, fs, &ids)?;
    let refs: Vec<&[f32]> = trace.channels.iter().map(Vec::as_slice).collect();
    let per_channel = multi.push(&refs)?;
    multi.finish();
    let mut all: Vec<SortedSpike> = per_channel.into_iter().flatten().collect();
    all.sort_by_key(|s| (s.timestamp_samples, s.channel_id));
    write_sort_outputs(a, &cfg, fs, all, multi.sorters())
}

fn write_sort_outputs(
    a: &SortArgs,
    cfg: &SorterConfig,
    sample_rate_hz: f64,
    spikes: Vec<SortedSpike>,
    sorters: &[ChannelSorter],
) -> Result<(), Error> {
    write_results(&a.out, &spikes)?;
    let channels: Vec<ChannelSummary> = sorters.iter().map(summarize).collect();
    let total: u64 = channels.iter().map(|c| c.candidates).sum();
    let events_per_input = if total == 0 {
        0.0
    } else {
        channels.iter().map(|c| c.events_per_input * c.candidates as f64).sum::<f64>() / total as f64
    };
    let summary = SortSummary {
        spikes: spikes.len(),
        channels,
        events_per_input,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    println!("{text}");
    if let Some(p) = &a.summary {
        std::fs::write(p, text + "\n")?;
    }
    if let Some(p) = &a.save_state {
        let s = &sorters[0];
        write_json(
            p,
            &SavedState {
                config: cfg.clone(),
                sample_rate_hz,
                channel_id: s.channel_id(),
                layer: s.layer().to_state(),
            },
        )?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<(), Error> {
    let format: ReportFormat = a.format.parse()?;
    let truth = read_truth(&a.truth)?;
    let results = read_results(&a.results)?;
    let mut channels: Vec<u32> = results.iter().map(|s| s.channel_id).collect();
    channels.sort_unstable();
    channels.dedup();
    let channel = match (a.channel, channels.as_slice()) {
        (Some(c), cs) if cs.is_empty() || cs.contains(&c) => c,
        (Some(c), cs) => {
            return Err(invalid(format!("channel {c} not in results (found {cs:?})")));
        }
        (None, []) => 0,
        (None, [c]) => *c,
        (None, cs) => {
            return Err(invalid(format!("results hold channels {cs:?}; pick one with --channel")));
        }
    };
    let mine: Vec<SortedSpike> = results.into_iter().filter(|s| s.channel_id == channel).collect();
    let tol = (a.tolerance_ms * 1e-3 * a.sample_rate_hz).round() as u64;
    let m = match_spikes(&mine, &truth, tol)?;
    if m.tp + m.fn_ + m.fp == 0 {
        return Err(invalid("nothing to score: no truth events and no assigned spikes"));
    }
    print!("{}", report(&scores(&m)?, &m, format)?);
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<(), Error> {
    let cfg = a.config.resolve()?;
    let mut rows = Vec::new();
    for &n in &a.n {
        let mut s = ChannelSorter::new(&cfg, 30_000.0, 0)?;
        rows.push((n, bench_throughput(&mut s, n)?.seconds));
    }
    let mut out = String::from("n,seconds\n");
    for (n, t) in &rows {
        out.push_str(&format!("{n},{t}\n"));
    }
    if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        if let Some((slope, intercept, r2)) = linear_fit(&x, &y) {
            out.push_str(&format!("# slope_s_per_spike={slope} intercept_s={intercept} r2={r2}\n"));
        }
    }
    match &a.out {
        Some(p) => std::fs::write(p, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn power(a: &PowerArgs) -> Result<(), Error> {
    let events = match (a.events_per_input, &a.summary) {
        (Some(e), _) => e,
        (None, Some(p)) => {
            let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            v["events_per_input"].as_f64().ok_or_else(|| Error::Format {
                what: "summary",
                detail: "missing `events_per_input`".into(),
            })?
        }
        (None, None) => return Err(invalid("pass --events-per-input or --summary")),
    };
    let watts = estimate_power(events, a.inputs_per_second, a.channels, a.alpha_pj * 1e-12)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "events_per_input": events,
            "inputs_per_second": a.inputs_per_second,
            "channels": a.channels,
            "alpha_pj": a.alpha_pj,
            "power_w": watts,
            "power_mw": watts * 1e3,
        }))?
    );
    Ok(())
}

fn snapshot(a: &SnapshotArgs) -> Result<(), Error> {
    let state = read_state(&a.state)?;
    let snap = WeightSnapshot::from_state(&state.layer);
    write_json(&with_ext(&a.out, ".json"), &snap)?;
    std::fs::write(with_ext(&a.out, ".csv"), snap.to_csv())?;
    println!(
        "{} active, {} blank",
        snap.active_count(),
        snap.nodes.len() - snap.active_count()
    );
    Ok(())
}
