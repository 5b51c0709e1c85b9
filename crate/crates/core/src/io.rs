//! File formats: interleaved float traces with a JSON header line, ground
//! truth CSV, JSON-lines results, saved layer state and weight snapshots.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::network::{LayerState, WeightMap, BLANK_FRACTION};
use crate::signal::{GroundTruthEvent, SortedSpike, SorterConfig};

pub const TRACE_FORMAT: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub sample_rate_hz: f64,
    pub channels: u32,
    pub format: String,
}

/// A multi-channel trace, one sample vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub sample_rate_hz: f64,
    pub channels: Vec<Vec<f32>>,
}

fn header_error(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "trace header",
        detail: detail.into(),
    }
}

fn parse_header(line: &str) -> Result<TraceHeader> {
    let v: Value = serde_json::from_str(line).map_err(|e| header_error(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| header_error("not a JSON object"))?;
    let field = |name: &str| obj.get(name).ok_or_else(|| header_error(format!("missing field `{name}`")));
    let fs = field("sample_rate_hz")?
        .as_f64()
        .filter(|f| *f > 0.0 && f.is_finite())
        .ok_or_else(|| header_error("field `sample_rate_hz` must be a positive number"))?;
    let channels = field("channels")?
        .as_u64()
        .filter(|c| *c >= 1 && *c <= u32::MAX as u64)
        .ok_or_else(|| header_error("field `channels` must be a positive integer"))?;
    let format = field("format")?
        .as_str()
        .ok_or_else(|| header_error("field `format` must be a string"))?;
    if format != TRACE_FORMAT {
        return Err(header_error(format!(
            "field `format` is `{format}`, only `{TRACE_FORMAT}` is supported"
        )));
    }
    Ok(TraceHeader {
        sample_rate_hz: fs,
        channels: channels as u32,
        format: format.into(),
    })
}

pub fn write_trace(path: &Path, trace: &TraceFile) -> Result<()> {
    let c = trace.channels.len();
    if c == 0 {
        return Err(Error::InvalidParameter("trace has no channels".into()));
    }
    let n = trace.channels[0].len();
    if trace.channels.iter().any(|ch| ch.len() != n) {
        return Err(Error::InvalidParameter("channels differ in length".into()));
    }
    let header = TraceHeader {
        sample_rate_hz: trace.sample_rate_hz,
        channels: c as u32,
        format: TRACE_FORMAT.into(),
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for i in 0..n {
        for ch in &trace.channels {
            w.write_all(&ch[i].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(header_error("missing header line"));
    }
    let text = std::str::from_utf8(&line[..line.len() - 1]).map_err(|e| header_error(e.to_string()))?;
    let header = parse_header(text)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let c = header.channels as usize;
    if body.len() % (4 * c) != 0 {
        return Err(Error::Format {
            what: "trace body",
            detail: format!("{} bytes is not a whole number of {c}-channel frames", body.len()),
        });
    }
    let mut channels = vec![Vec::with_capacity(body.len() / (4 * c)); c];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        channels[i % c].push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    Ok(TraceFile {
        sample_rate_hz: header.sample_rate_hz,
        channels,
    })
}

pub fn write_truth(path: &Path, truth: &[GroundTruthEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for e in truth {
        w.serialize(e).map_err(csv_error)?;
    }
    if truth.is_empty() {
        w.write_record(["timestamp_samples", "unit"]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruthEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = r.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["timestamp_samples", "unit"] {
        return Err(Error::Format {
            what: "ground truth",
            detail: format!("header must be `timestamp_samples,unit`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let e: GroundTruthEvent = rec.map_err(csv_error)?;
        if e.unit == 0 {
            return Err(Error::Format {
                what: "ground truth",
                detail: format!("unit 0 at timestamp {}", e.timestamp_samples),
            });
        }
        out.push(e);
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::Io(io);
        }
        unreachable!()
    }
    Error::Format {
        what: "csv",
        detail: e.to_string(),
    }
}

pub fn write_results(path: &Path, spikes: &[SortedSpike]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_results_to(&mut w, spikes)?;
    w.flush()?;
    Ok(())
}

pub fn write_results_to<W: Write>(w: &mut W, spikes: &[SortedSpike]) -> Result<()> {
    for s in spikes {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<SortedSpike>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "results",
            detail: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Everything needed to resume or inspect a sorter after a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedState {
    pub config: SorterConfig,
    pub sample_rate_hz: f64,
    pub channel_id: u32,
    pub layer: LayerState,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Reads a saved state; parse errors report line and column.
pub fn read_state(path: &Path) -> Result<SavedState> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "state file",
        detail: format!("line {} column {}: {e}", e.line(), e.column()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Active,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub node: u32,
    pub status: NodeStatus,
    pub fire_count: u64,
    pub weights: WeightMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub nodes: Vec<NodeSnapshot>,
}

impl WeightSnapshot {
    /// A node is blank while every weight is within 5% of the range above `w_min`.
    pub fn from_state(state: &LayerState) -> Self {
        let p = state.params;
        let limit = p.w_min + BLANK_FRACTION * (p.w_max - p.w_min);
        let nodes = state
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeSnapshot {
                node: i as u32 + 1,
                status: if n.weights.max() < limit {
                    NodeStatus::Blank
                } else {
                    NodeStatus::Active
                },
                fire_count: n.fire_count,
                weights: n.weights.clone(),
            })
            .collect();
        Self { nodes }
    }

    pub fn active_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.status == NodeStatus::Active).count()
    }

    /// Long-form heatmap rows `node,row,col,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,row,col,weight\n");
        for n in &self.nodes {
            for m in 0..n.weights.rows() {
                for c in 0..n.weights.cols() {
                    out.push_str(&format!("{},{},{},{}\n", n.node, m, c, n.weights.get(m, c)));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::PerceptionLayer;
    use crate::signal::{default_config, Unit};

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let t = TraceFile {
            sample_rate_hz: 30_000.0,
            channels: vec![vec![1.0, 2.0, -3.5], vec![0.25, 0.0, 9.0]],
        };
        write_trace(&p, &t).unwrap();
        assert_eq!(read_trace(&p).unwrap(), t);
    }

    #[test]
    fn header_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        fs::write(&p, b"{\"channels\":1,\"format\":\"f32le\"}\n").unwrap();
        let e = read_trace(&p).unwrap_err().to_string();
        assert!(e.contains("sample_rate_hz"), "{e}");
        fs::write(&p, b"{\"sample_rate_hz\":1.0,\"channels\":1,\"format\":\"i16\"}\n").unwrap();
        assert!(read_trace(&p).unwrap_err().to_string().contains("format"));
        fs::write(&p, b"{\"sample_rate_hz\":1.0,\"channels\":2,\"format\":\"f32le\"}\n\0\0\0\0").unwrap();
        assert!(read_trace(&p).is_err());
    }

    #[test]
    fn truth_and_results_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("truth.csv");
        let truth = vec![
            GroundTruthEvent { timestamp_samples: 5, unit: 1 },
            GroundTruthEvent { timestamp_samples: 9, unit: 3 },
        ];
        write_truth(&p, &truth).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("timestamp_samples,unit\n"));
        assert_eq!(read_truth(&p).unwrap(), truth);
        write_truth(&p, &[]).unwrap();
        assert!(read_truth(&p).unwrap().is_empty());

        let r = dir.path().join("r.jsonl");
        let spikes = vec![
            SortedSpike { channel_id: 0, timestamp_samples: 4, unit: Unit::Provisional, potential: 1.5 },
            SortedSpike { channel_id: 0, timestamp_samples: 90, unit: Unit::Node(2), potential: 40.0 },
        ];
        write_results(&r, &spikes).unwrap();
        assert_eq!(read_results(&r).unwrap(), spikes);
    }

    #[test]
    fn state_errors_carry_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let cfg = default_config();
        let s = SavedState {
            config: cfg.clone(),
            sample_rate_hz: 30_000.0,
            channel_id: 0,
            layer: PerceptionLayer::from_config(&cfg, 0).to_state(),
        };
        write_json(&p, &s).unwrap();
        assert_eq!(read_state(&p).unwrap(), s);
        fs::write(&p, "{\n  \"config\": [1,\n").unwrap();
        let e = read_state(&p).unwrap_err().to_string();
        assert!(e.contains("line"), "{e}");
    }

    #[test]
    fn fresh_snapshot_is_blank() {
        let layer = PerceptionLayer::from_config(&default_config(), 0);
        let snap = WeightSnapshot::from_state(&layer.to_state());
        assert_eq!(snap.nodes.len(), 9);
        assert_eq!(snap.active_count(), 0);
        let csv = snap.to_csv();
        assert_eq!(csv.lines().count(), 1 + 9 * 31 * 64);
    }
}
