//! Ground-truth matching and sorting scores.
//!
//! Output units are paired with ground-truth units so that the total number
//! of matched events is as large as possible. Within a pair, events match
//! one-to-one in time order when they lie within the tolerance. PROVISIONAL
//! outputs never match and never count as false positives.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{GroundTruthEvent, SortedSpike};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputUnitMatch {
    pub output_unit: u32,
    pub truth_unit: Option<u32>,
    pub tp: u64,
    pub fp: u64,
    /// Ground-truth unit sharing the most events with this output unit,
    /// whether or not the two are paired.
    pub dominant_truth: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthUnitMatch {
    pub truth_unit: u32,
    pub output_unit: Option<u32>,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl TruthUnitMatch {
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// All outputs, PROVISIONAL included.
    pub detected: u64,
    /// Outputs carrying a unit label.
    pub assigned: u64,
    /// Output unit → ground-truth unit.
    pub mapping: BTreeMap<u32, u32>,
    pub output_units: Vec<OutputUnitMatch>,
    pub truth_units: Vec<TruthUnitMatch>,
    pub unmatched_truth: Vec<GroundTruthEvent>,
    pub unmatched_outputs: Vec<SortedSpike>,
}

impl MatchResult {
    pub fn truth_unit(&self, unit: u32) -> Option<&TruthUnitMatch> {
        self.truth_units.iter().find(|u| u.truth_unit == unit)
    }

    pub fn output_unit(&self, unit: u32) -> Option<&OutputUnitMatch> {
        self.output_units.iter().find(|u| u.output_unit == unit)
    }

    /// Distinct ground-truth units that dominate at least one output unit of
    /// `min_size` or more events.
    pub fn recovered_units(&self, min_size: u64) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .output_units
            .iter()
            .filter(|o| o.tp + o.fp >= min_size)
            .filter_map(|o| o.dominant_truth)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Truth units whose mapped output reaches `min` in both precision and recall.
    pub fn well_sorted_units(&self, min: f64) -> Vec<u32> {
        self.truth_units
            .iter()
            .filter(|t| {
                let Some(o) = t.output_unit.and_then(|o| self.output_unit(o)) else {
                    return false;
                };
                t.recall() >= min && ratio(o.tp, o.tp + o.fp) >= min
            })
            .map(|t| t.truth_unit)
            .collect()
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Matched index pairs of two sorted timestamp lists, earliest first.
pub fn match_events(truth: &[u64], outputs: &[u64], tolerance: u64) -> Vec<(usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < truth.len() && j < outputs.len() {
        let (t, o) = (truth[i], outputs[j]);
        if t.abs_diff(o) <= tolerance {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if o < t {
            j += 1;
        } else {
            i += 1;
        }
    }
    pairs
}

/// Pairing of rows to columns maximizing the summed `overlap`; each row
/// and column is used at most once, zero-overlap pairs are dropped.
pub fn optimal_mapping(overlap: &[Vec<u64>]) -> Vec<(usize, usize)> {
    let rows = overlap.len();
    let cols = overlap.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let mut m = Matrix::new(n, n, 0i64);
    for (r, row) in overlap.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            m[(r, c)] = v as i64;
        }
    }
    let (_, assign) = kuhn_munkres(&m);
    assign
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| r < rows && c < cols && overlap[r][c] > 0)
        .collect()
}

fn check_sorted<T>(items: &[T], ts: impl Fn(&T) -> u64) -> Result<()> {
    match items.windows(2).position(|w| ts(&w[1]) < ts(&w[0])) {
        Some(i) => Err(Error::Unsorted { index: i + 1 }),
        None => Ok(()),
    }
}

/// Matches `outputs` of one channel against `truth`.
pub fn match_spikes(
    outputs: &[SortedSpike],
    truth: &[GroundTruthEvent],
    tolerance_samples: u64,
) -> Result<MatchResult> {
    check_sorted(outputs, |s| s.timestamp_samples)?;
    check_sorted(truth, |e| e.timestamp_samples)?;

    let mut out_by_unit: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in outputs.iter().enumerate() {
        if let Some(u) = s.unit.id() {
            out_by_unit.entry(u).or_default().push(i);
        }
    }
    let mut truth_by_unit: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, e) in truth.iter().enumerate() {
        truth_by_unit.entry(e.unit).or_default().push(i);
    }
    let out_ids: Vec<u32> = out_by_unit.keys().copied().collect();
    let truth_ids: Vec<u32> = truth_by_unit.keys().copied().collect();
    let out_ts: Vec<Vec<u64>> = out_by_unit
        .values()
        .map(|v| v.iter().map(|&i| outputs[i].timestamp_samples).collect())
        .collect();
    let truth_ts: Vec<Vec<u64>> = truth_by_unit
        .values()
        .map(|v| v.iter().map(|&i| truth[i].timestamp_samples).collect())
        .collect();

    let overlap: Vec<Vec<u64>> = out_ts
        .iter()
        .map(|o| {
            truth_ts
                .iter()
                .map(|t| match_events(t, o, tolerance_samples).len() as u64)
                .collect()
        })
        .collect();
    let pairs = optimal_mapping(&overlap);

    let mut out_hit = vec![false; outputs.len()];
    let mut truth_hit = vec![false; truth.len()];
    let mut mapping = BTreeMap::new();
    for &(o, t) in &pairs {
        mapping.insert(out_ids[o], truth_ids[t]);
        for (ti, oi) in match_events(&truth_ts[t], &out_ts[o], tolerance_samples) {
            truth_hit[truth_by_unit[&truth_ids[t]][ti]] = true;
            out_hit[out_by_unit[&out_ids[o]][oi]] = true;
        }
    }

    let output_units = out_ids
        .iter()
        .zip(&overlap)
        .map(|(&u, row)| {
            let idx = &out_by_unit[&u];
            let tp = idx.iter().filter(|&&i| out_hit[i]).count() as u64;
            let dominant = row
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v > 0)
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(t, _)| truth_ids[t]);
            OutputUnitMatch {
                output_unit: u,
                truth_unit: mapping.get(&u).copied(),
                tp,
                fp: idx.len() as u64 - tp,
                dominant_truth: dominant,
            }
        })
        .collect::<Vec<_>>();
    let reverse: BTreeMap<u32, u32> = mapping.iter().map(|(&o, &t)| (t, o)).collect();
    let truth_units = truth_ids
        .iter()
        .map(|&u| {
            let idx = &truth_by_unit[&u];
            let tp = idx.iter().filter(|&&i| truth_hit[i]).count() as u64;
            TruthUnitMatch {
                truth_unit: u,
                output_unit: reverse.get(&u).copied(),
                tp,
                fn_: idx.len() as u64 - tp,
            }
        })
        .collect::<Vec<_>>();

    let assigned = outputs.iter().filter(|s| !s.unit.is_provisional()).count() as u64;
    let tp = truth_hit.iter().filter(|&&h| h).count() as u64;
    Ok(MatchResult {
        tp,
        fp: assigned - tp,
        fn_: truth.len() as u64 - tp,
        detected: outputs.len() as u64,
        assigned,
        mapping,
        output_units,
        truth_units,
        unmatched_truth: truth
            .iter()
            .zip(&truth_hit)
            .filter(|(_, &h)| !h)
            .map(|(e, _)| *e)
            .collect(),
        unmatched_outputs: outputs
            .iter()
            .zip(&out_hit)
            .filter(|(s, &h)| !h && !s.unit.is_provisional())
            .map(|(s, _)| *s)
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Scores from raw counts.
pub fn scores_from_counts(tp: u64, fn_: u64, fp: u64) -> Result<Scores> {
    if tp + fn_ + fp == 0 {
        return Err(Error::InvalidParameter("all counts are zero".into()));
    }
    Ok(Scores {
        accuracy: ratio(tp, tp + fn_ + fp),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f_score: ratio(2 * tp, 2 * tp + fn_ + fp),
    })
}

pub fn scores(m: &MatchResult) -> Result<Scores> {
    scores_from_counts(m.tp, m.fn_, m.fp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::InvalidParameter(format!(
                "unknown report format `{other}` (expected text, json or csv)"
            ))),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "spike_detected",
    "spike_assigned",
    "tp",
    "fn",
    "fp",
    "accuracy",
    "precision",
    "recall",
    "f_score",
];

#[derive(Serialize)]
struct JsonReport<'a> {
    spike_detected: u64,
    spike_assigned: u64,
    tp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    fp: u64,
    #[serde(flatten)]
    scores: &'a Scores,
    mapping: &'a BTreeMap<u32, u32>,
    truth_units: &'a [TruthUnitMatch],
    output_units: &'a [OutputUnitMatch],
}

/// Renders one table row: detected and assigned counts, tp, fn, fp and the four scores.
pub fn report(s: &Scores, m: &MatchResult, format: ReportFormat) -> Result<String> {
    let values = [
        m.detected.to_string(),
        m.assigned.to_string(),
        m.tp.to_string(),
        m.fn_.to_string(),
        m.fp.to_string(),
        fmt_score(s.accuracy),
        fmt_score(s.precision),
        fmt_score(s.recall),
        fmt_score(s.f_score),
    ];
    Ok(match format {
        ReportFormat::Csv => format!("{}\n{}\n", REPORT_COLUMNS.join(","), values.join(",")),
        ReportFormat::Json => {
            let r = JsonReport {
                spike_detected: m.detected,
                spike_assigned: m.assigned,
                tp: m.tp,
                fn_: m.fn_,
                fp: m.fp,
                scores: s,
                mapping: &m.mapping,
                truth_units: &m.truth_units,
                output_units: &m.output_units,
            };
            serde_json::to_string_pretty(&r)? + "\n"
        }
        ReportFormat::Text => {
            let mut out = String::new();
            for (k, v) in REPORT_COLUMNS.iter().zip(&values) {
                let _ = writeln!(out, "{k:<15} {v}");
            }
            for t in &m.truth_units {
                let mapped = t.output_unit.map_or("-".to_string(), |o| o.to_string());
                let _ = writeln!(
                    out,
                    "truth unit {:<4} -> {:<4} tp {:<6} fn {:<6} recall {}",
                    t.truth_unit,
                    mapped,
                    t.tp,
                    t.fn_,
                    fmt_score(t.recall())
                );
            }
            out
        }
    })
}

fn fmt_score(v: f64) -> String {
    if v == 1.0 {
        "1.0".into()
    } else {
        format!("{v:.4}")
    }
}
