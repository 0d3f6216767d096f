//! Report-to-report comparison.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use super::ReportDocument;
use crate::stats::{empirical_joint, tv4};

#[derive(Debug, Error)]
pub enum CompareError {
    /// The reports are not over the same alphabets or state space.
    #[error("MismatchError: {0}")]
    Mismatch(String),
    /// One report has a setting pair with no kept rounds.
    #[error("{0}")]
    Stats(#[from] crate::stats::StatsError),
}

impl CompareError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CompareError::Mismatch(_) => 4,
            CompareError::Stats(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDiff {
    pub setting_a: usize,
    pub setting_b: usize,
    pub tv: f64,
    pub e_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub tolerance: f64,
    /// Per setting pair; empty for causal-model reports.
    pub pairs: Vec<PairDiff>,
    /// TV over the whole state space, for causal-model reports.
    pub joint_tv: Option<f64>,
    pub max_tv: f64,
    pub max_e_delta: f64,
    pub chsh_delta: Option<f64>,
    pub keep_rate_delta: f64,
    pub within_tolerance: bool,
}

fn angles(r: &ReportDocument) -> (Option<&Value>, Option<&Value>) {
    (r.extras.get("alice_angles_deg"), r.extras.get("bob_angles_deg"))
}

fn flatten(v: &Value, out: &mut Vec<u64>, shape: &mut Vec<usize>, depth: usize) -> Result<(), CompareError> {
    match v {
        Value::Array(items) => {
            if shape.len() == depth {
                shape.push(items.len());
            } else if shape[depth] != items.len() {
                return Err(CompareError::Mismatch("ragged counts array".into()));
            }
            for item in items {
                flatten(item, out, shape, depth + 1)?;
            }
            Ok(())
        }
        Value::Number(n) => {
            out.push(n.as_u64().ok_or_else(|| CompareError::Mismatch("non-integer count".into()))?);
            Ok(())
        }
        _ => Err(CompareError::Mismatch("counts must be a nested integer array".into())),
    }
}

fn freqs(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
}

/// Per-pair TV and correlation deltas between two reports over the same
/// alphabets. `within_tolerance` is false if any TV or E delta exceeds
/// `tolerance`.
pub fn compare(a: &ReportDocument, b: &ReportDocument, tolerance: f64) -> Result<CompareSummary, CompareError> {
    if angles(a) != angles(b) {
        return Err(CompareError::Mismatch(format!(
            "measurement alphabets differ: {:?} vs {:?}",
            angles(a),
            angles(b)
        )));
    }
    let chsh_delta = match (a.chsh_s, b.chsh_s) {
        (Some(x), Some(y)) => Some((x - y).abs()),
        _ => None,
    };
    let keep_rate_delta = (a.keep_rate - b.keep_rate).abs();

    match (a.counts_table(), b.counts_table()) {
        (Some(ta), Some(tb)) => {
            if ta.shape() != tb.shape() {
                return Err(CompareError::Mismatch(format!(
                    "setting alphabets differ: {:?} vs {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
            let (ja, jb) = (empirical_joint(&ta)?, empirical_joint(&tb)?);
            let (n_a, n_b) = ta.shape();
            let mut pairs = Vec::with_capacity(n_a * n_b);
            for sa in 0..n_a {
                for sb in 0..n_b {
                    let (pa, pb) = (ja.row(sa, sb).expect("in range"), jb.row(sa, sb).expect("in range"));
                    let e = |p: &[f64; 4]| p[0] - p[1] - p[2] + p[3];
                    pairs.push(PairDiff {
                        setting_a: sa,
                        setting_b: sb,
                        tv: tv4(pa, pb),
                        e_delta: (e(pa) - e(pb)).abs(),
                    });
                }
            }
            let max_tv = pairs.iter().map(|p| p.tv).fold(0.0, f64::max);
            let max_e_delta = pairs.iter().map(|p| p.e_delta).fold(0.0, f64::max);
            Ok(CompareSummary {
                tolerance,
                pairs,
                joint_tv: None,
                max_tv,
                max_e_delta,
                chsh_delta,
                keep_rate_delta,
                within_tolerance: max_tv <= tolerance && max_e_delta <= tolerance,
            })
        }
        (None, None) => {
            let (mut ca, mut sa, mut cb, mut sb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            flatten(&a.counts, &mut ca, &mut sa, 0)?;
            flatten(&b.counts, &mut cb, &mut sb, 0)?;
            if sa != sb || a.extras.get("nodes") != b.extras.get("nodes") {
                return Err(CompareError::Mismatch(format!("state spaces differ: {sa:?} vs {sb:?}")));
            }
            let tv = crate::causal::tv_distance(&freqs(&ca), &freqs(&cb));
            Ok(CompareSummary {
                tolerance,
                pairs: Vec::new(),
                joint_tv: Some(tv),
                max_tv: tv,
                max_e_delta: 0.0,
                chsh_delta,
                keep_rate_delta,
                within_tolerance: tv <= tolerance,
            })
        }
        _ => Err(CompareError::Mismatch("one report is two-party, the other is not".into())),
    }
}
