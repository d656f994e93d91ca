//! Relaxed precision/recall/F1 with a tolerance window and one-to-one matching.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub tolerance_n: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { tolerance_n: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(truth_index, detection_index)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

fn check_sorted(name: &str, xs: &[usize]) -> Result<()> {
    match xs.windows(2).position(|w| w[0] >= w[1]) {
        Some(i) => Err(CoreError::Validation(format!(
            "{name} must be strictly increasing; found {} then {} at position {i}",
            xs[i],
            xs[i + 1]
        ))),
        None => Ok(()),
    }
}

/// Sweeps truths left to right and gives each the leftmost unmatched detection
/// inside its window. On sorted 1-D input this is a maximum matching: a
/// detection left of the current window cannot serve any later truth.
pub fn relaxed_match(detections: &[usize], truths: &[usize], cfg: &MetricsConfig) -> Result<MatchReport> {
    check_sorted("detections", detections)?;
    check_sorted("truths", truths)?;
    let n = cfg.tolerance_n;
    let mut pairs = Vec::new();
    let mut j = 0;
    for &t in truths {
        while j < detections.len() && detections[j] + n < t {
            j += 1;
        }
        if j < detections.len() && detections[j] <= t + n {
            pairs.push((t, detections[j]));
            j += 1;
        }
    }
    let tp = pairs.len();
    Ok(MatchReport {
        tp,
        fp: detections.len() - tp,
        fn_: truths.len() - tp,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn compute_metrics(tp: usize, fp: usize, fn_: usize) -> MetricsReport {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    MetricsReport {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Micro-average: sums counts across records before forming ratios.
pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MatchReport>) -> MetricsReport {
    let (tp, fp, fn_) = reports
        .into_iter()
        .fold((0, 0, 0), |(a, b, c), r| (a + r.tp, b + r.fp, c + r.fn_));
    compute_metrics(tp, fp, fn_)
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Published precision/recall/F1 per architecture.
pub const PUBLISHED_RESULTS: [(&str, f64, f64, f64); 4] = [
    ("CNN", 0.42, 0.53, 0.47),
    ("GRU", 0.46, 0.44, 0.45),
    ("LSTM", 0.42, 0.55, 0.48),
    ("TRANSFORMER", 0.73, 0.61, 0.66),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub arch: String,
    pub precision: f64,
    pub recall: f64,
    pub reported_f1: f64,
    pub computed_f1: f64,
    pub rounded_f1: f64,
    pub consistent: bool,
}

/// Recomputes F1 from each published precision/recall pair.
pub fn published_consistency() -> Vec<ConsistencyRow> {
    PUBLISHED_RESULTS
        .iter()
        .map(|&(arch, p, r, f)| {
            let computed = f1_score(p, r);
            let rounded = round2(computed);
            ConsistencyRow {
                arch: arch.to_string(),
                precision: p,
                recall: r,
                reported_f1: f,
                computed_f1: computed,
                rounded_f1: rounded,
                consistent: (rounded - f).abs() < 1e-9,
            }
        })
        .collect()
}
