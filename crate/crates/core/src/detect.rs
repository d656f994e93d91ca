//! Peak detection from reconstruction errors.
//!
//! Pipeline: signed error `original - reconstruction`; keep strictly positive
//! errors above `mean + k * std` of the positive errors; DBSCAN on candidate
//! indices (noise discarded) and keep the max-error index per cluster; a second
//! DBSCAN on those representatives and keep the index with the highest original
//! power per cluster. Ties always go to the lower index.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::NormalizedPdp;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    errors: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(errors: Vec<f64>) -> Result<Self> {
        if let Some(i) = errors.iter().position(|e| !e.is_finite()) {
            return Err(CoreError::Validation(format!("non-finite reconstruction error at index {i}")));
        }
        Ok(Self { errors })
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    /// Mean and population standard deviation of the strictly positive errors.
    pub fn positive_stats(&self) -> Option<(f64, f64)> {
        let pos: Vec<f64> = self.errors.iter().copied().filter(|&e| e > 0.0).collect();
        if pos.is_empty() {
            return None;
        }
        let n = pos.len() as f64;
        let mean = pos.iter().sum::<f64>() / n;
        let var = pos.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        Some((mean, var.sqrt()))
    }
}

pub fn reconstruction_error(original: &[f64], recon: &[f64]) -> Result<ErrorSeries> {
    if original.len() != recon.len() {
        return Err(CoreError::Shape(format!(
            "original length {} != reconstruction length {}",
            original.len(),
            recon.len()
        )));
    }
    ErrorSeries::new(original.iter().zip(recon).map(|(o, r)| o - r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub threshold_k: f64,
    pub eps1: f64,
    pub min_pts1: usize,
    pub eps2: f64,
    pub min_pts2: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold_k: 2.0,
            eps1: 3.0,
            min_pts1: 2,
            eps2: 10.0,
            min_pts2: 1,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_k >= 0.0) {
            return Err(CoreError::Param(format!("threshold_k must be non-negative, got {}", self.threshold_k)));
        }
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(CoreError::Param("eps1 and eps2 must be positive".into()));
        }
        if self.eps1 > self.eps2 {
            return Err(CoreError::Param(format!(
                "eps1 ({}) must not exceed eps2 ({})",
                self.eps1, self.eps2
            )));
        }
        if self.min_pts1 < 1 {
            return Err(CoreError::Param("min_pts1 must be at least 1".into()));
        }
        if self.min_pts2 != 1 {
            return Err(CoreError::Param(format!(
                "min_pts2 must be 1 so isolated candidates survive, got {}",
                self.min_pts2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub error: f64,
}

pub fn select_candidates(series: &ErrorSeries, cfg: &DetectionConfig) -> Vec<Candidate> {
    let Some((mean, std)) = series.positive_stats() else {
        return Vec::new();
    };
    let threshold = mean + cfg.threshold_k * std;
    series
        .errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0.0 && e > threshold)
        .map(|(index, &error)| Candidate { index, error })
        .collect()
}

/// Cluster assignment for each input point (`None` = noise).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub labels: Vec<Option<usize>>,
    pub n_clusters: usize,
}

impl Clustering {
    /// Input positions of each cluster, in ascending position order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// DBSCAN on 1-D points.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps`. Clusters are numbered left to right; a border point reachable from
/// two clusters joins the left one. The result does not depend on input order.
pub fn dbscan(points: &[f64], eps: f64, min_pts: usize) -> Result<Clustering> {
    if !(eps > 0.0 && eps.is_finite()) || min_pts < 1 {
        return Err(CoreError::Param(format!(
            "dbscan needs eps > 0 and min_pts >= 1, got eps={eps}, min_pts={min_pts}"
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(CoreError::Param("dbscan points must be finite".into()));
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();

    // Neighborhoods are contiguous ranges of the sorted array.
    let mut ranges = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        while sorted[i] - sorted[lo] > eps {
            lo += 1;
        }
        if hi < i {
            hi = i;
        }
        while hi + 1 < n && sorted[hi + 1] - sorted[i] <= eps {
            hi += 1;
        }
        ranges.push((lo, hi));
    }
    let core: Vec<bool> = ranges.iter().map(|&(l, h)| h - l + 1 >= min_pts).collect();

    let mut sorted_labels: Vec<Option<usize>> = vec![None; n];
    let mut n_clusters = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !core[start] || sorted_labels[start].is_some() {
            continue;
        }
        let c = n_clusters;
        n_clusters += 1;
        sorted_labels[start] = Some(c);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (l, h) = ranges[p];
            for q in l..=h {
                if sorted_labels[q].is_none() {
                    sorted_labels[q] = Some(c);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    let mut labels = vec![None; n];
    for (s, &orig) in order.iter().enumerate() {
        labels[orig] = sorted_labels[s];
    }
    Ok(Clustering { labels, n_clusters })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub error: f64,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn indices(&self) -> Vec<usize> {
        self.peaks.iter().map(|p| p.index).collect()
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }
}

/// Everything computed for one record; feeds the report and trace files.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub series: ErrorSeries,
    pub candidates: Vec<Candidate>,
    pub peaks: PeakSet,
}

/// Picks one member per cluster maximizing `key`; ties go to the lowest index.
fn pick_per_cluster(clustering: &Clustering, indices: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    clustering
        .clusters()
        .into_iter()
        .map(|members| {
            members
                .into_iter()
                .map(|m| indices[m])
                .fold(None::<usize>, |best, idx| match best {
                    Some(b) if key(b) > key(idx) || (key(b) == key(idx) && b < idx) => Some(b),
                    _ => Some(idx),
                })
                .expect("clusters are non-empty")
        })
        .collect()
}

/// Runs both clustering passes on an error series with dB powers for the final pick.
pub fn detect_in_errors(series: &ErrorSeries, powers_db: &[f64], cfg: &DetectionConfig) -> Result<Detection> {
    cfg.validate()?;
    if powers_db.len() != series.len() {
        return Err(CoreError::Shape(format!(
            "power length {} != error length {}",
            powers_db.len(),
            series.len()
        )));
    }
    let candidates = select_candidates(series, cfg);
    let cand_idx: Vec<usize> = candidates.iter().map(|c| c.index).collect();
    let pts: Vec<f64> = cand_idx.iter().map(|&i| i as f64).collect();
    let pass1 = dbscan(&pts, cfg.eps1, cfg.min_pts1)?;
    let errors = series.errors();
    let reps = pick_per_cluster(&pass1, &cand_idx, |i| errors[i]);

    let rep_pts: Vec<f64> = reps.iter().map(|&i| i as f64).collect();
    let pass2 = dbscan(&rep_pts, cfg.eps2, cfg.min_pts2)?;
    let mut finals = pick_per_cluster(&pass2, &reps, |i| powers_db[i]);
    finals.sort_unstable();
    let peaks = finals
        .into_iter()
        .map(|index| Peak {
            index,
            error: errors[index],
            power_db: powers_db[index],
        })
        .collect();
    Ok(Detection {
        series: series.clone(),
        candidates,
        peaks: PeakSet { peaks },
    })
}

/// Detects peaks in a normalized record given its reconstruction.
pub fn detect_peaks(original: &NormalizedPdp, recon: &[f64], cfg: &DetectionConfig) -> Result<Detection> {
    let series = reconstruction_error(&original.values, recon)?;
    detect_in_errors(&series, &original.denormalize(), cfg)
}

pub const DETECTION_HEADER: &str = "id,peak_index,power_db,recon_error";
pub const TRACE_HEADER: &str = "id,index,original,reconstruction,error,candidate_flag,peak_flag";

pub fn detection_csv_rows(out: &mut String, id: u64, peaks: &PeakSet) {
    for p in &peaks.peaks {
        let _ = writeln!(out, "{id},{},{:?},{:?}", p.index, p.power_db, p.error);
    }
}

pub fn trace_csv_rows(out: &mut String, id: u64, original: &[f64], recon: &[f64], det: &Detection) {
    let mut cand = vec![false; original.len()];
    for c in &det.candidates {
        cand[c.index] = true;
    }
    let mut peak = vec![false; original.len()];
    for p in &det.peaks.peaks {
        peak[p.index] = true;
    }
    for i in 0..original.len() {
        let _ = writeln!(
            out,
            "{id},{i},{:?},{:?},{:?},{},{}",
            original[i],
            recon[i],
            det.series.errors()[i],
            u8::from(cand[i]),
            u8::from(peak[i])
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_sign_convention() {
        let s = reconstruction_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(s.errors(), &[1.0, -1.0]);
        assert!(reconstruction_error(&[1.0], &[1.0, 2.0]).is_err());
        assert!(reconstruction_error(&[0.2, 0.3], &[0.2, 0.3]).unwrap().errors().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn candidate_rule() {
        let neg = ErrorSeries::new(vec![-0.1, -0.5, -0.01]).unwrap();
        assert!(select_candidates(&neg, &DetectionConfig::default()).is_empty());

        let mut errs = vec![0.9];
        errs.extend(std::iter::repeat_n(0.01, 99));
        let s = ErrorSeries::new(errs).unwrap();
        // mean+ = 0.0189, std+ = 0.08856, threshold = 0.1960
        let c = select_candidates(&s, &DetectionConfig::default());
        assert_eq!(c.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0]);

        let s = ErrorSeries::new(vec![0.1, 0.3, -0.2, 0.2, 0.5]).unwrap();
        let k0 = DetectionConfig {
            threshold_k: 0.0,
            ..DetectionConfig::default()
        };
        // mean of positives = 0.275
        assert_eq!(select_candidates(&s, &k0).iter().map(|c| c.index).collect::<Vec<_>>(), vec![1, 4]);
    }

    #[test]
    fn dbscan_reference_example() {
        let c = dbscan(&[1.0, 2.0, 3.0, 10.0, 11.0, 50.0], 2.0, 2).unwrap();
        assert_eq!(c.clusters(), vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(c.noise(), vec![5]);
        let empty = dbscan(&[], 1.0, 2).unwrap();
        assert_eq!(empty.n_clusters, 0);
        let single = dbscan(&[0.0, 5.0, 6.0], 1.0, 1).unwrap();
        assert_eq!(single.clusters(), vec![vec![0], vec![1, 2]]);
        assert!(single.noise().is_empty());
        assert!(dbscan(&[1.0], 0.0, 1).is_err());
        assert!(dbscan(&[1.0], 1.0, 0).is_err());
    }

    #[test]
    fn border_point_joins_left_cluster() {
        // 4 is a border point of both core 2 and core 6, which are not connected.
        let c = dbscan(&[0.0, 1.0, 2.0, 4.0, 6.0, 7.0, 8.0], 2.0, 4).unwrap();
        assert_eq!(c.labels[3], c.labels[2]);
        assert_ne!(c.labels[3], c.labels[4]);
    }

    #[test]
    fn pass_two_keeps_highest_power() {
        let mut errors = vec![0.0; 200];
        let mut powers = vec![-100.0; 200];
        for e in errors.iter_mut().take(50) {
            *e = 0.01;
        }
        // Pass 1 keeps 100 and 104; pass 2 merges them and keeps the louder one.
        for (i, e) in [(99, 0.3), (100, 0.4), (101, 0.3), (103, 0.32), (104, 0.36), (105, 0.3)] {
            errors[i] = e;
        }
        powers[100] = -70.0;
        powers[104] = -65.0;
        let cfg = DetectionConfig {
            threshold_k: 0.0,
            eps1: 1.0,
            ..DetectionConfig::default()
        };
        let det = detect_in_errors(&ErrorSeries::new(errors).unwrap(), &powers, &cfg).unwrap();
        assert_eq!(det.peaks.indices(), vec![104]);
        assert_eq!(det.peaks.peaks[0].power_db, -65.0);
    }

    #[test]
    fn perfect_reconstruction_has_no_peaks() {
        let pdp = NormalizedPdp {
            values: (0..50).map(|i| i as f64 / 49.0).collect(),
            scale_min: -100.0,
            scale_max: -50.0,
            source_id: 0,
            variant: 0,
            labels: vec![],
        };
        let det = detect_peaks(&pdp, &pdp.values.clone(), &DetectionConfig::default()).unwrap();
        assert!(det.peaks.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(DetectionConfig::default().validate().is_ok());
        let bad = DetectionConfig {
            eps1: 11.0,
            ..DetectionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = DetectionConfig {
            min_pts2: 2,
            ..DetectionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
