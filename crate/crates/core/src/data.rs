//! PDP records and the data pipeline: CSV I/O, min-max normalization,
//! alternating split, roll/noise augmentation and chunking.
//!
//! File formats (UTF-8, comma-separated, `.` decimal point):
//!
//! * PDP CSV: header `id,index,power_db`, one row per sample, indices
//!   `0..L-1` contiguous per id.
//! * Label CSV: header `id,peak_index`, one row per labeled peak.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::seed::{derive_seed, rng};

pub const PDP_HEADER: &str = "id,index,power_db";
pub const LABEL_HEADER: &str = "id,peak_index";

/// Reference sequence length of the measured profiles.
pub const REFERENCE_LENGTH: usize = 820;

/// Chunk lengths explored for the recurrent models.
pub const STANDARD_CHUNK_LENGTHS: [usize; 4] = [410, 205, 85, 41];

/// One power delay profile with its labeled peak indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PdpRecord {
    id: u64,
    powers: Vec<f64>,
    labels: Vec<usize>,
}

impl PdpRecord {
    pub fn new(id: u64, powers: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if powers.is_empty() {
            return Err(CoreError::Validation(format!("record {id}: empty power sequence")));
        }
        if let Some(i) = powers.iter().position(|p| !p.is_finite()) {
            return Err(CoreError::Validation(format!("record {id}: non-finite power at index {i}")));
        }
        validate_labels(id, &labels, powers.len())?;
        Ok(Self { id, powers, labels })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }
}

fn validate_labels(id: u64, labels: &[usize], len: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= len) {
        return Err(CoreError::Validation(format!(
            "record {id}: label index {bad} out of range [0, {len})"
        )));
    }
    if labels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::Validation(format!(
            "record {id}: labels must be strictly increasing"
        )));
    }
    Ok(())
}

/// Ordered collection of records sharing one sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct PdpSet {
    records: Vec<PdpRecord>,
    length: usize,
}

impl PdpSet {
    pub fn new(records: Vec<PdpRecord>) -> Result<Self> {
        let length = records.first().map_or(0, PdpRecord::len);
        if let Some(r) = records.iter().find(|r| r.len() != length) {
            return Err(CoreError::Schema(format!(
                "record {} has length {}, expected {length}",
                r.id,
                r.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(r) = records.iter().find(|r| !seen.insert(r.id)) {
            return Err(CoreError::Schema(format!("duplicate record id {}", r.id)));
        }
        Ok(Self { records, length })
    }

    pub fn records(&self) -> &[PdpRecord] {
        &self.records
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&PdpRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn to_pdp_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * self.length * 24);
        out.push_str(PDP_HEADER);
        out.push('\n');
        for r in &self.records {
            for (i, p) in r.powers.iter().enumerate() {
                let _ = writeln!(out, "{},{i},{p}", r.id);
            }
        }
        out
    }

    pub fn to_label_csv(&self) -> String {
        let mut out = String::from(LABEL_HEADER);
        out.push('\n');
        for r in &self.records {
            for l in &r.labels {
                let _ = writeln!(out, "{},{l}", r.id);
            }
        }
        out
    }

    pub fn write_csv(&self, pdp_path: &Path, label_path: &Path) -> Result<()> {
        fs::write(pdp_path, self.to_pdp_csv()).map_err(|e| CoreError::io(pdp_path, e))?;
        fs::write(label_path, self.to_label_csv()).map_err(|e| CoreError::io(label_path, e))
    }
}

fn parse_rows<'a>(path: &Path, text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        other => {
            return Err(CoreError::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header `{header}`, found `{}`", other.map_or("", |(_, l)| l)),
            })
        }
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (line, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(CoreError::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        rows.push((line, fields));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CoreError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {name} `{v}`"),
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CoreError::io(path, e))
}

/// Loads a PDP CSV and its companion label CSV.
pub fn load_pdp_csv(pdp_path: &Path, label_path: &Path) -> Result<PdpSet> {
    let text = read_text(pdp_path)?;
    let mut order: Vec<u64> = Vec::new();
    let mut samples: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for (line, f) in parse_rows(pdp_path, &text, PDP_HEADER)? {
        let id: u64 = parse_field(pdp_path, line, "id", f[0])?;
        let index: usize = parse_field(pdp_path, line, "index", f[1])?;
        let power: f64 = parse_field(pdp_path, line, "power_db", f[2])?;
        if !power.is_finite() {
            return Err(CoreError::Parse {
                path: pdp_path.to_path_buf(),
                line,
                msg: format!("non-finite power `{}`", f[2]),
            });
        }
        samples
            .entry(id)
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((index, power));
    }

    let label_text = read_text(label_path)?;
    let mut labels: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (line, f) in parse_rows(label_path, &label_text, LABEL_HEADER)? {
        let id: u64 = parse_field(label_path, line, "id", f[0])?;
        let idx: usize = parse_field(label_path, line, "peak_index", f[1])?;
        if !samples.contains_key(&id) {
            return Err(CoreError::Validation(format!(
                "{}: line {line}: label for unknown record id {id}",
                label_path.display()
            )));
        }
        labels.entry(id).or_default().push(idx);
    }

    let mut records = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = samples.remove(&id).unwrap_or_default();
        rows.sort_by_key(|&(i, _)| i);
        if rows.iter().enumerate().any(|(k, &(i, _))| k != i) {
            return Err(CoreError::Schema(format!(
                "record {id}: indices are not contiguous from 0"
            )));
        }
        let powers = rows.into_iter().map(|(_, p)| p).collect();
        let mut l = labels.remove(&id).unwrap_or_default();
        l.sort_unstable();
        records.push(PdpRecord::new(id, powers, l)?);
    }
    PdpSet::new(records)
}

/// Binary presence vector for a label index set.
pub fn labels_to_binary(labels: &[usize], len: usize) -> Result<Vec<u8>> {
    validate_labels(0, labels, len)?;
    let mut out = vec![0u8; len];
    for &l in labels {
        out[l] = 1;
    }
    Ok(out)
}

pub fn binary_to_labels(flags: &[u8]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f != 0)
        .map(|(i, _)| i)
        .collect()
}

/// A min-max normalized sequence with what is needed to map it back to dB.
///
/// `variant` is 0 for the record itself and counts augmented copies from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPdp {
    pub values: Vec<f64>,
    pub scale_min: f64,
    pub scale_max: f64,
    pub source_id: u64,
    pub variant: u32,
    pub labels: Vec<usize>,
}

impl NormalizedPdp {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn denormalize(&self) -> Vec<f64> {
        let span = self.scale_max - self.scale_min;
        self.values.iter().map(|v| v * span + self.scale_min).collect()
    }
}

pub fn normalize_minmax(record: &PdpRecord) -> Result<NormalizedPdp> {
    let min = record.powers.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = record.powers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(CoreError::Degenerate(format!(
            "record {} is constant ({min} dB)",
            record.id
        )));
    }
    let span = max - min;
    Ok(NormalizedPdp {
        values: record.powers.iter().map(|p| (p - min) / span).collect(),
        scale_min: min,
        scale_max: max,
        source_id: record.id,
        variant: 0,
        labels: record.labels.clone(),
    })
}

/// Even positions go to train, odd positions to test.
pub fn split_alternating(set: &PdpSet) -> Result<(PdpSet, PdpSet)> {
    if set.len() < 2 {
        return Err(CoreError::InsufficientData(format!(
            "alternating split needs at least 2 records, got {}",
            set.len()
        )));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (pos, r) in set.records.iter().enumerate() {
        if pos % 2 == 0 {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((PdpSet::new(train)?, PdpSet::new(test)?))
}

/// Circularly rotates values and labels by `shift` samples (positive = later).
pub fn augment_roll(pdp: &NormalizedPdp, shift: i64) -> Result<NormalizedPdp> {
    let len = pdp.values.len() as i64;
    if shift.abs() > len {
        return Err(CoreError::Param(format!("|shift| = {} exceeds length {len}", shift.abs())));
    }
    let s = shift.rem_euclid(len) as usize;
    let n = pdp.values.len();
    let mut values = vec![0.0; n];
    for (i, v) in pdp.values.iter().enumerate() {
        values[(i + s) % n] = *v;
    }
    let mut labels: Vec<usize> = pdp.labels.iter().map(|l| (l + s) % n).collect();
    labels.sort_unstable();
    Ok(NormalizedPdp {
        values,
        labels,
        ..pdp.clone()
    })
}

/// `n` draws from N(0, sigma^2) using the seeded generator.
pub fn gaussian_noise(n: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CoreError::Param(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| CoreError::Param(e.to_string()))?;
    let mut r = rng(seed);
    Ok((0..n).map(|_| normal.sample(&mut r)).collect())
}

/// Adds seeded Gaussian noise and clamps to `[0, 1]`. Labels are unchanged.
pub fn augment_noise(pdp: &NormalizedPdp, sigma: f64, seed: u64) -> Result<NormalizedPdp> {
    let noise = gaussian_noise(pdp.values.len(), sigma, seed)?;
    let values = pdp
        .values
        .iter()
        .zip(noise)
        .map(|(v, g)| (v + g).clamp(0.0, 1.0))
        .collect();
    Ok(NormalizedPdp {
        values,
        ..pdp.clone()
    })
}

/// Roll + noise augmentation recipe applied to each training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub variants_per_record: usize,
    /// Shifts are drawn uniformly from `[-f * L, f * L]`.
    pub max_shift_fraction: f64,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            variants_per_record: 10,
            max_shift_fraction: 0.25,
            sigmas: vec![0.005, 0.01, 0.02],
            seed: 0,
        }
    }
}

/// Returns every original followed by its variants, in input order.
pub fn augment_set(records: &[NormalizedPdp], cfg: &AugmentConfig) -> Result<Vec<NormalizedPdp>> {
    if cfg.variants_per_record > 0 && cfg.sigmas.is_empty() {
        return Err(CoreError::Param("augmentation needs at least one noise sigma".into()));
    }
    if !(0.0..=1.0).contains(&cfg.max_shift_fraction) {
        return Err(CoreError::Param(format!(
            "max shift fraction must lie in [0, 1], got {}",
            cfg.max_shift_fraction
        )));
    }
    let mut out = Vec::with_capacity(records.len() * (cfg.variants_per_record + 1));
    for rec in records {
        out.push(rec.clone());
        let max_shift = (cfg.max_shift_fraction * rec.len() as f64).floor() as i64;
        for v in 1..=cfg.variants_per_record as u64 {
            let seed = derive_seed(cfg.seed, &[rec.source_id, v]);
            let mut r = rng(seed);
            let shift = r.gen_range(-max_shift..=max_shift);
            let sigma = cfg.sigmas[r.gen_range(0..cfg.sigmas.len())];
            let rolled = augment_roll(rec, shift)?;
            let mut noisy = augment_noise(&rolled, sigma, r.gen())?;
            noisy.variant = v as u32;
            out.push(noisy);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_length: usize,
}

/// Start offsets of the chunks covering a sequence.
///
/// Chunks are consecutive and non-overlapping; when the length is not a
/// multiple of the chunk length the final chunk is the last `chunk_length`
/// samples, overlapping its predecessor. On reassembly the later chunk wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub length: usize,
    pub chunk_length: usize,
    pub offsets: Vec<usize>,
}

impl ChunkPlan {
    pub fn new(length: usize, cfg: ChunkConfig) -> Result<Self> {
        let c = cfg.chunk_length;
        if c == 0 || c > length {
            return Err(CoreError::Param(format!(
                "chunk length {c} must lie in [1, {length}]"
            )));
        }
        let mut offsets: Vec<usize> = (0..length / c).map(|i| i * c).collect();
        if !length.is_multiple_of(c) {
            offsets.push(length - c);
        }
        Ok(Self {
            length,
            chunk_length: c,
            offsets,
        })
    }

    pub fn n_chunks(&self) -> usize {
        self.offsets.len()
    }

    /// Chunks laid out back to back: `[n_chunks * chunk_length]`.
    pub fn extract(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.length {
            return Err(CoreError::Shape(format!(
                "sequence length {} does not match chunk plan length {}",
                values.len(),
                self.length
            )));
        }
        let mut out = Vec::with_capacity(self.n_chunks() * self.chunk_length);
        for &o in &self.offsets {
            out.extend_from_slice(&values[o..o + self.chunk_length]);
        }
        Ok(out)
    }

    /// Inverse of [`ChunkPlan::extract`].
    pub fn reassemble(&self, flat: &[f64]) -> Result<Vec<f64>> {
        if flat.len() != self.n_chunks() * self.chunk_length {
            return Err(CoreError::Shape(format!(
                "expected {} chunked values, got {}",
                self.n_chunks() * self.chunk_length,
                flat.len()
            )));
        }
        let mut out = vec![0.0; self.length];
        for (chunk, &o) in flat.chunks_exact(self.chunk_length).zip(&self.offsets) {
            out[o..o + self.chunk_length].copy_from_slice(chunk);
        }
        Ok(out)
    }
}

/// Splits `values` into chunks and returns them with the reassembly plan.
pub fn chunk_sequence(values: &[f64], cfg: ChunkConfig) -> Result<(Vec<Vec<f64>>, ChunkPlan)> {
    let plan = ChunkPlan::new(values.len(), cfg)?;
    let flat = plan.extract(values)?;
    let chunks = flat.chunks_exact(plan.chunk_length).map(<[f64]>::to_vec).collect();
    Ok((chunks, plan))
}

/// Reassembles chunks produced by [`chunk_sequence`].
pub fn reassemble(chunks: &[Vec<f64>], plan: &ChunkPlan) -> Result<Vec<f64>> {
    if chunks.iter().any(|c| c.len() != plan.chunk_length) {
        return Err(CoreError::Shape("chunk has wrong length".into()));
    }
    plan.reassemble(&chunks.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(values: Vec<f64>, labels: Vec<usize>) -> NormalizedPdp {
        NormalizedPdp {
            values,
            scale_min: 0.0,
            scale_max: 1.0,
            source_id: 0,
            variant: 0,
            labels,
        }
    }

    #[test]
    fn record_validation() {
        assert!(PdpRecord::new(0, vec![], vec![]).is_err());
        assert!(PdpRecord::new(0, vec![1.0, f64::NAN], vec![]).is_err());
        assert!(PdpRecord::new(0, vec![1.0, 2.0], vec![2]).is_err());
        assert!(PdpRecord::new(0, vec![1.0, 2.0, 3.0], vec![1, 1]).is_err());
        assert!(PdpRecord::new(0, vec![1.0, 2.0, 3.0], vec![0, 2]).is_ok());
    }

    #[test]
    fn set_rejects_mixed_lengths_and_duplicate_ids() {
        let a = PdpRecord::new(0, vec![0.0; 4], vec![]).unwrap();
        let b = PdpRecord::new(1, vec![0.0; 5], vec![]).unwrap();
        assert!(matches!(PdpSet::new(vec![a.clone(), b]), Err(CoreError::Schema(_))));
        assert!(matches!(PdpSet::new(vec![a.clone(), a]), Err(CoreError::Schema(_))));
    }

    #[test]
    fn normalize_endpoints_and_roundtrip() {
        let r = PdpRecord::new(3, vec![-100.0, -90.0, -80.0], vec![]).unwrap();
        let n = normalize_minmax(&r).unwrap();
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
        for (a, b) in n.denormalize().iter().zip(r.powers()) {
            assert!((a - b).abs() < 1e-9);
        }
        let flat = PdpRecord::new(0, vec![-90.0, -90.0], vec![]).unwrap();
        assert!(matches!(normalize_minmax(&flat), Err(CoreError::Degenerate(_))));
    }

    #[test]
    fn alternating_split_is_positional() {
        let mk = |ids: &[u64]| {
            PdpSet::new(ids.iter().map(|&i| PdpRecord::new(i, vec![i as f64, 0.0], vec![]).unwrap()).collect())
                .unwrap()
        };
        let (tr, te) = split_alternating(&mk(&[0, 1, 2, 3, 4, 5])).unwrap();
        let ids = |s: &PdpSet| s.records().iter().map(PdpRecord::id).collect::<Vec<_>>();
        assert_eq!(ids(&tr), vec![0, 2, 4]);
        assert_eq!(ids(&te), vec![1, 3, 5]);
        let (tr, te) = split_alternating(&mk(&[7, 9])).unwrap();
        assert_eq!((ids(&tr), ids(&te)), (vec![7], vec![9]));
        assert!(matches!(split_alternating(&mk(&[1])), Err(CoreError::InsufficientData(_))));
        let (tr, te) = split_alternating(&mk(&(0..80).collect::<Vec<_>>())).unwrap();
        assert_eq!((tr.len(), te.len()), (40, 40));
    }

    #[test]
    fn roll_by_one_and_identities() {
        let p = norm(vec![0.1, 0.2, 0.3, 0.4], vec![1]);
        let r = augment_roll(&p, 1).unwrap();
        assert_eq!(r.values, vec![0.4, 0.1, 0.2, 0.3]);
        assert_eq!(r.labels, vec![2]);
        assert_eq!(augment_roll(&p, 0).unwrap(), p);
        assert_eq!(augment_roll(&p, 4).unwrap(), p);
        assert_eq!(augment_roll(&p, -1).unwrap().labels, vec![0]);
        assert!(augment_roll(&p, 5).is_err());
    }

    #[test]
    fn noise_identity_determinism_and_errors() {
        let p = norm(vec![0.1, 0.5, 0.9, 1.0], vec![2]);
        assert_eq!(augment_noise(&p, 0.0, 1).unwrap(), p);
        let a = augment_noise(&p, 0.1, 42).unwrap();
        assert_eq!(a, augment_noise(&p, 0.1, 42).unwrap());
        assert_ne!(a, augment_noise(&p, 0.1, 43).unwrap());
        assert!(a.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.labels, p.labels);
        assert!(matches!(augment_noise(&p, -0.1, 1), Err(CoreError::Param(_))));
    }

    #[test]
    fn chunk_offsets() {
        let plan = ChunkPlan::new(820, ChunkConfig { chunk_length: 205 }).unwrap();
        assert_eq!(plan.offsets, vec![0, 205, 410, 615]);
        let plan = ChunkPlan::new(820, ChunkConfig { chunk_length: 85 }).unwrap();
        assert_eq!(plan.n_chunks(), 10);
        assert_eq!(plan.offsets[8], 680);
        assert_eq!(plan.offsets[9], 735);
        assert!(ChunkPlan::new(40, ChunkConfig { chunk_length: 41 }).is_err());
    }

    #[test]
    fn binary_label_conversion() {
        let b = labels_to_binary(&[1, 3], 5).unwrap();
        assert_eq!(b, vec![0, 1, 0, 1, 0]);
        assert_eq!(binary_to_labels(&b), vec![1, 3]);
        assert!(labels_to_binary(&[5], 5).is_err());
    }

    #[test]
    fn augment_set_layout() {
        let recs: Vec<NormalizedPdp> = (0..3)
            .map(|i| NormalizedPdp {
                source_id: i,
                ..norm((0..40).map(|v| v as f64 / 40.0).collect(), vec![5])
            })
            .collect();
        let cfg = AugmentConfig {
            seed: 5,
            ..AugmentConfig::default()
        };
        let out = augment_set(&recs, &cfg).unwrap();
        assert_eq!(out.len(), 33);
        assert_eq!(out[0], recs[0]);
        assert_eq!(out[11], recs[1]);
        assert!(out[1..11].iter().all(|v| v.source_id == 0 && v.variant > 0));
        assert_eq!(out, augment_set(&recs, &cfg).unwrap());
    }
}
