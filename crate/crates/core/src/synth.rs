//! Labeled synthetic power delay profiles.
//!
//! A profile sits at the noise floor until a first arrival, then decays
//! linearly in dB. Peaks are added on top of that baseline: the first one at
//! the first arrival (line of sight), the rest after it with a minimum
//! separation. Each peak raises its apex by the drawn power and `w` samples on
//! either side (`w` uniform in `1..=3`) by a linearly tapered fraction of it,
//! so the apex is a strict local maximum of the noiseless profile. Gaussian
//! noise in dB is added everywhere.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{PdpRecord, PdpSet, REFERENCE_LENGTH};
use crate::error::{CoreError, Result};
use crate::seed::rng;

/// Widest peak shoulder in samples on each side of the apex.
pub const MAX_PEAK_HALF_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub length: usize,
    pub n_peaks_min: usize,
    pub n_peaks_max: usize,
    pub decay_db_per_sample: f64,
    pub noise_floor_db: f64,
    /// Power of the first arrival above which the profile decays.
    pub first_arrival_db: f64,
    /// Inclusive index range for the first arrival.
    pub first_arrival_min: usize,
    pub first_arrival_max: usize,
    pub peak_power_min_db: f64,
    pub peak_power_max_db: f64,
    pub noise_sigma_db: f64,
    pub min_peak_separation: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            length: REFERENCE_LENGTH,
            n_peaks_min: 3,
            n_peaks_max: 8,
            decay_db_per_sample: 0.05,
            noise_floor_db: -110.0,
            first_arrival_db: -65.0,
            first_arrival_min: 20,
            first_arrival_max: 80,
            peak_power_min_db: 8.0,
            peak_power_max_db: 25.0,
            noise_sigma_db: 1.5,
            min_peak_separation: 10,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Param(m));
        if self.length < 2 {
            return fail(format!("length must be at least 2, got {}", self.length));
        }
        if self.n_peaks_min < 1 || self.n_peaks_max < self.n_peaks_min {
            return fail(format!(
                "peak count range [{}, {}] must satisfy 1 <= min <= max",
                self.n_peaks_min, self.n_peaks_max
            ));
        }
        if !(self.decay_db_per_sample > 0.0 && self.decay_db_per_sample.is_finite()) {
            return fail(format!("decay must be positive, got {}", self.decay_db_per_sample));
        }
        if !(self.noise_sigma_db >= 0.0 && self.noise_sigma_db.is_finite()) {
            return fail(format!("noise sigma must be non-negative, got {}", self.noise_sigma_db));
        }
        if !(self.peak_power_min_db <= self.peak_power_max_db && self.peak_power_min_db.is_finite()) {
            return fail("peak power range is empty".into());
        }
        if self.peak_power_min_db <= 3.0 * self.noise_sigma_db {
            return fail(format!(
                "weakest peak ({} dB) must exceed the 3-sigma noise band ({} dB)",
                self.peak_power_min_db,
                3.0 * self.noise_sigma_db
            ));
        }
        if self.min_peak_separation < 1 {
            return fail("minimum peak separation must be at least 1".into());
        }
        if self.first_arrival_min > self.first_arrival_max || self.first_arrival_max >= self.length {
            return fail(format!(
                "first arrival range [{}, {}] must lie inside the sequence",
                self.first_arrival_min, self.first_arrival_max
            ));
        }
        if !(self.noise_floor_db.is_finite() && self.first_arrival_db > self.noise_floor_db) {
            return fail("first arrival must be above the noise floor".into());
        }
        Ok(())
    }

    /// Noiseless baseline (floor, then linear-in-dB decay from `arrival`).
    pub fn baseline(&self, arrival: usize) -> Vec<f64> {
        (0..self.length)
            .map(|i| {
                if i < arrival {
                    self.noise_floor_db
                } else {
                    let decayed = self.first_arrival_db - self.decay_db_per_sample * (i - arrival) as f64;
                    decayed.max(self.noise_floor_db)
                }
            })
            .collect()
    }
}

/// Noiseless construction plus the realized noisy record.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthProfile {
    pub record: PdpRecord,
    pub clean_db: Vec<f64>,
    pub first_arrival: usize,
}

/// Generates one record; `record_seed` fully determines the result.
pub fn generate_profile(params: &SynthParams, id: u64, record_seed: u64) -> Result<SynthProfile> {
    params.validate()?;
    let mut r = rng(record_seed);
    let len = params.length;
    let arrival = r.gen_range(params.first_arrival_min..=params.first_arrival_max);
    let k = r.gen_range(params.n_peaks_min..=params.n_peaks_max);

    let sep = params.min_peak_separation;
    let last = len.saturating_sub(1 + MAX_PEAK_HALF_WIDTH);
    let lo = arrival + sep;
    if k > 1 && (lo > last || (last - lo) / sep + 1 < k - 1) {
        return Err(CoreError::Placement(format!(
            "{k} peaks with separation {sep} do not fit after arrival {arrival} in length {len}"
        )));
    }
    let mut apexes = vec![arrival];
    const MAX_TRIES: usize = 10_000;
    let mut tries = 0;
    while apexes.len() < k {
        tries += 1;
        if tries > MAX_TRIES {
            return Err(CoreError::Placement(format!(
                "gave up placing {k} peaks with separation {sep} in length {len}"
            )));
        }
        let c = r.gen_range(lo..=last);
        if apexes.iter().all(|&a| a.abs_diff(c) >= sep) {
            apexes.push(c);
        }
    }
    apexes.sort_unstable();

    let mut clean = params.baseline(arrival);
    for &apex in &apexes {
        let power = r.gen_range(params.peak_power_min_db..=params.peak_power_max_db);
        // The apex plus 1 to 3 samples on each side, tapering linearly.
        let half = r.gen_range(1..=MAX_PEAK_HALF_WIDTH);
        clean[apex] += power;
        for d in 1..=half {
            let raise = power * (1.0 - d as f64 / (half + 1) as f64);
            if apex >= d {
                clean[apex - d] += raise;
            }
            if apex + d < len {
                clean[apex + d] += raise;
            }
        }
    }

    let powers = if params.noise_sigma_db > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma_db).map_err(|e| CoreError::Param(e.to_string()))?;
        clean.iter().map(|c| c + normal.sample(&mut r)).collect()
    } else {
        clean.clone()
    };
    Ok(SynthProfile {
        record: PdpRecord::new(id, powers, apexes)?,
        clean_db: clean,
        first_arrival: arrival,
    })
}

pub fn generate_pdp(params: &SynthParams, record_seed: u64) -> Result<PdpRecord> {
    generate_profile(params, 0, record_seed).map(|p| p.record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetSpec {
    pub n_records: usize,
    pub params: SynthParams,
}

impl Default for SynthDatasetSpec {
    fn default() -> Self {
        Self {
            n_records: 80,
            params: SynthParams::default(),
        }
    }
}

impl SynthDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_records < 1 {
            return Err(CoreError::Param("n_records must be positive".into()));
        }
        self.params.validate()
    }

    /// Flat `key=value` text, one field per line.
    pub fn to_kv(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("n_records", self.n_records.to_string());
        kv("length", p.length.to_string());
        kv("n_peaks_min", p.n_peaks_min.to_string());
        kv("n_peaks_max", p.n_peaks_max.to_string());
        kv("decay_db_per_sample", format!("{:?}", p.decay_db_per_sample));
        kv("noise_floor_db", format!("{:?}", p.noise_floor_db));
        kv("first_arrival_db", format!("{:?}", p.first_arrival_db));
        kv("first_arrival_min", p.first_arrival_min.to_string());
        kv("first_arrival_max", p.first_arrival_max.to_string());
        kv("peak_power_min_db", format!("{:?}", p.peak_power_min_db));
        kv("peak_power_max_db", format!("{:?}", p.peak_power_max_db));
        kv("noise_sigma_db", format!("{:?}", p.noise_sigma_db));
        kv("min_peak_separation", p.min_peak_separation.to_string());
        kv("seed", p.seed.to_string());
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = SynthDatasetSpec::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key=value", n + 1)))?;
            let bad = || CoreError::Config(format!("line {}: invalid value for {k}: `{v}`", n + 1));
            let p = &mut spec.params;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "n_records" => spec.n_records = v.parse().map_err(|_| bad())?,
                "length" => p.length = v.parse().map_err(|_| bad())?,
                "n_peaks_min" => p.n_peaks_min = v.parse().map_err(|_| bad())?,
                "n_peaks_max" => p.n_peaks_max = v.parse().map_err(|_| bad())?,
                "decay_db_per_sample" => p.decay_db_per_sample = v.parse().map_err(|_| bad())?,
                "noise_floor_db" => p.noise_floor_db = v.parse().map_err(|_| bad())?,
                "first_arrival_db" => p.first_arrival_db = v.parse().map_err(|_| bad())?,
                "first_arrival_min" => p.first_arrival_min = v.parse().map_err(|_| bad())?,
                "first_arrival_max" => p.first_arrival_max = v.parse().map_err(|_| bad())?,
                "peak_power_min_db" => p.peak_power_min_db = v.parse().map_err(|_| bad())?,
                "peak_power_max_db" => p.peak_power_max_db = v.parse().map_err(|_| bad())?,
                "noise_sigma_db" => p.noise_sigma_db = v.parse().map_err(|_| bad())?,
                "min_peak_separation" => p.min_peak_separation = v.parse().map_err(|_| bad())?,
                "seed" => p.seed = v.parse().map_err(|_| bad())?,
                other => return Err(CoreError::Config(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Record `i` gets id `i` and seed `params.seed + i`.
pub fn generate_dataset(spec: &SynthDatasetSpec) -> Result<PdpSet> {
    spec.validate()?;
    let records = (0..spec.n_records as u64)
        .map(|i| generate_profile(&spec.params, i, spec.params.seed.wrapping_add(i)).map(|p| p.record))
        .collect::<Result<Vec<_>>>()?;
    PdpSet::new(records)
}
