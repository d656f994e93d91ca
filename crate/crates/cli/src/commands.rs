//! The five pipeline stages plus manifest replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use mpcd_core::data::{
    augment_set, load_pdp_csv, normalize_minmax, split_alternating, AugmentConfig, NormalizedPdp, PdpSet,
};
use mpcd_core::detect::{
    detect_peaks, detection_csv_rows, trace_csv_rows, DetectionConfig, DETECTION_HEADER, TRACE_HEADER,
};
use mpcd_core::metrics::{aggregate, published_consistency, relaxed_match, ConsistencyRow, MetricsConfig, MetricsReport};
use mpcd_core::seed::derive_seed;
use mpcd_core::synth::{generate_dataset, SynthDatasetSpec, SynthParams};
use mpcd_core::zoo::{train_with_progress, Arch, Autoencoder, ModelConfig, TrainConfig, TrainedModel, DEFAULT_CHUNK};

use crate::error::{CliError, Result};
use crate::manifest::{now_ms, sha256_file, Artifact, RunManifest};
use crate::svg::{render_trace, TracePoint};

pub const OUT_DIR_ENV: &str = "MPCD_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "mpcd-out";
pub const PDP_FILE: &str = "pdp.csv";
pub const LABEL_FILE: &str = "labels.csv";
pub const SPEC_FILE: &str = "synth_spec.txt";
pub const MODEL_MANIFEST_FILE: &str = "model.manifest";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const TABLE_CHECK_FILE: &str = "published_f1_check.json";

/// Seed streams derived from a command's `--seed`.
const AUGMENT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

pub fn manifest_name(command: &str) -> String {
    format!("{command}_manifest.json")
}

/// `--out` if given, else `$MPCD_OUT_DIR`, else `./mpcd-out`.
pub fn resolve_out(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("argument structs serialize")
}

fn artifacts(paths: &[&Path]) -> Result<Vec<Artifact>> {
    paths.iter().map(|p| Artifact::of(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

pub fn select_split(set: &PdpSet, split: Split) -> Result<PdpSet> {
    Ok(match split {
        Split::All => set.clone(),
        Split::Train => split_alternating(set)?.0,
        Split::Test => split_alternating(set)?.1,
    })
}

pub fn load_data_dir(dir: &Path) -> Result<PdpSet> {
    Ok(load_pdp_csv(&dir.join(PDP_FILE), &dir.join(LABEL_FILE))?)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthDatasetSpec::default().n_records)]
    pub records: usize,
    #[arg(long, default_value_t = SynthParams::default().length)]
    pub length: usize,
    #[arg(long, default_value_t = SynthParams::default().seed)]
    pub seed: u64,
    #[arg(long, default_value_t = SynthParams::default().n_peaks_min)]
    pub n_peaks_min: usize,
    #[arg(long, default_value_t = SynthParams::default().n_peaks_max)]
    pub n_peaks_max: usize,
    #[arg(long, default_value_t = SynthParams::default().decay_db_per_sample)]
    pub decay_db_per_sample: f64,
    #[arg(long, default_value_t = SynthParams::default().noise_floor_db, allow_negative_numbers = true)]
    pub noise_floor_db: f64,
    #[arg(long, default_value_t = SynthParams::default().first_arrival_db, allow_negative_numbers = true)]
    pub first_arrival_db: f64,
    #[arg(long, default_value_t = SynthParams::default().first_arrival_min)]
    pub first_arrival_min: usize,
    #[arg(long, default_value_t = SynthParams::default().first_arrival_max)]
    pub first_arrival_max: usize,
    #[arg(long, default_value_t = SynthParams::default().peak_power_min_db)]
    pub peak_power_min_db: f64,
    #[arg(long, default_value_t = SynthParams::default().peak_power_max_db)]
    pub peak_power_max_db: f64,
    #[arg(long, default_value_t = SynthParams::default().noise_sigma_db)]
    pub noise_sigma_db: f64,
    #[arg(long, default_value_t = SynthParams::default().min_peak_separation)]
    pub min_peak_separation: usize,
    /// Output directory [default: $MPCD_OUT_DIR or ./mpcd-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthDatasetSpec {
        SynthDatasetSpec {
            n_records: self.records,
            params: SynthParams {
                length: self.length,
                n_peaks_min: self.n_peaks_min,
                n_peaks_max: self.n_peaks_max,
                decay_db_per_sample: self.decay_db_per_sample,
                noise_floor_db: self.noise_floor_db,
                first_arrival_db: self.first_arrival_db,
                first_arrival_min: self.first_arrival_min,
                first_arrival_max: self.first_arrival_max,
                peak_power_min_db: self.peak_power_min_db,
                peak_power_max_db: self.peak_power_max_db,
                noise_sigma_db: self.noise_sigma_db,
                min_peak_separation: self.min_peak_separation,
                seed: self.seed,
            },
        }
    }
}

/// Writes `pdp.csv`, `labels.csv`, the key-value spec and the run manifest.
pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let started = now_ms();
    let out = resolve_out(&args.out);
    ensure_dir(&out)?;
    let spec = args.spec();
    let set = generate_dataset(&spec)?;
    let (pdp, labels, kv) = (out.join(PDP_FILE), out.join(LABEL_FILE), out.join(SPEC_FILE));
    set.write_csv(&pdp, &labels)?;
    write(&kv, &spec.to_kv())?;
    let resolved = SynthArgs {
        out: Some(out.clone()),
        ..args.clone()
    };
    let manifest = RunManifest {
        command: "synth".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: to_value(&resolved),
        seeds: vec![args.seed],
        inputs: vec![],
        outputs: artifacts(&[&pdp, &labels, &kv])?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let path = out.join(manifest_name("synth"));
    manifest.write(&path)?;
    Ok(path)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// cnn, lstm, gru or transformer
    #[arg(long)]
    pub arch: Arch,
    /// Directory holding pdp.csv and labels.csv
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    /// Window length for recurrent models [default: 85]
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().validation_fraction)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = TrainConfig::default().early_stop_patience)]
    pub patience: usize,
    /// Augmented variants per training record; 0 disables augmentation
    #[arg(long, default_value_t = AugmentConfig::default().variants_per_record)]
    pub augment_variants: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub quiet: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn model_config(&self) -> ModelConfig {
        let base = ModelConfig::reference(self.arch);
        match (self.arch.is_recurrent(), self.chunk) {
            (true, c) => base.with_chunk(c.unwrap_or(DEFAULT_CHUNK)),
            (false, Some(c)) => base.with_chunk(c),
            (false, None) => base,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            max_epochs: self.epochs,
            batch_size: self.batch,
            validation_fraction: self.val_fraction,
            early_stop_patience: self.patience,
            seed: derive_seed(self.seed, &[TRAIN_STREAM]),
        }
    }
}

/// The normalized (and, unless disabled, augmented) samples `train` fits on.
pub fn training_samples(args: &TrainArgs) -> Result<Vec<NormalizedPdp>> {
    let set = select_split(&load_data_dir(&args.data)?, args.split)?;
    let originals = set
        .records()
        .iter()
        .map(normalize_minmax)
        .collect::<mpcd_core::Result<Vec<_>>>()?;
    if args.augment_variants == 0 {
        return Ok(originals);
    }
    let cfg = AugmentConfig {
        variants_per_record: args.augment_variants,
        seed: derive_seed(args.seed, &[AUGMENT_STREAM]),
        ..AugmentConfig::default()
    };
    Ok(augment_set(&originals, &cfg)?)
}

/// Normalizes and augments the chosen split, trains, and writes the model files.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let started = now_ms();
    let out = resolve_out(&args.out);
    let model_cfg = args.model_config();
    model_cfg.validate()?;
    let train_cfg = args.train_config();
    train_cfg.validate()?;

    let samples = training_samples(args)?;

    let model = Autoencoder::build(&model_cfg, args.seed)?;
    let quiet = args.quiet;
    let trained = train_with_progress(model, &samples, &train_cfg, |e| {
        if !quiet {
            eprintln!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train_mse, e.val_mse);
        }
    })?;

    ensure_dir(&out)?;
    let (mpath, cpath, lpath) = (out.join(MODEL_MANIFEST_FILE), out.join(CHECKPOINT_FILE), out.join(LOSS_FILE));
    write(&mpath, &trained.manifest())?;
    write(&cpath, &trained.checkpoint())?;
    write(&lpath, &trained.loss_history_csv())?;
    let resolved = TrainArgs {
        chunk: model_cfg.chunk_length,
        out: Some(out.clone()),
        ..args.clone()
    };
    let manifest = RunManifest {
        command: "train".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: to_value(&resolved),
        seeds: vec![args.seed, derive_seed(args.seed, &[AUGMENT_STREAM]), train_cfg.seed],
        inputs: artifacts(&[&args.data.join(PDP_FILE), &args.data.join(LABEL_FILE)])?,
        outputs: artifacts(&[&mpath, &cpath, &lpath])?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let path = out.join(manifest_name("train"));
    manifest.write(&path)?;
    Ok(path)
}

pub fn load_model_dir(dir: &Path) -> Result<TrainedModel> {
    Ok(TrainedModel::load(
        &read(&dir.join(MODEL_MANIFEST_FILE))?,
        &read(&dir.join(CHECKPOINT_FILE))?,
    )?)
}

// ---------------------------------------------------------------- detect

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    /// Directory written by `train`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = DetectionConfig::default().threshold_k)]
    pub threshold_k: f64,
    #[arg(long, default_value_t = DetectionConfig::default().eps1)]
    pub eps1: f64,
    #[arg(long, default_value_t = DetectionConfig::default().min_pts1)]
    pub min_pts1: usize,
    #[arg(long, default_value_t = DetectionConfig::default().eps2)]
    pub eps2: f64,
    #[arg(long, default_value_t = DetectionConfig::default().min_pts2)]
    pub min_pts2: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl DetectArgs {
    pub fn detection_config(&self) -> DetectionConfig {
        DetectionConfig {
            threshold_k: self.threshold_k,
            eps1: self.eps1,
            min_pts1: self.min_pts1,
            eps2: self.eps2,
            min_pts2: self.min_pts2,
        }
    }
}

/// Reconstructs every record of the split and writes peaks plus full traces,
/// ordered by record id.
pub fn cmd_detect(args: &DetectArgs) -> Result<PathBuf> {
    let started = now_ms();
    let out = resolve_out(&args.out);
    let cfg = args.detection_config();
    cfg.validate()?;
    let model = load_model_dir(&args.model)?;
    let set = select_split(&load_data_dir(&args.data)?, args.split)?;
    let mut records: Vec<_> = set.records().iter().collect();
    records.sort_by_key(|r| r.id());
    let normalized = records
        .iter()
        .map(|r| normalize_minmax(r))
        .collect::<mpcd_core::Result<Vec<_>>>()?;
    let seqs: Vec<&[f64]> = normalized.iter().map(|n| n.values.as_slice()).collect();
    let recons = model.reconstruct_batch(&seqs)?;

    let mut det_csv = format!("{DETECTION_HEADER}\n");
    let mut trace_csv = format!("{TRACE_HEADER}\n");
    for ((r, n), recon) in records.iter().zip(&normalized).zip(&recons) {
        let det = detect_peaks(n, recon, &cfg)?;
        detection_csv_rows(&mut det_csv, r.id(), &det.peaks);
        trace_csv_rows(&mut trace_csv, r.id(), &n.values, recon, &det);
    }
    ensure_dir(&out)?;
    let (dpath, tpath) = (out.join(DETECTIONS_FILE), out.join(TRACE_FILE));
    write(&dpath, &det_csv)?;
    write(&tpath, &trace_csv)?;
    let resolved = DetectArgs {
        out: Some(out.clone()),
        ..args.clone()
    };
    let manifest = RunManifest {
        command: "detect".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: to_value(&resolved),
        seeds: vec![],
        inputs: artifacts(&[
            &args.model.join(MODEL_MANIFEST_FILE),
            &args.model.join(CHECKPOINT_FILE),
            &args.data.join(PDP_FILE),
            &args.data.join(LABEL_FILE),
        ])?,
        outputs: artifacts(&[&dpath, &tpath])?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let path = out.join(manifest_name("detect"));
    manifest.write(&path)?;
    Ok(path)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Detection CSV written by `detect`
    #[arg(long, required_unless_present = "check_published")]
    pub detections: Option<PathBuf>,
    /// Label CSV [default: labels.csv inside --data]
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Dataset directory; with --split, restricts scoring to that split's records
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, requires = "data")]
    pub split: Option<Split>,
    #[arg(long, default_value_t = MetricsConfig::default().tolerance_n)]
    pub tolerance: usize,
    /// Recompute F1 from the published precision/recall pairs instead of scoring
    #[arg(long = "check-table2")]
    pub check_published: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub id: u64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub tolerance_n: usize,
    pub aggregate: MetricsReport,
    pub records: Vec<RecordCounts>,
    pub detection_config: Option<serde_json::Value>,
    pub model_manifest_sha256: Option<String>,
}

fn parse_index_csv(path: &Path, header: &str, index_col: usize) -> Result<BTreeMap<u64, Vec<usize>>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(CliError::Data(format!("{}: expected header `{header}`", path.display()))),
    }
    let mut out: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || CliError::Data(format!("{}: line {}: malformed row `{line}`", path.display(), i + 1));
        let id = f.first().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let idx = f.get(index_col).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        out.entry(id).or_default().push(idx);
    }
    for v in out.values_mut() {
        v.sort_unstable();
    }
    Ok(out)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<PathBuf> {
    let started = now_ms();
    let out = resolve_out(&args.out);
    ensure_dir(&out)?;
    if args.check_published {
        return check_published(args, &out, started);
    }
    let det_path = args.detections.clone().expect("clap enforces --detections");
    let label_path = match (&args.labels, &args.data) {
        (Some(l), _) => l.clone(),
        (None, Some(d)) => d.join(LABEL_FILE),
        (None, None) => return Err(CliError::Usage("eval needs --labels or --data".into())),
    };
    let detections = parse_index_csv(&det_path, DETECTION_HEADER, 1)?;
    let labels = parse_index_csv(&label_path, mpcd_core::data::LABEL_HEADER, 1)?;
    let ids: BTreeSet<u64> = match (&args.data, args.split) {
        (Some(d), Some(split)) => select_split(&load_data_dir(d)?, split)?
            .records()
            .iter()
            .map(|r| r.id())
            .collect(),
        _ => detections.keys().chain(labels.keys()).copied().collect(),
    };
    if let Some(stray) = detections.keys().find(|id| !ids.contains(id)) {
        return Err(CliError::Data(format!("detections mention record {stray} outside the evaluated split")));
    }

    let cfg = MetricsConfig {
        tolerance_n: args.tolerance,
    };
    let empty = Vec::new();
    let mut reports = Vec::with_capacity(ids.len());
    let mut records = Vec::with_capacity(ids.len());
    for &id in &ids {
        let r = relaxed_match(
            detections.get(&id).unwrap_or(&empty),
            labels.get(&id).unwrap_or(&empty),
            &cfg,
        )?;
        records.push(RecordCounts {
            id,
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
        });
        reports.push(r);
    }

    // Echo the detection settings and model hash when the detect manifest sits beside the CSV.
    let sibling = det_path.parent().unwrap_or(Path::new(".")).join(manifest_name("detect"));
    let (detection_config, model_manifest_sha256) = if sibling.exists() {
        let m = RunManifest::read(&sibling)?;
        let det_cfg = serde_json::from_value::<DetectArgs>(m.args.clone())
            .ok()
            .map(|a| to_value(&a.detection_config()));
        let hash = m
            .inputs
            .iter()
            .find(|a| a.path.file_name().is_some_and(|n| n == MODEL_MANIFEST_FILE))
            .map(|a| a.sha256.clone());
        (det_cfg, hash)
    } else {
        (None, None)
    };
    let metrics = MetricsFile {
        tolerance_n: args.tolerance,
        aggregate: aggregate(&reports),
        records,
        detection_config,
        model_manifest_sha256,
    };
    let mpath = out.join(METRICS_FILE);
    write(&mpath, &(serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n"))?;

    let mut inputs = vec![det_path.clone(), label_path];
    if let Some(d) = &args.data {
        inputs.push(d.join(PDP_FILE));
    }
    let resolved = EvalArgs {
        out: Some(out.clone()),
        ..args.clone()
    };
    let manifest = RunManifest {
        command: "eval".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: to_value(&resolved),
        seeds: vec![],
        inputs: artifacts(&inputs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?,
        outputs: artifacts(&[&mpath])?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let path = out.join(manifest_name("eval"));
    manifest.write(&path)?;
    Ok(path)
}

fn check_published(args: &EvalArgs, out: &Path, started: u128) -> Result<PathBuf> {
    let rows: Vec<ConsistencyRow> = published_consistency();
    for r in &rows {
        println!(
            "{:<12} P={:.2} R={:.2} F1={:.4} -> {:.2} (reported {:.2}) {}",
            r.arch,
            r.precision,
            r.recall,
            r.computed_f1,
            r.rounded_f1,
            r.reported_f1,
            if r.consistent { "ok" } else { "MISMATCH" }
        );
    }
    let path = out.join(TABLE_CHECK_FILE);
    write(&path, &(serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n"))?;
    let resolved = EvalArgs {
        out: Some(out.to_path_buf()),
        ..args.clone()
    };
    RunManifest {
        command: "eval".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: to_value(&resolved),
        seeds: vec![],
        inputs: vec![],
        outputs: artifacts(&[&path])?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    }
    .write(&out.join(manifest_name("eval")))?;
    if let Some(bad) = rows.iter().find(|r| !r.consistent) {
        return Err(CliError::Data(format!(
            "{}: F1 from P/R rounds to {:.2}, reported {:.2}",
            bad.arch, bad.rounded_f1, bad.reported_f1
        )));
    }
    Ok(path)
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Trace CSV written by `detect`
    #[arg(long)]
    pub trace: PathBuf,
    /// Label CSV supplying the ground-truth lines
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub id: u64,
    /// SVG path [default: <out dir>/report_<id>.svg]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_trace(path: &Path, id: u64) -> Result<Vec<TracePoint>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(CliError::Data(format!("{}: expected header `{TRACE_HEADER}`", path.display()))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Data(format!("{}: line {}: malformed trace row", path.display(), i + 1));
        if f.len() != 7 {
            return Err(bad());
        }
        if f[0].parse::<u64>().map_err(|_| bad())? != id {
            continue;
        }
        let index: usize = f[1].parse().map_err(|_| bad())?;
        if index != rows.len() {
            return Err(CliError::Data(format!("{}: record {id} trace is not in index order", path.display())));
        }
        rows.push(TracePoint {
            original: f[2].parse().map_err(|_| bad())?,
            reconstruction: f[3].parse().map_err(|_| bad())?,
            peak: f[6] == "1",
        });
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("record {id} not found in {}", path.display())));
    }
    Ok(rows)
}

pub fn cmd_report(args: &ReportArgs) -> Result<PathBuf> {
    let started = now_ms();
    let trace = read_trace(&args.trace, args.id)?;
    let labels = parse_index_csv(&args.labels, mpcd_core::data::LABEL_HEADER, 1)?;
    let svg = render_trace(args.id, &trace, labels.get(&args.id).map_or(&[][..], Vec::as_slice));
    let path = match &args.out {
        Some(p) => p.clone(),
        None => resolve_out(&None).join(format!("report_{}.svg", args.id)),
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    write(&path, &svg)?;
    let resolved = ReportArgs {
        out: Some(path.clone()),
        ..args.clone()
    };
    RunManifest {
        command: "report".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        args: to_value(&resolved),
        seeds: vec![],
        inputs: artifacts(&[&args.trace, &args.labels])?,
        outputs: artifacts(&[&path])?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    }
    .write(&dir.join(format!("report_{}_manifest.json", args.id)))?;
    Ok(path)
}

// ---------------------------------------------------------------- replay

/// Reruns the command recorded in a manifest. Returns the new manifest path.
pub fn cmd_replay(manifest: &Path, out: Option<PathBuf>) -> Result<PathBuf> {
    let m = RunManifest::read(manifest)?;
    let bad = |e: serde_json::Error| CliError::Usage(format!("{}: cannot replay: {e}", manifest.display()));
    match m.command.as_str() {
        "synth" => {
            let mut a: SynthArgs = serde_json::from_value(m.args).map_err(bad)?;
            a.out = out.or(a.out);
            cmd_synth(&a)
        }
        "train" => {
            let mut a: TrainArgs = serde_json::from_value(m.args).map_err(bad)?;
            a.out = out.or(a.out);
            cmd_train(&a)
        }
        "detect" => {
            let mut a: DetectArgs = serde_json::from_value(m.args).map_err(bad)?;
            a.out = out.or(a.out);
            cmd_detect(&a)
        }
        "eval" => {
            let mut a: EvalArgs = serde_json::from_value(m.args).map_err(bad)?;
            a.out = out.or(a.out);
            cmd_eval(&a)
        }
        "report" => {
            let mut a: ReportArgs = serde_json::from_value(m.args).map_err(bad)?;
            a.out = out.or(a.out);
            cmd_report(&a)
        }
        other => Err(CliError::Usage(format!("unknown command `{other}` in manifest"))),
    }
}

/// Hash of a file, for callers comparing artifacts.
pub fn file_hash(path: &Path) -> Result<String> {
    sha256_file(path)
}
