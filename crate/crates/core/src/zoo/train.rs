//! Mini-batch Adam training with validation-based early stopping.

use std::collections::HashSet;
use std::fmt::Write as _;

use mpcd_nn::{AdamState, Graph, ParamStore};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Arch, ModelConfig, TrainConfig};
use super::model::Autoencoder;
use crate::data::NormalizedPdp;
use crate::error::{CoreError, Result};
use crate::seed::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based stopping on validation loss. Any strict decrease counts as
/// an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val: f64) -> StopDecision {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// A model after training: parameters restored to the best validation epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    model: Autoencoder,
    pub train_config: TrainConfig,
    pub loss_history: Vec<EpochLoss>,
    pub best_epoch: usize,
    frozen: bool,
}

impl TrainedModel {
    pub fn model(&self) -> &Autoencoder {
        &self.model
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn reconstruct(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.model.reconstruct(values)
    }

    pub fn reconstruct_batch(&self, seqs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.model.reconstruct_batch(seqs)
    }

    pub fn checkpoint(&self) -> String {
        self.model.params().to_checkpoint()
    }

    pub fn loss_history_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for e in &self.loss_history {
            let _ = writeln!(out, "{},{:?},{:?}", e.epoch, e.train_mse, e.val_mse);
        }
        out
    }

    /// Key-value manifest followed by the loss history CSV.
    pub fn manifest(&self) -> String {
        let c = self.config();
        let t = &self.train_config;
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        let mut out = String::from("format=mpcd-model 1\n");
        let _ = writeln!(out, "arch={}", c.arch);
        let _ = writeln!(out, "layers={}", c.layers);
        let chans: Vec<String> = c.channels_or_embedding.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "channels_or_embedding={}", chans.join(","));
        let _ = writeln!(out, "attention_heads={}", opt(c.attention_heads));
        let _ = writeln!(out, "kernel_size={}", opt(c.kernel_size));
        let _ = writeln!(out, "chunk_length={}", opt(c.chunk_length));
        let _ = writeln!(out, "init_seed={}", self.model.seed());
        let _ = writeln!(out, "learning_rate={:?}", t.learning_rate);
        let _ = writeln!(out, "max_epochs={}", t.max_epochs);
        let _ = writeln!(out, "batch_size={}", t.batch_size);
        let _ = writeln!(out, "validation_fraction={:?}", t.validation_fraction);
        let _ = writeln!(out, "early_stop_patience={}", t.early_stop_patience);
        let _ = writeln!(out, "train_seed={}", t.seed);
        let _ = writeln!(out, "parameter_count={}", self.model.parameter_count());
        let _ = writeln!(out, "best_epoch={}", self.best_epoch);
        let _ = writeln!(out, "frozen={}", self.frozen);
        out.push_str("[loss_history]\n");
        out.push_str(&self.loss_history_csv());
        out
    }

    /// Rebuilds a frozen model from its manifest and checkpoint text.
    pub fn load(manifest: &str, checkpoint: &str) -> Result<Self> {
        let (head, history) = manifest
            .split_once("[loss_history]\n")
            .unwrap_or((manifest, ""));
        let mut kv = std::collections::HashMap::new();
        for line in head.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("manifest: expected key=value, got `{line}`")))?;
            kv.insert(k.trim(), v.trim());
        }
        if kv.get("format") != Some(&"mpcd-model 1") {
            return Err(CoreError::Config("manifest: unsupported or missing format".into()));
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| CoreError::Config(format!("manifest: missing `{k}`")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| CoreError::Config(format!("manifest: invalid `{k}`")))
        };
        let opt = |k: &str| -> Result<Option<usize>> {
            match get(k)? {
                "none" => Ok(None),
                v => v.parse().map(Some).map_err(|_| CoreError::Config(format!("manifest: invalid `{k}`"))),
            }
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| CoreError::Config(format!("manifest: invalid `{k}`")))
        };
        let config = ModelConfig {
            arch: get("arch")?.parse::<Arch>()?,
            layers: num("layers")?,
            channels_or_embedding: get("channels_or_embedding")?
                .split(',')
                .map(|c| c.parse().map_err(|_| CoreError::Config("manifest: invalid channels".into())))
                .collect::<Result<_>>()?,
            attention_heads: opt("attention_heads")?,
            kernel_size: opt("kernel_size")?,
            chunk_length: opt("chunk_length")?,
        };
        let train_config = TrainConfig {
            learning_rate: float("learning_rate")?,
            max_epochs: num("max_epochs")?,
            batch_size: num("batch_size")?,
            validation_fraction: float("validation_fraction")?,
            early_stop_patience: num("early_stop_patience")?,
            seed: get("train_seed")?
                .parse()
                .map_err(|_| CoreError::Config("manifest: invalid `train_seed`".into()))?,
        };
        let seed = get("init_seed")?
            .parse()
            .map_err(|_| CoreError::Config("manifest: invalid `init_seed`".into()))?;
        let mut model = Autoencoder::build(&config, seed)?;
        model.load_params(&ParamStore::from_checkpoint(checkpoint)?)?;
        let mut loss_history = Vec::new();
        for line in history.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || CoreError::Config(format!("manifest: bad loss history row `{line}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            loss_history.push(EpochLoss {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_mse: f[1].parse().map_err(|_| bad())?,
                val_mse: f[2].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self {
            model,
            train_config,
            loss_history,
            best_epoch: num("best_epoch")?,
            frozen: true,
        })
    }
}

/// Splits samples into (training pool, validation originals) by source id.
///
/// The last `validation_fraction` of distinct source ids (in order of first
/// appearance) are held out. Only their originals (`variant == 0`) are used
/// for validation; their augmented variants are discarded.
pub fn validation_split<'a>(
    samples: &'a [NormalizedPdp],
    cfg: &TrainConfig,
) -> Result<(Vec<&'a NormalizedPdp>, Vec<&'a NormalizedPdp>)> {
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    for s in samples {
        if seen.insert(s.source_id) {
            ids.push(s.source_id);
        }
    }
    if ids.is_empty() {
        return Err(CoreError::InsufficientData("training set is empty".into()));
    }
    let n_val = cfg.validation_count(ids.len())?;
    let held: HashSet<u64> = ids[ids.len() - n_val..].iter().copied().collect();
    let train = samples.iter().filter(|s| !held.contains(&s.source_id)).collect();
    let val: Vec<_> = samples
        .iter()
        .filter(|s| held.contains(&s.source_id) && s.variant == 0)
        .collect();
    if val.is_empty() {
        return Err(CoreError::InsufficientData(
            "validation ids have no original (variant 0) records".into(),
        ));
    }
    Ok((train, val))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Mean squared reconstruction error over `samples`, each weighted equally.
pub fn evaluate_mse(model: &Autoencoder, samples: &[&NormalizedPdp]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CoreError::InsufficientData("no samples to evaluate".into()));
    }
    let seqs: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    let recon = model.reconstruct_batch(&seqs)?;
    Ok(recon.iter().zip(&seqs).map(|(r, s)| mse(r, s)).sum::<f64>() / samples.len() as f64)
}

pub fn train(model: Autoencoder, samples: &[NormalizedPdp], cfg: &TrainConfig) -> Result<TrainedModel> {
    train_with_progress(model, samples, cfg, |_| {})
}

/// Trains `model`, calling `progress` after each epoch.
pub fn train_with_progress(
    mut model: Autoencoder,
    samples: &[NormalizedPdp],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochLoss),
) -> Result<TrainedModel> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(CoreError::InsufficientData("training set is empty".into()));
    }
    let len = samples[0].len();
    if samples.iter().any(|s| s.len() != len) {
        return Err(CoreError::Shape("training sequences differ in length".into()));
    }
    let (train_pool, val) = validation_split(samples, cfg)?;
    if train_pool.is_empty() {
        return Err(CoreError::InsufficientData("no training records left after the validation split".into()));
    }
    let plan = model.window_plan(len)?;
    let mut adam = AdamState::new(model.params().tensors(), cfg.learning_rate)?;
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best_params = model.params().clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_pool.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng(derive_seed(cfg.seed, &[epoch as u64])));
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[f64]> = batch.iter().map(|&i| train_pool[i].values.as_slice()).collect();
            let windows = model.stack_windows(&seqs, &plan)?;
            let mut g = Graph::new();
            let y = model.forward(&mut g, &windows)?;
            let loss = g.mse_loss(y, &windows)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(CoreError::Divergence { epoch });
            }
            let grads = g.backward(loss)?.param_grads(model.params());
            drop(g);
            adam.apply(model.params_mut().tensors_mut(), &grads)?;
            weighted += lv * batch.len() as f64;
        }
        let train_mse = weighted / train_pool.len() as f64;
        let val_mse = evaluate_mse(&model, &val).map_err(|e| match e {
            CoreError::Shape(_) => CoreError::Divergence { epoch },
            other => other,
        })?;
        if !val_mse.is_finite() || model.params().tensors().iter().any(|t| !t.is_finite()) {
            return Err(CoreError::Divergence { epoch });
        }
        let record = EpochLoss {
            epoch,
            train_mse,
            val_mse,
        };
        history.push(record);
        progress(&record);
        match stopper.observe(epoch, val_mse) {
            StopDecision::Improved => best_params.clone_from(model.params()),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    model.load_params(&best_params)?;
    Ok(TrainedModel {
        model,
        train_config: cfg.clone(),
        loss_history: history,
        best_epoch: stopper.best_epoch(),
        frozen: true,
    })
}
