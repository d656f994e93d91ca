use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn,
    Lstm,
    Gru,
    Transformer,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Cnn, Arch::Lstm, Arch::Gru, Arch::Transformer];

    pub fn is_recurrent(self) -> bool {
        matches!(self, Arch::Lstm | Arch::Gru)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Lstm => "lstm",
            Arch::Gru => "gru",
            Arch::Transformer => "transformer",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Arch::Cnn),
            "lstm" => Ok(Arch::Lstm),
            "gru" => Ok(Arch::Gru),
            "transformer" => Ok(Arch::Transformer),
            _ => Err(CoreError::Config(format!(
                "unknown architecture `{s}` (expected cnn, lstm, gru or transformer)"
            ))),
        }
    }
}

pub const CNN_CHANNELS: [usize; 4] = [64, 128, 256, 512];
pub const CNN_KERNEL: usize = 14;
pub const CNN_STRIDE: usize = 2;
pub const RECURRENT_HIDDEN: [usize; 4] = [64, 32, 16, 8];
pub const DEFAULT_CHUNK: usize = 85;
pub const TRANSFORMER_EMBEDDING: usize = 8;
pub const TRANSFORMER_HEADS: usize = 1;
/// Feed-forward width of the transformer block (4x the embedding).
pub const TRANSFORMER_FFN: usize = 32;

/// Architecture selector plus its layer configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub channels_or_embedding: Vec<usize>,
    pub attention_heads: Option<usize>,
    pub kernel_size: Option<usize>,
    /// Recurrent architectures only.
    pub chunk_length: Option<usize>,
}

impl ModelConfig {
    /// The reference configuration for `arch`.
    pub fn reference(arch: Arch) -> Self {
        match arch {
            Arch::Cnn => Self {
                arch,
                layers: 4,
                channels_or_embedding: CNN_CHANNELS.to_vec(),
                attention_heads: None,
                kernel_size: Some(CNN_KERNEL),
                chunk_length: None,
            },
            Arch::Lstm | Arch::Gru => Self {
                arch,
                layers: 4,
                channels_or_embedding: RECURRENT_HIDDEN.to_vec(),
                attention_heads: None,
                kernel_size: None,
                chunk_length: Some(DEFAULT_CHUNK),
            },
            Arch::Transformer => Self {
                arch,
                layers: 1,
                channels_or_embedding: vec![TRANSFORMER_EMBEDDING],
                attention_heads: Some(TRANSFORMER_HEADS),
                kernel_size: None,
                chunk_length: None,
            },
        }
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk_length = Some(chunk);
        self
    }

    /// Checks the configuration against the reference table row for its architecture.
    pub fn validate(&self) -> Result<()> {
        let row = |what: String| {
            Err(CoreError::Config(format!(
                "{} configuration violates its reference row: {what}",
                self.arch.name().to_uppercase()
            )))
        };
        let reference = Self::reference(self.arch);
        if self.layers != reference.layers {
            return row(format!("layers must be {}, got {}", reference.layers, self.layers));
        }
        if self.channels_or_embedding != reference.channels_or_embedding {
            return row(format!(
                "channels/embedding must be {:?}, got {:?}",
                reference.channels_or_embedding, self.channels_or_embedding
            ));
        }
        if self.attention_heads != reference.attention_heads {
            return row(format!(
                "attention heads must be {:?}, got {:?}",
                reference.attention_heads, self.attention_heads
            ));
        }
        if self.kernel_size != reference.kernel_size {
            return row(format!(
                "kernel size must be {:?}, got {:?}",
                reference.kernel_size, self.kernel_size
            ));
        }
        match (self.arch.is_recurrent(), self.chunk_length) {
            (true, None) => return row("chunk length must be set".into()),
            (true, Some(0)) => return row("chunk length must be positive".into()),
            (false, Some(_)) => return row("chunk length applies to recurrent models only".into()),
            _ => {}
        }
        Ok(())
    }
}

/// Optimizer and early-stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            max_epochs: 50,
            batch_size: 16,
            validation_fraction: 0.1,
            early_stop_patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Number of validation originals carved from `n_originals` training records.
    pub fn validation_count(&self, n_originals: usize) -> Result<usize> {
        self.validate()?;
        let n_val = (self.validation_fraction * n_originals as f64).floor() as usize;
        if n_val < 1 {
            return Err(CoreError::Config(format!(
                "validation fraction {} of {n_originals} records leaves no validation record",
                self.validation_fraction
            )));
        }
        if n_val >= n_originals {
            return Err(CoreError::InsufficientData(format!(
                "validation split takes all {n_originals} records"
            )));
        }
        Ok(n_val)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(CoreError::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.early_stop_patience == 0 || self.early_stop_patience >= self.max_epochs {
            return Err(CoreError::Config(format!(
                "patience {} must lie in [1, max_epochs = {})",
                self.early_stop_patience, self.max_epochs
            )));
        }
        Ok(())
    }
}
