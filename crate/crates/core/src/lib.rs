//! Multipath-component detection in power delay profiles: data handling,
//! synthetic generation, reconstruction autoencoders, peak clustering and
//! relaxed scoring.

pub mod data;
pub mod detect;
mod error;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod zoo;

pub use data::{NormalizedPdp, PdpRecord, PdpSet};
pub use detect::{detect_peaks, DetectionConfig, PeakSet};
pub use error::{CoreError, Result};
pub use metrics::{compute_metrics, relaxed_match, MatchReport, MetricsConfig, MetricsReport};
pub use zoo::{Arch, Autoencoder, ModelConfig, TrainConfig, TrainedModel};
