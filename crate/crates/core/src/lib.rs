//! Bulk resource allocation with learned per-resource risk scores: channel
//! simulation, the gate + top-D allocation rule, training losses, an LSTM
//! risk predictor, reliability estimation and sweep orchestration.

pub mod channel;
pub mod error;
pub mod experiment;
pub mod gtba;
pub mod loss;
pub mod model;
pub mod reliability;
pub mod rng;

pub use channel::{ChannelRealization, RateAgg, SimConfig};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentKind, ResultRow, RetrainIndex};
pub use gtba::{allocate, GtbaConfig, GtbaDecision, Outcome, RiskVector};
pub use loss::{LossKind, RbolConfig};
pub use model::{Checkpoint, ModelDims, ModelWeights, TrainConfig};
pub use reliability::{ReliabilityReport, RiskScorer};
pub use rng::{derive_stream, RngStream, StreamPurpose};
