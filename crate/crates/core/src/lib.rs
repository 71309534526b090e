//! Cross-modal contrastive training with momentum encoders and negative
//! queues, plus retrieval, evaluation and a small JSON service.

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod moco;
pub mod numkit;
pub mod retrieval;
pub mod trainer;

pub use data::{ModalityPair, PairDataset};
pub use encoders::{EncoderConfig, EncoderParams};
pub use error::{CheckpointError, Error, Result};
pub use moco::{training_step, NegativeQueue, StepOutputs, TwoTowerState};
pub use retrieval::{build_index, MetricsReport, RetrievalIndex};
pub use trainer::{fit, Checkpoint, TrainConfig, TrainHistory, Trainer};
