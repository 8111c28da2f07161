//! Image IO, run configuration, checkpoints, the training loop, inference
//! and evaluation on top of [`sragan_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod infer;
pub mod models;
pub mod synthetic;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{load_dataset, sample_unpaired, DomainDataset, UnpairedBatch};
pub use error::{AppError, Result};
pub use evaluate::{evaluate, EvalMode, EvalReport};
pub use fit::{fit, MetricsRecord, RunDir};
pub use sragan_core;
