//! Configuration, data pipeline, optimisation and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use config::{EntitySource, TrainConfig};
pub use trainer::{StepLog, TrainSummary, Trainer};
