//! Data, model and memory balancing for pipeline-parallel vision-language
//! training, with a deterministic 1F1B simulator to score the result.

pub mod batcher;
pub mod cli;
pub mod costmodel;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod partition;
pub mod pipesim;
pub mod planner;
pub mod presets;
pub mod recompute;
pub mod types;

pub use error::{Error, Result};
pub use metrics::{dist_ratio, pad_ratio};
pub use types::{BalanceParams, Dataset, DeviceLoads, Group, Sample};
