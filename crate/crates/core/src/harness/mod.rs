//! Data loading, configuration, metrics, checkpoints and the commands
//! behind the `vq-em` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod stability;
pub mod synthetic;

pub use commands::{
    cmd_cluster, cmd_eval, cmd_stability, cmd_train, ClusterSummary, EvalReport, TrainOutcome,
};
pub use config::{CodebookInit, DataSource, ModeSpec, RunConfig};
pub use dataset::{Dataset, Layout, Standardization};
pub use metrics::{MetricsRecord, MetricsWriter};
pub use stability::StabilityReport;
