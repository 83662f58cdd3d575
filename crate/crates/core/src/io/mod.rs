//! Configuration files, model files, metric streams and run manifests.

pub mod config;
pub mod manifest;
pub mod metrics_log;
pub mod model_file;

pub use config::KvConfig;
pub use manifest::{config_hash, RunManifest};
pub use metrics_log::{metrics_to_csv, read_metrics, write_metrics_record, MetricRecord, MetricsWriter};
pub use model_file::{load_checkpoint, load_model, save_checkpoint, save_model};
