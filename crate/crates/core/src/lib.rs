//! GRU language-model rescoring engine.
//!
//! The engine answers (history, word) queries with unnormalized scores from a
//! GRU language model with an NCE output layer and a hashed maximum-entropy
//! bypass. Two accelerations are built in: a hidden-state cache keyed by a
//! quantized history vector, and frame-wise batching of hidden-layer work
//! onto simulated accelerator devices with a latency/bandwidth cost model.
//! [`oracle::oracle_rescore`] is the cache-free reference every
//! configuration is checked against.

pub mod backend;
pub mod cache;
pub mod error;
pub mod experiment;
pub mod gru;
pub mod model;
pub mod oracle;
pub mod rescorer;
pub mod scorer;
pub mod workload;

pub use backend::{
    account_batch, bytes_for_rows, calibrate_cost, execute, pack_frame_batch, split_batch,
    BackendConfig, BackendKind, Batching, CostModel, FrameBatch, Observation, SimReport,
};
pub use cache::{
    hit_ratio, quantize, redundancy_rate, CacheStats, HiddenLookup, PrecisionMode, QuantizedKey,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport, MetricsReport};
pub use gru::{flops_per_row, gru_batch, gru_step, HistoryVector, MathMode};
pub use model::{generate_model, load_model, save_model, ModelDims, ModelParams};
pub use oracle::oracle_rescore;
pub use rescorer::{new_session, HistoryId, Metrics, QueryResult, Session, SessionConfig};
pub use scorer::{
    combined_score, exact_log_prob, maxent_feature_indices, maxent_score, nce_score, WordContext,
};
pub use workload::{gen_workload, Workload, WorkloadParams};
