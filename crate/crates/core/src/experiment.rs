//! Configuration sweeps over one workload.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, BackendKind, CostModel};
use crate::cache::PrecisionMode;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rescorer::{Metrics, Session, SessionConfig};
use crate::workload::Workload;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub label: String,
    pub precision: PrecisionMode,
    pub hidden_cache: bool,
    pub backend: BackendConfig,
}

impl ExperimentConfig {
    pub fn new(precision: PrecisionMode, backend: BackendConfig) -> Self {
        let label = match backend.kind {
            BackendKind::Cpu => format!("{precision}/cpu"),
            BackendKind::Sim => format!("{precision}/{}/d{}", backend.batching, backend.devices),
        };
        ExperimentConfig {
            label,
            precision,
            hidden_cache: true,
            backend,
        }
    }

    fn session_config(&self, cost: CostModel) -> SessionConfig {
        SessionConfig {
            precision: self.precision,
            hidden_cache: self.hidden_cache,
            backend: self.backend,
            cost,
        }
    }
}

/// Metrics of one configuration plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub precision: PrecisionMode,
    pub hidden_cache: bool,
    pub backend: BackendConfig,
    pub cost_model: CostModel,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl MetricsReport {
    pub fn check(&self) -> Result<()> {
        self.metrics.stats().check_identities()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Unique GRU computations of the exact-key run on this workload.
    pub baseline_count: u64,
    pub reports: Vec<MetricsReport>,
}

pub fn run_config(
    model: &ModelParams,
    workload: &Workload,
    config: &ExperimentConfig,
    cost: CostModel,
) -> Result<MetricsReport> {
    let labelled = |e: Error| Error::Config {
        label: config.label.clone(),
        source: Box::new(e),
    };
    let mut session = Session::new(model, config.session_config(cost)).map_err(labelled)?;
    let metrics = session.rescore_utterance(workload).map_err(labelled)?;
    Ok(MetricsReport {
        label: config.label.clone(),
        precision: config.precision,
        hidden_cache: config.hidden_cache,
        backend: config.backend,
        cost_model: cost,
        metrics,
    })
}

/// Runs every configuration in its own session (concurrently) and attaches
/// redundancy rates against the exact-key run.
pub fn run_experiment(
    model: &ModelParams,
    workload: &Workload,
    configs: &[ExperimentConfig],
    cost: CostModel,
) -> Result<ExperimentReport> {
    workload.validate()?;
    let mut reports = configs
        .par_iter()
        .map(|c| run_config(model, workload, c, cost))
        .collect::<Result<Vec<_>>>()?;

    let baseline_count = match reports
        .iter()
        .find(|r| r.precision == PrecisionMode::Off && r.hidden_cache)
    {
        Some(r) => r.metrics.unique_gru_computations,
        None => {
            let exact = ExperimentConfig::new(PrecisionMode::Off, BackendConfig::cpu());
            run_config(model, workload, &exact, cost)?
                .metrics
                .unique_gru_computations
        }
    };

    for report in &mut reports {
        if baseline_count > 0 && report.hidden_cache {
            report.metrics.set_baseline(baseline_count).map_err(|e| Error::Config {
                label: report.label.clone(),
                source: Box::new(e),
            })?;
        }
    }
    Ok(ExperimentReport {
        baseline_count,
        reports,
    })
}

/// Every combination of the given precisions, batchings and device counts on
/// the simulated backend.
pub fn config_matrix(
    precisions: &[PrecisionMode],
    batchings: &[crate::backend::Batching],
    devices: &[usize],
) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for &p in precisions {
        for &b in batchings {
            for &d in devices {
                out.push(ExperimentConfig::new(p, BackendConfig::sim(b, d)));
            }
        }
    }
    out
}

/// Plain-text summary with one row per configuration.
pub fn render_table(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>9} {:>10} {:>9} {:>10} {:>12} {:>12} {:>12}",
        "config", "queries", "count", "rate", "rounds", "bytes", "transfer_s", "compute_s"
    );
    for r in &report.reports {
        let m = &r.metrics;
        let rate = m
            .redundancy_rate
            .map(|x| format!("{:.2}%", (x * 100.0).round() / 100.0))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<22} {:>9} {:>10} {:>9} {:>10} {:>12} {:>12.6} {:>12.6}",
            r.label,
            m.total_queries,
            m.unique_gru_computations,
            rate,
            m.transfer_rounds,
            m.bytes_moved,
            m.sim_transfer_seconds,
            m.sim_compute_seconds
        );
    }
    out
}
