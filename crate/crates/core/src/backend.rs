//! Host/accelerator split of the hidden layer.
//!
//! Pending GRU rows of a frame are packed into one contiguous [`FrameBatch`],
//! optionally split evenly across simulated devices, executed through the GRU
//! kernel and charged against a [`CostModel`]. The simulated device never
//! changes results: outputs are always the host kernel's outputs.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gru::{flops_per_row, gru_batch, HistoryVector, MathMode};
use crate::model::ModelParams;

/// Bytes per element on the simulated device link (single precision).
pub const WIRE_BYTES_PER_ELEMENT: u64 = 4;

pub const DEFAULT_GAMMA: f64 = 1e-9;

/// Contiguous block of GRU inputs. Row `i` occupies
/// `data[i*(H+D) .. (i+1)*(H+D)]`, history vector first, then embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    hidden: usize,
    embed: usize,
    data: Vec<f64>,
    tags: Vec<u64>,
}

impl FrameBatch {
    pub fn new(hidden: usize, embed: usize) -> Self {
        FrameBatch {
            hidden,
            embed,
            data: Vec::new(),
            tags: Vec::new(),
        }
    }

    pub fn push(&mut self, h: &[f64], x: &[f64], tag: u64) -> Result<()> {
        if h.len() != self.hidden || x.len() != self.embed {
            return Err(Error::Dimension(format!(
                "row with state length {} and embedding length {} does not fit a batch of H={} D={}",
                h.len(),
                x.len(),
                self.hidden,
                self.embed
            )));
        }
        self.data.extend_from_slice(h);
        self.data.extend_from_slice(x);
        self.tags.push(tag);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn embed(&self) -> usize {
        self.embed
    }

    pub fn width(&self) -> usize {
        self.hidden + self.embed
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn tags(&self) -> &[u64] {
        &self.tags
    }

    /// `(history vector, embedding)` of row `i`.
    pub fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let start = i * self.width();
        let row = &self.data[start..start + self.width()];
        row.split_at(self.hidden)
    }

    pub fn check_layout(&self) -> Result<()> {
        if self.data.len() != self.rows() * self.width() {
            return Err(Error::Dimension(format!(
                "batch block holds {} values, expected {} rows x {}",
                self.data.len(),
                self.rows(),
                self.width()
            )));
        }
        Ok(())
    }

    pub fn unpack(&self) -> Vec<(Vec<f64>, Vec<f64>, u64)> {
        (0..self.rows())
            .map(|i| {
                let (h, x) = self.row(i);
                (h.to_vec(), x.to_vec(), self.tags[i])
            })
            .collect()
    }

    fn slice_rows(&self, start: usize, end: usize) -> FrameBatch {
        let w = self.width();
        FrameBatch {
            hidden: self.hidden,
            embed: self.embed,
            data: self.data[start * w..end * w].to_vec(),
            tags: self.tags[start..end].to_vec(),
        }
    }
}

/// Packs `(history vector, embedding, tag)` rows in order.
pub fn pack_frame_batch<'a, I>(hidden: usize, embed: usize, pending: I) -> Result<FrameBatch>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64], u64)>,
{
    let mut batch = FrameBatch::new(hidden, embed);
    for (h, x, tag) in pending {
        batch.push(h, x, tag)?;
    }
    Ok(batch)
}

/// Row counts of an even contiguous split; the first `rows % devices`
/// devices take one extra row.
pub fn split_sizes(rows: usize, devices: usize) -> Result<Vec<usize>> {
    if devices == 0 {
        return Err(Error::Parameter("device count must be at least 1".into()));
    }
    let base = rows / devices;
    let extra = rows % devices;
    Ok((0..devices).map(|i| base + usize::from(i < extra)).collect())
}

pub fn split_batch(batch: &FrameBatch, devices: usize) -> Result<Vec<FrameBatch>> {
    let sizes = split_sizes(batch.rows(), devices)?;
    let mut start = 0;
    Ok(sizes
        .into_iter()
        .map(|n| {
            let chunk = batch.slice_rows(start, start + n);
            start += n;
            chunk
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Everything on the host; no transfers are charged.
    Cpu,
    /// Hidden layer on simulated devices.
    #[default]
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Batching {
    /// One transfer round per GRU row.
    Query,
    /// One transfer round per device per frame.
    #[default]
    Frame,
}

impl FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpu" => Ok(BackendKind::Cpu),
            "sim" => Ok(BackendKind::Sim),
            _ => Err(Error::Parameter(format!("unknown backend '{s}', expected cpu | sim"))),
        }
    }
}

impl FromStr for Batching {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Batching::Query),
            "frame" => Ok(Batching::Frame),
            _ => Err(Error::Parameter(format!(
                "unknown batching '{s}', expected query | frame"
            ))),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Cpu => "cpu",
            BackendKind::Sim => "sim",
        })
    }
}

impl fmt::Display for Batching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Batching::Query => "query",
            Batching::Frame => "frame",
        })
    }
}

/// Simulated link and device: `alpha` seconds per transfer round, `beta`
/// seconds per byte, `gamma` seconds per flop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha: 0.0,
            beta: 0.0,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl CostModel {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let model = CostModel { alpha, beta, gamma };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!(
                    "cost model {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn transfer_seconds(&self, rounds: u64, bytes: u64) -> f64 {
        rounds as f64 * self.alpha + bytes as f64 * self.beta
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: CostModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// One timing observation of a transfer workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub rounds: u64,
    pub bytes: u64,
    pub seconds: f64,
}

/// Bytes moved for `rows` GRU rows: `h || x` out, `h'` back.
pub fn bytes_for_rows(rows: u64, hidden: usize, embed: usize) -> u64 {
    rows * (2 * hidden as u64 + embed as u64) * WIRE_BYTES_PER_ELEMENT
}

/// Solves `seconds = rounds * alpha + bytes * beta` for two observations.
///
/// When both observations move zero bytes the fit is pure latency
/// (least squares through the origin). `gamma` is set to [`DEFAULT_GAMMA`].
pub fn calibrate_cost(obs1: Observation, obs2: Observation) -> Result<CostModel> {
    for (i, o) in [obs1, obs2].iter().enumerate() {
        if !o.seconds.is_finite() || o.seconds < 0.0 {
            return Err(Error::Calibration(format!(
                "observation {} has invalid time {}",
                i + 1,
                o.seconds
            )));
        }
    }
    if obs1.rounds == obs2.rounds {
        return Err(Error::Calibration(
            "observations share a round count; latency and bandwidth cannot be separated".into(),
        ));
    }
    let (r1, r2) = (obs1.rounds as f64, obs2.rounds as f64);
    let (b1, b2) = (obs1.bytes as f64, obs2.bytes as f64);
    let (s1, s2) = (obs1.seconds, obs2.seconds);

    let (alpha, beta) = if obs1.bytes == 0 && obs2.bytes == 0 {
        ((r1 * s1 + r2 * s2) / (r1 * r1 + r2 * r2), 0.0)
    } else if obs1.bytes == obs2.bytes {
        let alpha = (s1 - s2) / (r1 - r2);
        (alpha, (s1 - r1 * alpha) / b1)
    } else {
        let det = r1 * b2 - r2 * b1;
        if det == 0.0 {
            return Err(Error::Calibration("singular calibration system".into()));
        }
        ((s1 * b2 - s2 * b1) / det, (r1 * s2 - r2 * s1) / det)
    };
    if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || beta < 0.0 {
        return Err(Error::Calibration(format!(
            "observations imply a negative or undefined parameter (alpha = {alpha}, beta = {beta})"
        )));
    }
    Ok(CostModel {
        alpha,
        beta,
        gamma: DEFAULT_GAMMA,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub batching: Batching,
    pub devices: usize,
    #[serde(skip)]
    pub math: MathMode,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Sim,
            batching: Batching::Frame,
            devices: 1,
            math: MathMode::Reference,
        }
    }
}

impl BackendConfig {
    pub fn sim(batching: Batching, devices: usize) -> Self {
        BackendConfig {
            kind: BackendKind::Sim,
            batching,
            devices,
            math: MathMode::Reference,
        }
    }

    pub fn cpu() -> Self {
        BackendConfig {
            kind: BackendKind::Cpu,
            devices: 1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::Parameter("device count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub transfer_rounds: u64,
    pub bytes_moved: u64,
    pub sim_transfer_seconds: f64,
    pub sim_compute_seconds: f64,
    /// Rows executed per device, summed over batches.
    pub device_rows: Vec<u64>,
    /// Non-empty batches executed.
    pub batches: u64,
}

impl SimReport {
    pub fn merge(&mut self, other: &SimReport) {
        self.transfer_rounds += other.transfer_rounds;
        self.bytes_moved += other.bytes_moved;
        self.sim_transfer_seconds += other.sim_transfer_seconds;
        self.sim_compute_seconds += other.sim_compute_seconds;
        self.batches += other.batches;
        if self.device_rows.len() < other.device_rows.len() {
            self.device_rows.resize(other.device_rows.len(), 0);
        }
        for (acc, r) in self.device_rows.iter_mut().zip(&other.device_rows) {
            *acc += r;
        }
    }

    pub fn total_rows(&self) -> u64 {
        self.device_rows.iter().sum()
    }
}

/// Charges one batch whose rows were split as `device_rows` on the simulated
/// device. Empty batches cost nothing.
pub fn account_batch(
    batching: Batching,
    cost: &CostModel,
    device_rows: &[usize],
    hidden: usize,
    embed: usize,
) -> SimReport {
    let rows: usize = device_rows.iter().sum();
    let mut report = SimReport {
        device_rows: device_rows.iter().map(|&r| r as u64).collect(),
        ..Default::default()
    };
    if rows == 0 {
        return report;
    }
    report.batches = 1;
    report.transfer_rounds = match batching {
        Batching::Query => rows as u64,
        Batching::Frame => device_rows.len() as u64,
    };
    report.bytes_moved = bytes_for_rows(rows as u64, hidden, embed);
    report.sim_transfer_seconds = cost.transfer_seconds(report.transfer_rounds, report.bytes_moved);
    let busiest = device_rows.iter().copied().max().unwrap_or(0) as f64;
    report.sim_compute_seconds = cost.gamma * busiest * flops_per_row(hidden, embed) as f64;
    report
}

/// Runs one batch and returns its outputs in row order with the simulated
/// costs.
pub fn execute(
    model: &ModelParams,
    batch: &FrameBatch,
    config: &BackendConfig,
    cost: &CostModel,
) -> Result<(Vec<HistoryVector>, SimReport)> {
    config.validate()?;
    match config.kind {
        BackendKind::Cpu => {
            let outputs = gru_batch(model, batch, config.math)?;
            let report = SimReport {
                device_rows: vec![batch.rows() as u64],
                batches: u64::from(!batch.is_empty()),
                ..Default::default()
            };
            Ok((outputs, report))
        }
        BackendKind::Sim => {
            let chunks = split_batch(batch, config.devices)?;
            let mut outputs = Vec::with_capacity(batch.rows());
            for chunk in &chunks {
                outputs.extend(gru_batch(model, chunk, config.math)?);
            }
            let sizes: Vec<usize> = chunks.iter().map(FrameBatch::rows).collect();
            let report = account_batch(config.batching, cost, &sizes, batch.hidden(), batch.embed());
            Ok((outputs, report))
        }
    }
}
