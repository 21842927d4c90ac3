//! Per-utterance rescoring session.
//!
//! Each frame goes through the same pipeline:
//!
//! 1. every query is deduplicated against the query cache, in stream order;
//! 2. each miss quantizes its parent state with the query word and consults
//!    the hidden cache;
//! 3. rows that still need a GRU step are packed into one batch and executed
//!    on the backend, and their outputs are inserted into the hidden cache;
//! 4. each miss is scored from its parent history and its child record is
//!    completed;
//! 5. scores are written back to the query cache.
//!
//! A query may name a parent created earlier in the same frame. Such queries
//! cannot share a batch with their parent, so steps 2-4 run in dependency
//! waves; a frame without intra-frame dependencies is a single wave.
//!
//! History ids are dense: the j-th query of the utterance owns id j + 1. A
//! query-cache hit still consumes its id, which then aliases the original
//! child.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{execute, BackendConfig, CostModel, FrameBatch, SimReport};
use crate::cache::{
    quantize, redundancy_rate, CacheStats, Dedup, HiddenCache, HiddenLookup, PrecisionMode,
    QuantizedKey, QueryCache,
};
use crate::error::{Error, Result};
use crate::gru::HistoryVector;
use crate::model::ModelParams;
use crate::scorer::{combined_score, WordContext};
use crate::workload::Workload;

pub type HistoryId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    /// `None` until the GRU output for this history is available.
    pub state: Option<HistoryVector>,
    pub context: WordContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub score: f64,
    pub child: HistoryId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub precision: PrecisionMode,
    /// With the hidden cache disabled every query-cache miss computes a row.
    pub hidden_cache: bool,
    pub backend: BackendConfig,
    pub cost: CostModel,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            precision: PrecisionMode::Off,
            hidden_cache: true,
            backend: BackendConfig::default(),
            cost: CostModel::default(),
        }
    }
}

impl SessionConfig {
    pub fn with_precision(precision: PrecisionMode) -> Self {
        SessionConfig {
            precision,
            ..Default::default()
        }
    }
}

/// Counters of one `rescore_utterance` call, in the shape of the redundancy
/// and transfer tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: u64,
    pub total_queries: u64,
    pub query_cache_hits: u64,
    pub hidden_lookups: u64,
    pub hidden_hits: u64,
    pub unique_gru_computations: u64,
    /// Percentage against `baseline_count`, when one was supplied.
    pub redundancy_rate: Option<f64>,
    pub baseline_count: Option<u64>,
    pub batches: u64,
    pub transfer_rounds: u64,
    pub bytes_moved: u64,
    pub sim_transfer_seconds: f64,
    pub sim_compute_seconds: f64,
    pub device_rows: Vec<u64>,
    pub wall_seconds: f64,
}

impl Metrics {
    pub fn stats(&self) -> CacheStats {
        CacheStats {
            total_queries: self.total_queries,
            query_cache_hits: self.query_cache_hits,
            hidden_lookups: self.hidden_lookups,
            hidden_hits: self.hidden_hits,
            unique_gru_computations: self.unique_gru_computations,
        }
    }

    pub fn set_baseline(&mut self, baseline_count: u64) -> Result<()> {
        let rate = redundancy_rate(baseline_count, self.unique_gru_computations)?;
        self.baseline_count = Some(baseline_count);
        self.redundancy_rate = Some(rate.raw);
        Ok(())
    }
}

struct Miss {
    parent: HistoryId,
    word: u32,
    child: HistoryId,
}

pub struct Session<'m> {
    model: &'m ModelParams,
    config: SessionConfig,
    /// Canonical id of every allocated id.
    canonical: Vec<HistoryId>,
    /// Records of canonical ids; aliases hold `None`.
    records: Vec<Option<HistoryRecord>>,
    query_cache: QueryCache,
    hidden_cache: HiddenCache,
    stats: CacheStats,
    report: SimReport,
    frames: u64,
}

pub fn new_session(model: &ModelParams, config: SessionConfig) -> Result<Session<'_>> {
    Session::new(model, config)
}

impl<'m> Session<'m> {
    pub fn new(model: &'m ModelParams, config: SessionConfig) -> Result<Self> {
        config.backend.validate()?;
        config.cost.validate()?;
        let mut session = Session {
            model,
            config,
            canonical: Vec::new(),
            records: Vec::new(),
            query_cache: QueryCache::new(),
            hidden_cache: HiddenCache::new(),
            stats: CacheStats::default(),
            report: SimReport::default(),
            frames: 0,
        };
        session.reset();
        Ok(session)
    }

    /// Starts a new utterance: history 0 only, empty caches, zero counters.
    pub fn reset(&mut self) {
        let order = self.model.dims.maxent_order;
        self.canonical = vec![0];
        self.records = vec![Some(HistoryRecord {
            state: Some(vec![0.0; self.model.dims.hidden()]),
            context: WordContext::sentence_start(order),
        })];
        self.query_cache.clear();
        self.hidden_cache.clear();
        self.stats = CacheStats::default();
        self.report = SimReport::default();
        self.frames = 0;
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelParams {
        self.model
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn sim_report(&self) -> &SimReport {
        &self.report
    }

    pub fn next_id(&self) -> HistoryId {
        self.canonical.len() as HistoryId
    }

    pub fn canonical_id(&self, id: HistoryId) -> Result<HistoryId> {
        self.canonical
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Protocol(format!("unknown history id {id}")))
    }

    /// Record behind `id`, following aliases.
    pub fn history(&self, id: HistoryId) -> Result<&HistoryRecord> {
        let canon = self.canonical_id(id)?;
        Ok(self.records[canon as usize]
            .as_ref()
            .expect("canonical ids always hold a record"))
    }

    fn history_mut(&mut self, canon: HistoryId) -> &mut HistoryRecord {
        self.records[canon as usize]
            .as_mut()
            .expect("canonical ids always hold a record")
    }

    /// Registers the next query: allocates its id, and either aliases it to an
    /// earlier identical query or reserves the key for computation.
    pub fn dedup_query(&mut self, hist: HistoryId, word: u32) -> Result<Dedup> {
        self.model.check_word(word)?;
        let parent = self.canonical_id(hist)?;
        let id = self.next_id();
        self.stats.total_queries += 1;
        let outcome = self.query_cache.probe(parent, word, id);
        match outcome {
            Dedup::Hit(entry) => {
                self.stats.query_cache_hits += 1;
                self.canonical.push(entry.child);
                self.records.push(None);
            }
            Dedup::Miss => {
                let context = self
                    .history(parent)?
                    .context
                    .extend(word, self.model.dims.maxent_order);
                self.canonical.push(id);
                self.records.push(Some(HistoryRecord {
                    state: None,
                    context,
                }));
            }
        }
        Ok(outcome)
    }

    /// Hidden-cache lookup with statistics. A `Pending` result obliges the
    /// caller to call [`Session::hidden_insert`] once for the key.
    pub fn hidden_lookup(&mut self, key: &QuantizedKey) -> HiddenLookup {
        self.stats.hidden_lookups += 1;
        let outcome = self.hidden_cache.lookup(key);
        match outcome {
            HiddenLookup::Pending => self.stats.unique_gru_computations += 1,
            HiddenLookup::Hit(_) | HiddenLookup::InFlight => self.stats.hidden_hits += 1,
        }
        outcome
    }

    pub fn hidden_insert(&mut self, key: &QuantizedKey, state: HistoryVector) -> Result<()> {
        self.hidden_cache.insert(key, state)
    }

    fn validate_frame(&self, queries: &[(HistoryId, u32)]) -> Result<()> {
        let base = self.next_id() as u64;
        for (i, &(hist, word)) in queries.iter().enumerate() {
            if u64::from(hist) >= base + i as u64 {
                return Err(Error::Protocol(format!(
                    "query {i} references history {hist}, which does not exist yet"
                )));
            }
            self.model.check_word(word)?;
        }
        Ok(())
    }

    /// Rescores one frame; results are in input order.
    pub fn rescore_frame(&mut self, queries: &[(HistoryId, u32)]) -> Result<Vec<QueryResult>> {
        self.validate_frame(queries)?;
        self.frames += 1;

        let mut lookups: Vec<(HistoryId, u32)> = Vec::with_capacity(queries.len());
        let mut misses = Vec::new();
        for &(hist, word) in queries {
            let parent = self.canonical_id(hist)?;
            let child = self.next_id();
            lookups.push((parent, word));
            if let Dedup::Miss = self.dedup_query(hist, word)? {
                misses.push(Miss {
                    parent,
                    word,
                    child,
                });
            }
        }

        while !misses.is_empty() {
            let (ready, waiting): (Vec<Miss>, Vec<Miss>) = misses
                .into_iter()
                .partition(|m| self.history(m.parent).map(|r| r.state.is_some()).unwrap_or(false));
            if ready.is_empty() {
                return Err(Error::Protocol(
                    "unresolvable history dependency within frame".into(),
                ));
            }
            self.run_wave(&ready)?;
            misses = waiting;
        }

        lookups
            .iter()
            .enumerate()
            .map(|(i, &(parent, word))| {
                let entry = self
                    .query_cache
                    .get(parent, word)
                    .ok_or_else(|| Error::Protocol(format!("query {i} lost its cache entry")))?;
                let score = entry
                    .score
                    .ok_or_else(|| Error::Protocol(format!("query {i} was never scored")))?;
                Ok(QueryResult {
                    score,
                    child: entry.child,
                })
            })
            .collect()
    }

    /// Steps 2-5 for misses whose parent states are all available.
    fn run_wave(&mut self, ready: &[Miss]) -> Result<()> {
        let model = self.model;
        let (hidden, embed) = (model.dims.hidden(), model.dims.embed());
        let mut batch = FrameBatch::new(hidden, embed);
        // batch row computing each miss's child state, or the state itself on a hit
        let mut source: Vec<Option<usize>> = vec![None; ready.len()];
        let mut row_keys: Vec<Option<QuantizedKey>> = Vec::new();
        let mut in_flight: HashMap<QuantizedKey, usize> = HashMap::new();

        for (i, miss) in ready.iter().enumerate() {
            let parent_state = self
                .history(miss.parent)?
                .state
                .clone()
                .expect("wave members have resolved parents");
            let x: Vec<f64> = model.embedding(miss.word)?.iter().map(|&v| f64::from(v)).collect();

            if !self.config.hidden_cache {
                self.stats.hidden_lookups += 1;
                self.stats.unique_gru_computations += 1;
                source[i] = Some(batch.rows());
                row_keys.push(None);
                batch.push(&parent_state, &x, i as u64)?;
                continue;
            }

            let key = quantize(&parent_state, self.config.precision, miss.word)?;
            match self.hidden_lookup(&key) {
                HiddenLookup::Hit(state) => {
                    self.history_mut(miss.child).state = Some(state);
                }
                HiddenLookup::InFlight => {
                    let row = *in_flight.get(&key).ok_or_else(|| {
                        Error::Protocol("hidden-cache key in flight outside the current wave".into())
                    })?;
                    source[i] = Some(row);
                }
                HiddenLookup::Pending => {
                    let row = batch.rows();
                    in_flight.insert(key.clone(), row);
                    source[i] = Some(row);
                    row_keys.push(Some(key));
                    batch.push(&parent_state, &x, i as u64)?;
                }
            }
        }

        if !batch.is_empty() {
            let (outputs, report) = execute(model, &batch, &self.config.backend, &self.config.cost)?;
            self.report.merge(&report);
            for (i, miss) in ready.iter().enumerate() {
                if let Some(row) = source[i] {
                    self.history_mut(miss.child).state = Some(outputs[row].clone());
                }
            }
            for (key, output) in row_keys.iter().zip(outputs) {
                if let Some(key) = key {
                    self.hidden_insert(key, output)?;
                }
            }
        }

        for miss in ready {
            let parent = self.history(miss.parent)?;
            let state = parent.state.as_ref().expect("resolved parent");
            let score = combined_score(model, state, &parent.context, miss.word)?;
            self.query_cache.fill(miss.parent, miss.word, score)?;
        }
        Ok(())
    }

    /// Rescores a whole workload, returning per-frame results and the
    /// counters accumulated by this call.
    pub fn rescore_workload(&mut self, workload: &Workload) -> Result<(Vec<Vec<QueryResult>>, Metrics)> {
        if workload.vocab_size > self.model.dims.vocab_size {
            return Err(Error::Workload(format!(
                "workload vocabulary {} exceeds model vocabulary {}",
                workload.vocab_size, self.model.dims.vocab_size
            )));
        }
        let before_stats = self.stats;
        let before_report = self.report.clone();
        let before_frames = self.frames;
        let start = Instant::now();

        let mut results = Vec::with_capacity(workload.frames.len());
        for (t, frame) in workload.frames.iter().enumerate() {
            results.push(self.rescore_frame(frame).map_err(|e| e.in_frame(t))?);
        }

        let wall_seconds = start.elapsed().as_secs_f64();
        let s = self.stats;
        let r = &self.report;
        let device_rows = r
            .device_rows
            .iter()
            .enumerate()
            .map(|(i, &n)| n - before_report.device_rows.get(i).copied().unwrap_or(0))
            .collect();
        let metrics = Metrics {
            frames: self.frames - before_frames,
            total_queries: s.total_queries - before_stats.total_queries,
            query_cache_hits: s.query_cache_hits - before_stats.query_cache_hits,
            hidden_lookups: s.hidden_lookups - before_stats.hidden_lookups,
            hidden_hits: s.hidden_hits - before_stats.hidden_hits,
            unique_gru_computations: s.unique_gru_computations - before_stats.unique_gru_computations,
            redundancy_rate: None,
            baseline_count: None,
            batches: r.batches - before_report.batches,
            transfer_rounds: r.transfer_rounds - before_report.transfer_rounds,
            bytes_moved: r.bytes_moved - before_report.bytes_moved,
            sim_transfer_seconds: r.sim_transfer_seconds - before_report.sim_transfer_seconds,
            sim_compute_seconds: r.sim_compute_seconds - before_report.sim_compute_seconds,
            device_rows,
            wall_seconds,
        };
        Ok((results, metrics))
    }

    pub fn rescore_utterance(&mut self, workload: &Workload) -> Result<Metrics> {
        self.rescore_workload(workload).map(|(_, m)| m)
    }
}
