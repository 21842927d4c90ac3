//! Query workloads and result files.
//!
//! A workload is line-delimited JSON. The first line is a header, then one
//! line per frame:
//!
//! ```text
//! {"V":500,"frames":2}
//! {"t":0,"q":[[0,17],[0,3]]}
//! {"t":1,"q":[[1,9]]}
//! ```
//!
//! Each query is `[history id, word id]`. History ids follow the dense-id
//! law: id 0 is the utterance start and the j-th query (0-based, stream
//! order) creates id j + 1, so a query may only name ids below its own
//! position + 1.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rescorer::{HistoryId, QueryResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workload {
    pub vocab_size: u32,
    pub frames: Vec<Vec<(HistoryId, u32)>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(rename = "V")]
    vocab: u32,
    frames: usize,
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: usize,
    q: Vec<(HistoryId, u32)>,
}

#[derive(Serialize, Deserialize)]
struct ResultLine {
    t: usize,
    r: Vec<(f64, HistoryId)>,
}

impl Workload {
    pub fn total_queries(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn non_empty_frames(&self) -> usize {
        self.frames.iter().filter(|f| !f.is_empty()).count()
    }

    /// Checks the dense-id law and word bounds.
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Workload(format!(
                "vocabulary size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        let mut position: u64 = 0;
        for (t, frame) in self.frames.iter().enumerate() {
            for &(hist, word) in frame {
                if u64::from(hist) > position {
                    return Err(Error::Workload(format!(
                        "frame {t}: query {position} references history {hist} before it exists"
                    )));
                }
                if word >= self.vocab_size {
                    return Err(Error::Workload(format!(
                        "frame {t}: word {word} outside vocabulary of {}",
                        self.vocab_size
                    )));
                }
                position += 1;
            }
        }
        if position >= u64::from(u32::MAX) {
            return Err(Error::Workload("too many queries for 32-bit history ids".into()));
        }
        Ok(())
    }

    /// Same queries twice; the second half references the same ids as the
    /// first, so every query in it repeats an earlier one verbatim.
    pub fn replayed(&self) -> Workload {
        let mut frames = self.frames.clone();
        frames.extend(self.frames.iter().cloned());
        Workload {
            vocab_size: self.vocab_size,
            frames,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer(
            &mut out,
            &Header {
                vocab: self.vocab_size,
                frames: self.frames.len(),
            },
        )?;
        out.write_all(b"\n")?;
        for (t, q) in self.frames.iter().enumerate() {
            serde_json::to_writer(&mut out, &FrameLine { t, q: q.clone() })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Workload> {
        let mut lines = input.lines().filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
        let header: Header = match lines.next() {
            Some(line) => serde_json::from_str(&line?)
                .map_err(|e| Error::Workload(format!("bad header line: {e}")))?,
            None => return Err(Error::Workload("empty workload file".into())),
        };
        let mut frames = Vec::with_capacity(header.frames);
        for line in lines {
            let frame: FrameLine = serde_json::from_str(&line?)
                .map_err(|e| Error::Workload(format!("bad frame line {}: {e}", frames.len())))?;
            if frame.t != frames.len() {
                return Err(Error::Workload(format!(
                    "frame index {} out of sequence, expected {}",
                    frame.t,
                    frames.len()
                )));
            }
            frames.push(frame.q);
        }
        if frames.len() != header.frames {
            return Err(Error::Workload(format!(
                "header announces {} frames, file has {}",
                header.frames,
                frames.len()
            )));
        }
        let workload = Workload {
            vocab_size: header.vocab,
            frames,
        };
        workload.validate()?;
        Ok(workload)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Workload> {
        Workload::read_jsonl(BufReader::new(File::open(path)?))
    }
}

/// Per-frame results as JSONL: `{"t":0,"r":[[score, child], ...]}`.
pub fn write_results<W: Write>(results: &[Vec<QueryResult>], mut out: W) -> Result<()> {
    for (t, frame) in results.iter().enumerate() {
        let line = ResultLine {
            t,
            r: frame.iter().map(|q| (q.score, q.child)).collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results<R: BufRead>(input: R) -> Result<Vec<Vec<QueryResult>>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine = serde_json::from_str(&line)?;
        if parsed.t != out.len() {
            return Err(Error::Workload(format!(
                "result frame {} out of sequence",
                parsed.t
            )));
        }
        out.push(
            parsed
                .r
                .into_iter()
                .map(|(score, child)| QueryResult { score, child })
                .collect(),
        );
    }
    Ok(out)
}

pub fn save_results(results: &[Vec<QueryResult>], path: impl AsRef<Path>) -> Result<()> {
    write_results(results, BufWriter::new(File::create(path)?))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<Vec<QueryResult>>> {
    read_results(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub frames: usize,
    pub queries_per_frame: usize,
    pub vocab_size: u32,
    pub zipf_exponent: f64,
    /// Probability of branching from a uniformly chosen live history instead
    /// of the most recent one.
    pub rebranch_prob: f64,
    /// Probability of re-emitting an earlier query verbatim.
    pub repeat_prob: f64,
    pub seed: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            frames: 100,
            queries_per_frame: 50,
            vocab_size: 500,
            zipf_exponent: 1.0,
            rebranch_prob: 0.3,
            repeat_prob: 0.2,
            seed: 0,
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.queries_per_frame == 0 {
            return Err(Error::Parameter("frames and queries per frame must be positive".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Parameter("vocabulary size must be at least 2".into()));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::Parameter(format!(
                "zipf exponent must be finite and non-negative, got {}",
                self.zipf_exponent
            )));
        }
        for (name, p) in [("rebranch", self.rebranch_prob), ("repeat", self.repeat_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!(
                    "{name} probability must be in [0, 1], got {p}"
                )));
            }
        }
        let total = self.frames as u64 * self.queries_per_frame as u64;
        if total >= u64::from(u32::MAX) {
            return Err(Error::Parameter("too many queries for 32-bit history ids".into()));
        }
        Ok(())
    }
}

/// Synthetic decoder query stream.
///
/// Parents are drawn from histories created in earlier frames (plus the
/// utterance start), so a frame never depends on its own outputs. Words are
/// Zipf-distributed over ids 1..V-1; id 0 is the sentence start and is never
/// queried.
pub fn gen_workload(params: &WorkloadParams) -> Result<Workload> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let zipf = Zipf::new(f64::from(params.vocab_size - 1), params.zipf_exponent)
        .map_err(|e| Error::Parameter(format!("zipf distribution: {e}")))?;

    let mut pool: Vec<HistoryId> = vec![0];
    let mut emitted: Vec<(HistoryId, u32)> = Vec::new();
    let mut next_id: HistoryId = 1;
    let mut frames = Vec::with_capacity(params.frames);

    for _ in 0..params.frames {
        let mut frame = Vec::with_capacity(params.queries_per_frame);
        let mut created = Vec::new();
        for _ in 0..params.queries_per_frame {
            let query = if !emitted.is_empty() && rng.random_bool(params.repeat_prob) {
                emitted[rng.random_range(0..emitted.len())]
            } else {
                let parent = if rng.random_bool(params.rebranch_prob) {
                    pool[rng.random_range(0..pool.len())]
                } else {
                    *pool.last().expect("pool starts non-empty")
                };
                let word = (zipf.sample(&mut rng) as u32).clamp(1, params.vocab_size - 1);
                created.push(next_id);
                (parent, word)
            };
            emitted.push(query);
            frame.push(query);
            next_id += 1;
        }
        pool.extend(created);
        frames.push(frame);
    }

    Ok(Workload {
        vocab_size: params.vocab_size,
        frames,
    })
}
