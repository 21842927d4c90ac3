//! Brute-force reference rescoring: no caches, no batching, one scalar GRU
//! step per query in stream order.
//!
//! Child ids follow the same naming rule as the engine (a repeated
//! (history, word) pair reports the id of its first occurrence), but every
//! score and every state is recomputed from scratch.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gru::{gru_step, HistoryVector};
use crate::model::ModelParams;
use crate::rescorer::{HistoryId, QueryResult};
use crate::scorer::{combined_score, WordContext};
use crate::workload::Workload;

pub fn oracle_rescore(model: &ModelParams, workload: &Workload) -> Result<Vec<Vec<QueryResult>>> {
    workload.validate()?;
    let order = model.dims.maxent_order;

    let mut states: Vec<HistoryVector> = vec![vec![0.0; model.dims.hidden()]];
    let mut contexts: Vec<WordContext> = vec![WordContext::sentence_start(order)];
    let mut canonical: Vec<HistoryId> = vec![0];
    let mut names: HashMap<(HistoryId, u32), HistoryId> = HashMap::new();

    let mut out = Vec::with_capacity(workload.frames.len());
    for (t, frame) in workload.frames.iter().enumerate() {
        let mut results = Vec::with_capacity(frame.len());
        for &(hist, word) in frame {
            let mut step = || -> Result<QueryResult> {
                let parent = hist as usize;
                if parent >= states.len() {
                    return Err(Error::Protocol(format!("unknown history id {hist}")));
                }
                let score = combined_score(model, &states[parent], &contexts[parent], word)?;
                let x: Vec<f64> = model.embedding(word)?.iter().map(|&v| f64::from(v)).collect();
                let child_state = gru_step(model, &x, &states[parent])?;
                let id = states.len() as HistoryId;
                let child = *names.entry((canonical[parent], word)).or_insert(id);
                let context = contexts[parent].extend(word, order);
                canonical.push(child);
                states.push(child_state);
                contexts.push(context);
                Ok(QueryResult { score, child })
            };
            results.push(step().map_err(|e| e.in_frame(t))?);
        }
        out.push(results);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_model, ModelDims};

    #[test]
    fn empty_workload() {
        let m = generate_model(ModelDims::new(10, 4, 4, 32, 3), 1).unwrap();
        let w = Workload { vocab_size: 10, frames: vec![] };
        assert!(oracle_rescore(&m, &w).unwrap().is_empty());
    }

    #[test]
    fn repeated_pair_reports_first_child() {
        let m = generate_model(ModelDims::new(10, 4, 4, 32, 3), 1).unwrap();
        let w = Workload {
            vocab_size: 10,
            frames: vec![vec![(0, 3), (0, 3)], vec![(2, 5), (1, 5)]],
        };
        let r = oracle_rescore(&m, &w).unwrap();
        assert_eq!(r[0][0], r[0][1]);
        assert_eq!(r[0][1].child, 1);
        // id 2 aliases id 1, so both later queries name the same history
        assert_eq!(r[1][0], r[1][1]);
        assert_eq!(r[1][0].child, 3);
    }
}
