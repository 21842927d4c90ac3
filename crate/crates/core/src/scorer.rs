//! Unnormalized output scores: NCE inner product plus a hashed maximum-entropy
//! n-gram bypass. [`exact_log_prob`] is the full-softmax reference and is only
//! meant for small vocabularies.

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Multiplier of the n-gram hash recurrence.
pub const HASH_MULTIPLIER: u64 = 237_967;

/// Largest vocabulary [`exact_log_prob`] will enumerate.
pub const EXACT_SOFTMAX_MAX_VOCAB: u32 = 10_000;

/// Up to N-1 preceding words, most recent last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct WordContext {
    words: Vec<u32>,
}

impl WordContext {
    /// Keeps only the last `order - 1` words.
    pub fn new(words: &[u32], order: u32) -> Self {
        let keep = order.saturating_sub(1) as usize;
        let start = words.len().saturating_sub(keep);
        WordContext {
            words: words[start..].to_vec(),
        }
    }

    /// Context of the utterance-initial history.
    pub fn sentence_start(order: u32) -> Self {
        WordContext::new(&[crate::model::SENTENCE_START], order)
    }

    /// Context after appending `word`, truncated to `order - 1` words.
    pub fn extend(&self, word: u32, order: u32) -> Self {
        let mut words = self.words.clone();
        words.push(word);
        WordContext::new(&words, order)
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// `theta[word] . h + b_nce[word]`.
pub fn nce_score(model: &ModelParams, h: &[f64], word: u32) -> Result<f64> {
    model.check_word(word)?;
    if h.len() != model.dims.hidden() {
        return Err(Error::Dimension(format!(
            "state length {} does not match hidden size {}",
            h.len(),
            model.dims.hidden()
        )));
    }
    let mut acc = 0.0f64;
    for (&w, &hi) in model.nce_weights.row(word as usize).iter().zip(h) {
        acc += f64::from(w) * hi;
    }
    Ok(acc + f64::from(model.nce_bias[word as usize]))
}

/// Hash-table slots of all n-gram orders 1..=min(N, |context|+1).
///
/// Order 1 is `word mod M`; each higher order folds in the next older
/// context word: `idx_k = (idx_{k-1} * 237967 + ctx + 1) mod M`.
pub fn maxent_feature_indices(context: &[u32], word: u32, order: u32, table_size: u32) -> Result<Vec<u32>> {
    if table_size == 0 {
        return Err(Error::Parameter("maxent table size must be positive".into()));
    }
    if order == 0 {
        return Err(Error::Parameter("maxent order must be at least 1".into()));
    }
    let m = u64::from(table_size);
    let orders = (order as usize).min(context.len() + 1);
    let mut out = Vec::with_capacity(orders);
    let mut idx = u64::from(word) % m;
    out.push(idx as u32);
    for prev in context.iter().rev().take(orders - 1) {
        idx = (idx * HASH_MULTIPLIER + u64::from(*prev) + 1) % m;
        out.push(idx as u32);
    }
    Ok(out)
}

pub fn maxent_score(model: &ModelParams, context: &WordContext, word: u32) -> Result<f64> {
    model.check_word(word)?;
    if let Some(&bad) = context.words().iter().find(|&&w| w >= model.dims.vocab_size) {
        return Err(Error::Vocabulary {
            word: bad,
            vocab: model.dims.vocab_size,
        });
    }
    let indices = maxent_feature_indices(
        context.words(),
        word,
        model.dims.maxent_order,
        model.dims.maxent_table_size,
    )?;
    Ok(indices
        .iter()
        .fold(0.0f64, |acc, &i| acc + f64::from(model.maxent_table[i as usize])))
}

pub fn combined_score(model: &ModelParams, h: &[f64], context: &WordContext, word: u32) -> Result<f64> {
    Ok(nce_score(model, h, word)? + maxent_score(model, context, word)?)
}

/// Log-probabilities of every word under the full softmax of combined scores.
pub fn exact_log_probs(model: &ModelParams, h: &[f64], context: &WordContext) -> Result<Vec<f64>> {
    let vocab = model.dims.vocab_size;
    if vocab > EXACT_SOFTMAX_MAX_VOCAB {
        return Err(Error::Parameter(format!(
            "exact softmax limited to V <= {EXACT_SOFTMAX_MAX_VOCAB}, model has V = {vocab}"
        )));
    }
    let scores = (0..vocab)
        .map(|v| combined_score(model, h, context, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_softmax(&scores))
}

pub fn exact_log_prob(model: &ModelParams, h: &[f64], context: &WordContext, word: u32) -> Result<f64> {
    model.check_word(word)?;
    Ok(exact_log_probs(model, h, context)?[word as usize])
}

/// Max-subtracted log-softmax.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + sum.ln();
    scores.iter().map(|s| (s - log_z).min(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_model, ModelDims};

    #[test]
    fn nce_hand_value() {
        let mut model = ModelParams::zeros(ModelDims::new(3, 2, 1, 4, 2)).unwrap();
        model.nce_weights.row_mut(1).copy_from_slice(&[0.5, -0.3]);
        model.nce_bias[1] = 0.1;
        let s = nce_score(&model, &[1.0, 0.0], 1).unwrap();
        assert!((s - 0.6).abs() < 1e-7);
        assert_eq!(nce_score(&model, &[0.0, 0.0], 1).unwrap(), f64::from(0.1f32));
        assert!(matches!(nce_score(&model, &[0.0, 0.0], 3), Err(Error::Vocabulary { .. })));
    }

    #[test]
    fn hash_indices_hand_value() {
        assert_eq!(maxent_feature_indices(&[7], 42, 3, 1000).unwrap(), vec![42, 622]);
        assert_eq!(maxent_feature_indices(&[], 1042, 4, 1000).unwrap(), vec![42]);
        // most recent context word is folded in first
        let idx = maxent_feature_indices(&[5, 7], 42, 3, 1000).unwrap();
        assert_eq!(idx[..2], [42, 622]);
        assert_eq!(idx[2], ((622u64 * 237_967 + 6) % 1000) as u32);
        assert_eq!(maxent_feature_indices(&[5, 7], 42, 1, 1000).unwrap(), vec![42]);
    }

    #[test]
    fn maxent_hand_value() {
        let mut model = ModelParams::zeros(ModelDims::new(50, 2, 2, 1000, 3)).unwrap();
        model.maxent_table[42] = 0.2;
        model.maxent_table[622] = 0.3;
        let ctx = WordContext::new(&[7], 3);
        let s = maxent_score(&model, &ctx, 42).unwrap();
        assert_eq!(s, f64::from(0.2f32) + f64::from(0.3f32));
        assert!((s - 0.5).abs() < 1e-7);
    }

    #[test]
    fn maxent_uses_only_recent_context() {
        let model = generate_model(ModelDims::new(30, 2, 2, 97, 3), 4).unwrap();
        let a = maxent_score(&model, &WordContext::new(&[3, 8, 9], 4), 5).unwrap();
        let b = maxent_score(&model, &WordContext::new(&[17, 8, 9], 4), 5).unwrap();
        assert_eq!(a, b);
        let c = maxent_score(&model, &WordContext::new(&[3, 17, 9], 4), 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn context_truncation() {
        let ctx = WordContext::sentence_start(3).extend(4, 3).extend(5, 3);
        assert_eq!(ctx.words(), &[4, 5]);
        assert!(WordContext::sentence_start(1).is_empty());
    }

    #[test]
    fn softmax_hand_cases() {
        let lp = log_softmax(&[0.0, 0.0, 2f64.ln()]);
        let p: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
        assert!((p[2] - 0.5).abs() < 1e-12);

        let model = ModelParams::zeros(ModelDims::new(2, 2, 2, 4, 2)).unwrap();
        let ctx = WordContext::sentence_start(2);
        for w in 0..2 {
            let lp = exact_log_prob(&model, &[0.1, 0.2], &ctx, w).unwrap();
            assert!((lp - 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_scores() {
        let lp = log_softmax(&[1000.0, 1000.0]);
        assert!((lp[0] - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_softmax_refuses_huge_vocab() {
        let model = ModelParams::zeros(ModelDims::new(10_001, 1, 1, 1, 1)).unwrap();
        assert!(matches!(
            exact_log_probs(&model, &[0.0], &WordContext::default()),
            Err(Error::Parameter(_))
        ));
    }
}
