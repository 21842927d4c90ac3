use proptest::collection::vec;
use proptest::prelude::*;

use rnnlm_core::backend::split_sizes;
use rnnlm_core::scorer::exact_log_probs;
use rnnlm_core::{
    generate_model, gru_batch, gru_step, maxent_feature_indices, pack_frame_batch, quantize,
    split_batch, BackendConfig, Batching, MathMode, ModelDims, ModelParams, PrecisionMode,
    Session, SessionConfig, WordContext, WorkloadParams, gen_workload,
};

fn unit_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-0.999_999f64..0.999_999, len)
}

fn embedding(model: &ModelParams, word: u32) -> Vec<f64> {
    model.embedding(word).unwrap().iter().map(|&v| f64::from(v)).collect()
}

fn precision() -> impl Strategy<Value = PrecisionMode> {
    prop_oneof![
        Just(PrecisionMode::Off),
        (1u8..=6).prop_map(PrecisionMode::Round),
        Just(PrecisionMode::Sign),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gru_states_stay_in_open_unit_interval(
        seed in any::<u64>(),
        words in vec(0u32..40, 100..160),
        h0 in unit_vec(8),
    ) {
        let model = generate_model(ModelDims::new(40, 8, 6, 64, 3), seed).unwrap();
        let mut h = h0;
        for w in words {
            h = gru_step(&model, &embedding(&model, w), &h).unwrap();
            prop_assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn batch_rows_are_independent_of_order(
        seed in any::<u64>(),
        rows in vec((unit_vec(6), unit_vec(4)), 1..24),
        rotate in 0usize..24,
    ) {
        let model = generate_model(ModelDims::new(10, 6, 4, 16, 2), seed).unwrap();
        let pack = |rs: &[(Vec<f64>, Vec<f64>)]| {
            pack_frame_batch(6, 4, rs.iter().enumerate().map(|(i, (h, x))| (&h[..], &x[..], i as u64))).unwrap()
        };
        let forward = gru_batch(&model, &pack(&rows), MathMode::Reference).unwrap();
        let k = rotate % rows.len();
        let mut rotated = rows.clone();
        rotated.rotate_left(k);
        let shuffled = gru_batch(&model, &pack(&rotated), MathMode::Reference).unwrap();
        for i in 0..rows.len() {
            let j = (i + rows.len() - k) % rows.len();
            prop_assert_eq!(&forward[i], &shuffled[j]);
            prop_assert_eq!(&forward[i], &gru_step(&model, &rows[i].1, &rows[i].0).unwrap());
        }
    }

    #[test]
    fn pack_unpack_round_trip(rows in vec((unit_vec(5), unit_vec(3), any::<u64>()), 0..20)) {
        let batch = pack_frame_batch(5, 3, rows.iter().map(|(h, x, t)| (&h[..], &x[..], *t))).unwrap();
        batch.check_layout().unwrap();
        prop_assert_eq!(batch.rows(), rows.len());
        prop_assert_eq!(batch.unpack(), rows);
    }

    #[test]
    fn split_concatenates_to_original(
        rows in vec((unit_vec(3), unit_vec(2)), 0..40),
        devices in 1usize..9,
    ) {
        let batch = pack_frame_batch(3, 2, rows.iter().enumerate().map(|(i, (h, x))| (&h[..], &x[..], i as u64))).unwrap();
        let parts = split_batch(&batch, devices).unwrap();
        prop_assert_eq!(parts.len(), devices);
        let sizes: Vec<usize> = parts.iter().map(|p| p.rows()).collect();
        prop_assert_eq!(&sizes, &split_sizes(rows.len(), devices).unwrap());
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let joined: Vec<_> = parts.iter().flat_map(|p| p.unpack()).collect();
        prop_assert_eq!(joined, batch.unpack());
    }

    #[test]
    fn maxent_indices_are_in_range(
        ctx in vec(0u32..1000, 0..8),
        word in 0u32..1000,
        order in 1u32..6,
        table in 1u32..5000,
    ) {
        let idx = maxent_feature_indices(&ctx, word, order, table).unwrap();
        prop_assert_eq!(idx.len(), (order as usize).min(ctx.len() + 1));
        prop_assert!(idx.iter().all(|&i| i < table));
        prop_assert_eq!(idx[0], word % table);
    }

    #[test]
    fn exact_softmax_normalizes(
        vocab in 2u32..300,
        seed in any::<u64>(),
        h in unit_vec(4),
        ctx in vec(0u32..2, 0..4),
    ) {
        let model = generate_model(ModelDims::new(vocab, 4, 2, 61, 3), seed).unwrap();
        let lp = exact_log_probs(&model, &h, &WordContext::new(&ctx, 3)).unwrap();
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn stats_identities_hold(
        seed in 0u64..1000,
        mode in precision(),
        hidden_cache in any::<bool>(),
        repeat in 0.0f64..0.6,
    ) {
        let model = generate_model(ModelDims::new(30, 6, 4, 64, 3), seed).unwrap();
        let workload = gen_workload(&WorkloadParams {
            frames: 12,
            queries_per_frame: 8,
            vocab_size: 30,
            repeat_prob: repeat,
            seed,
            ..Default::default()
        }).unwrap();
        let cfg = SessionConfig {
            precision: mode,
            hidden_cache,
            backend: BackendConfig::sim(Batching::Frame, 2),
            ..Default::default()
        };
        let mut s = Session::new(&model, cfg).unwrap();
        let m = s.rescore_utterance(&workload).unwrap();
        m.stats().check_identities().unwrap();
        prop_assert_eq!(m.total_queries, workload.total_queries() as u64);
        prop_assert_eq!(m.total_queries - m.query_cache_hits, m.hidden_lookups);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn quantize_is_idempotent(h in unit_vec(16), mode in precision(), word in 0u32..100) {
        let a = quantize(&h, mode, word).unwrap();
        let b = quantize(&h, mode, word).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn equal_exact_keys_imply_equal_coarse_keys(h in unit_vec(8), mode in precision()) {
        // precision=off is the finest partition
        let g = h.clone();
        prop_assert_eq!(quantize(&h, PrecisionMode::Off, 3).unwrap(), quantize(&g, PrecisionMode::Off, 3).unwrap());
        prop_assert_eq!(quantize(&h, mode, 3).unwrap(), quantize(&g, mode, 3).unwrap());
        prop_assert_ne!(quantize(&h, mode, 3).unwrap(), quantize(&h, mode, 4).unwrap());
    }
}
