use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnnlm_core::experiment::{config_matrix, render_table};
use rnnlm_core::{
    gen_workload, generate_model, gru_batch, gru_step, load_model, oracle_rescore,
    pack_frame_batch, quantize, run_experiment, save_model, BackendConfig, Batching, CostModel,
    Error, MathMode, ModelDims, PrecisionMode, Session, SessionConfig, Workload, WorkloadParams,
};

fn dims() -> ModelDims {
    ModelDims::new(80, 10, 6, 300, 3)
}

fn params(seed: u64) -> WorkloadParams {
    WorkloadParams {
        frames: 40,
        queries_per_frame: 20,
        vocab_size: 80,
        seed,
        ..Default::default()
    }
}

#[test]
fn model_file_round_trip() {
    let model = generate_model(dims(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rnlm");
    save_model(&model, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), dims().file_len());
    assert_eq!(load_model(&path).unwrap(), model);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::Truncated { .. })));
}

#[test]
fn workload_file_round_trip() {
    let w = gen_workload(&params(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.jsonl");
    w.save(&path).unwrap();
    assert_eq!(Workload::load(&path).unwrap(), w);
}

#[test]
fn configuration_invariance_against_oracle() {
    let model = generate_model(dims(), 9).unwrap();
    for seed in 0..3 {
        let w = gen_workload(&params(seed)).unwrap();
        let golden = oracle_rescore(&model, &w).unwrap();
        for batching in [Batching::Query, Batching::Frame] {
            for devices in 1..=4 {
                for hidden_cache in [true, false] {
                    let cfg = SessionConfig {
                        hidden_cache,
                        backend: BackendConfig::sim(batching, devices),
                        ..Default::default()
                    };
                    let (got, _) = Session::new(&model, cfg).unwrap().rescore_workload(&w).unwrap();
                    assert_eq!(got, golden, "{batching}/d{devices}/cache={hidden_cache}");
                }
            }
        }
        let (cpu, _) = Session::new(&model, SessionConfig { backend: BackendConfig::cpu(), ..Default::default() })
            .unwrap()
            .rescore_workload(&w)
            .unwrap();
        assert_eq!(cpu, golden);
    }
}

#[test]
fn intra_frame_dependencies_match_oracle() {
    let model = generate_model(dims(), 2).unwrap();
    // later queries extend histories created earlier in the same frame
    let w = Workload {
        vocab_size: 80,
        frames: vec![vec![(0, 5), (1, 6), (2, 7), (0, 5), (4, 9)], vec![(3, 1), (6, 2)]],
    };
    let golden = oracle_rescore(&model, &w).unwrap();
    let cfg = SessionConfig { backend: BackendConfig::sim(Batching::Frame, 2), ..Default::default() };
    let mut s = Session::new(&model, cfg).unwrap();
    let (got, m) = s.rescore_workload(&w).unwrap();
    assert_eq!(got, golden);
    assert_eq!(m.query_cache_hits, 1);
    // three dependency waves in frame 0, two in frame 1, two devices each
    assert_eq!(m.transfer_rounds, 2 * 5);
}

#[test]
fn total_repetition_gives_known_hit_ratio() {
    let model = generate_model(dims(), 1).unwrap();
    let w = gen_workload(&WorkloadParams { repeat_prob: 1.0, ..params(5) }).unwrap();
    let m = Session::new(&model, SessionConfig::default()).unwrap().rescore_utterance(&w).unwrap();
    let fq = w.total_queries() as u64;
    assert_eq!(m.query_cache_hits, fq - 1);
    assert_eq!(m.unique_gru_computations, 1);
}

#[test]
fn near_chain_has_no_reuse() {
    let model = generate_model(dims(), 1).unwrap();
    let w = gen_workload(&WorkloadParams {
        frames: 200,
        queries_per_frame: 1,
        zipf_exponent: 8.0,
        rebranch_prob: 0.0,
        repeat_prob: 0.0,
        ..params(6)
    })
    .unwrap();
    let m = Session::new(&model, SessionConfig::default()).unwrap().rescore_utterance(&w).unwrap();
    assert_eq!(m.query_cache_hits, 0);
    assert_eq!(m.hidden_lookups, 200);
    // a long run of one word settles on a bitwise fixed point, which the
    // hidden cache may then reuse
    assert!(m.unique_gru_computations <= 200);
    let uncached = SessionConfig { hidden_cache: false, ..Default::default() };
    let m = Session::new(&model, uncached).unwrap().rescore_utterance(&w).unwrap();
    assert_eq!(m.unique_gru_computations, 200);
}

#[test]
fn replay_in_same_session_is_free() {
    let model = generate_model(dims(), 1).unwrap();
    let w = gen_workload(&WorkloadParams { repeat_prob: 0.0, ..params(7) }).unwrap();
    let mut s = Session::new(&model, SessionConfig::default()).unwrap();
    let (first, _) = s.rescore_workload(&w).unwrap();
    let before = s.next_id();
    let (second, m) = s.rescore_workload(&w).unwrap();
    assert_eq!(m.query_cache_hits, m.total_queries);
    assert_eq!(m.unique_gru_computations, 0);
    assert_eq!(first, second);
    assert_eq!(s.next_id(), before + w.total_queries() as u32);
}

#[test]
fn sign_never_exceeds_off_on_small_model() {
    let model = generate_model(ModelDims::new(16, 8, 8, 64, 3), 2).unwrap();
    let w = gen_workload(&WorkloadParams { vocab_size: 16, frames: 50, queries_per_frame: 40, ..params(8) }).unwrap();
    let run = |p| Session::new(&model, SessionConfig::with_precision(p)).unwrap().rescore_utterance(&w).unwrap();
    let off = run(PrecisionMode::Off);
    let sign = run(PrecisionMode::Sign);
    assert!(sign.unique_gru_computations <= off.unique_gru_computations);
    assert!(sign.unique_gru_computations <= 256 * 16);
}

#[test]
fn sign_keys_pigeonhole() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut keys = HashSet::new();
    for _ in 0..10_000 {
        let h: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = rng.random_range(0..4u32);
        keys.insert(quantize(&h, PrecisionMode::Sign, w).unwrap());
    }
    assert!(keys.len() <= 1024);
}

#[test]
fn batch_equals_sequential_64_rows() {
    let model = generate_model(ModelDims::new(20, 16, 16, 64, 2), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..64)
        .map(|_| {
            (
                (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let batch = pack_frame_batch(16, 16, rows.iter().map(|(h, x)| (&h[..], &x[..], 0))).unwrap();
    let out = gru_batch(&model, &batch, MathMode::Reference).unwrap();
    let fused = gru_batch(&model, &batch, MathMode::Fused).unwrap();
    for (i, (h, x)) in rows.iter().enumerate() {
        assert_eq!(out[i], gru_step(&model, x, h).unwrap());
        for (a, b) in fused[i].iter().zip(&out[i]) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-12));
        }
    }
}

#[test]
fn experiment_reports_rates_and_table() {
    let model = generate_model(ModelDims::new(16, 8, 4, 64, 3), 3).unwrap();
    let w = gen_workload(&WorkloadParams { vocab_size: 16, ..params(9) }).unwrap();
    let configs = config_matrix(
        &[PrecisionMode::Off, PrecisionMode::Round(1), PrecisionMode::Sign],
        &[Batching::Query, Batching::Frame],
        &[1, 2],
    );
    assert_eq!(configs.len(), 12);
    let report = run_experiment(&model, &w, &configs, CostModel::new(1e-5, 1e-9, 1e-9).unwrap()).unwrap();
    assert_eq!(report.reports.len(), 12);
    for r in &report.reports {
        r.check().unwrap();
        let rate = r.metrics.redundancy_rate.unwrap();
        assert!((0.0..=100.0).contains(&rate));
        if r.precision == PrecisionMode::Off {
            assert_eq!(rate, 0.0);
        }
    }
    let table = render_table(&report);
    assert!(table.contains("sign"));
    assert!(table.lines().count() >= 13);
}

#[test]
fn results_file_round_trip_is_bitwise() {
    let model = generate_model(dims(), 6).unwrap();
    let w = gen_workload(&params(10)).unwrap();
    let results = oracle_rescore(&model, &w).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    rnnlm_core::workload::save_results(&results, &path).unwrap();
    let back = rnnlm_core::workload::load_results(&path).unwrap();
    for (a, b) in results.iter().flatten().zip(back.iter().flatten()) {
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a.child, b.child);
    }
}
