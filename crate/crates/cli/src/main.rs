//! `rnnlm-bench`: generate models and workloads, rescore them under any cache
//! and backend configuration, sweep configurations and calibrate the transfer
//! cost model.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rnnlm_core::experiment::{config_matrix, render_table};
use rnnlm_core::workload::save_results;
use rnnlm_core::{
    bytes_for_rows, calibrate_cost, gen_workload, generate_model, load_model, oracle_rescore,
    run_experiment, save_model, BackendConfig, BackendKind, Batching, CostModel, Error,
    ExperimentConfig, MathMode, MetricsReport, ModelDims, Observation, PrecisionMode, Session,
    SessionConfig, Workload, WorkloadParams,
};

#[derive(Parser)]
#[command(name = "rnnlm-bench", version, about = "Cached RNNLM lattice rescoring harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random model file.
    GenModel(GenModelArgs),
    /// Write a seeded synthetic query workload (JSONL).
    GenWorkload(GenWorkloadArgs),
    /// Score a workload with the cache-free reference.
    Oracle(OracleArgs),
    /// Score a workload with the cached engine and report metrics.
    Rescore(RescoreArgs),
    /// Run a matrix of configurations over one workload.
    Experiment(ExperimentArgs),
    /// Fit latency and bandwidth from two transfer observations.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long, default_value_t = 500)]
    vocab: u32,
    #[arg(long, default_value_t = 32)]
    hidden: u32,
    #[arg(long, default_value_t = 16)]
    embed: u32,
    #[arg(long, default_value_t = 4096)]
    maxent_table: u32,
    #[arg(long, default_value_t = 4)]
    maxent_order: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenWorkloadArgs {
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 50)]
    queries: usize,
    #[arg(long, default_value_t = 500)]
    vocab: u32,
    #[arg(long, default_value_t = 1.0)]
    zipf: f64,
    #[arg(long, default_value_t = 0.3)]
    rebranch: f64,
    #[arg(long, default_value_t = 0.2)]
    repeat: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    workload: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Per-frame results (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RescoreArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value = "off")]
    precision: PrecisionMode,
    #[arg(long, default_value = "sim")]
    backend: BackendKind,
    #[arg(long, default_value = "frame")]
    batching: Batching,
    #[arg(long, default_value_t = 1)]
    devices: usize,
    /// JSON file with alpha, beta and gamma.
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Disable the hidden-state cache.
    #[arg(long)]
    no_hidden_cache: bool,
    /// Use fused multiply-add in the GRU (not bitwise equal to the reference).
    #[arg(long)]
    fused: bool,
    /// Fail unless every result matches the cache-free reference bitwise.
    #[arg(long)]
    verify: bool,
    /// Per-frame results (JSONL).
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Metrics JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_delimiter = ',', default_value = "off,round:2,sign")]
    precisions: Vec<PrecisionMode>,
    #[arg(long, value_delimiter = ',', default_value = "query,frame")]
    batchings: Vec<Batching>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    devices: Vec<usize>,
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Full report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 102_172)]
    rounds_a: u64,
    #[arg(long, default_value_t = 5.94)]
    seconds_a: f64,
    #[arg(long, default_value_t = 518)]
    rounds_b: u64,
    #[arg(long, default_value_t = 0.60)]
    seconds_b: f64,
    /// Bytes of observation A; defaults to `rows` GRU rows at the given sizes.
    #[arg(long)]
    bytes_a: Option<u64>,
    /// Bytes of observation B; defaults to the bytes of observation A.
    #[arg(long)]
    bytes_b: Option<u64>,
    #[arg(long, default_value_t = 102_172)]
    rows: u64,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 128)]
    embed: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { kind: e.kind(), message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenModel(a) => gen_model(a),
        Command::GenWorkload(a) => gen_workload_cmd(a),
        Command::Oracle(a) => oracle(a),
        Command::Rescore(a) => rescore(a),
        Command::Experiment(a) => experiment(a),
        Command::Calibrate(a) => calibrate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = serde_json::json!({ "error": { "kind": f.kind, "message": f.message } });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

fn write_json(value: &impl serde::Serialize, path: Option<&Path>) -> CliResult {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value).map_err(Error::from)?;
            writeln!(lock)?;
        }
    }
    Ok(())
}

fn load_cost(path: Option<&PathBuf>) -> Result<CostModel, Failure> {
    Ok(match path {
        Some(p) => CostModel::load(p)?,
        None => CostModel::default(),
    })
}

fn gen_model(a: GenModelArgs) -> CliResult {
    let dims = ModelDims::new(a.vocab, a.hidden, a.embed, a.maxent_table, a.maxent_order);
    let model = generate_model(dims, a.seed)?;
    save_model(&model, &a.out)?;
    Ok(())
}

fn gen_workload_cmd(a: GenWorkloadArgs) -> CliResult {
    let workload = gen_workload(&WorkloadParams {
        frames: a.frames,
        queries_per_frame: a.queries,
        vocab_size: a.vocab,
        zipf_exponent: a.zipf,
        rebranch_prob: a.rebranch,
        repeat_prob: a.repeat,
        seed: a.seed,
    })?;
    workload.save(&a.out)?;
    Ok(())
}

fn load_inputs(inputs: &Inputs) -> Result<(rnnlm_core::ModelParams, Workload), Failure> {
    let model = load_model(&inputs.model)?;
    let workload = Workload::load(&inputs.workload)?;
    if workload.vocab_size != model.dims.vocab_size {
        return Err(Error::Input(format!(
            "workload vocabulary {} does not match model vocabulary {}",
            workload.vocab_size, model.dims.vocab_size
        ))
        .into());
    }
    Ok((model, workload))
}

fn oracle(a: OracleArgs) -> CliResult {
    let (model, workload) = load_inputs(&a.inputs)?;
    let results = oracle_rescore(&model, &workload)?;
    save_results(&results, &a.out)?;
    Ok(())
}

fn rescore(a: RescoreArgs) -> CliResult {
    let (model, workload) = load_inputs(&a.inputs)?;
    let cost = load_cost(a.cost_model.as_ref())?;
    let backend = match a.backend {
        BackendKind::Cpu => BackendConfig::cpu(),
        BackendKind::Sim => BackendConfig::sim(a.batching, a.devices),
    };
    let backend = BackendConfig {
        math: if a.fused { MathMode::Fused } else { MathMode::Reference },
        ..backend
    };
    let config = SessionConfig {
        precision: a.precision,
        hidden_cache: !a.no_hidden_cache,
        backend,
        cost,
    };

    let start = Instant::now();
    let mut session = Session::new(&model, config)?;
    let (results, mut metrics) = session.rescore_workload(&workload)?;
    metrics.wall_seconds = start.elapsed().as_secs_f64();

    if config.hidden_cache {
        let baseline = if a.precision == PrecisionMode::Off {
            metrics.unique_gru_computations
        } else {
            let exact = SessionConfig { backend: BackendConfig::cpu(), ..Default::default() };
            Session::new(&model, exact)?.rescore_utterance(&workload)?.unique_gru_computations
        };
        if baseline > 0 {
            metrics.set_baseline(baseline)?;
        }
    }

    if a.verify {
        let golden = oracle_rescore(&model, &workload)?;
        let mismatch = results
            .iter()
            .zip(&golden)
            .enumerate()
            .flat_map(|(t, (got, want))| got.iter().zip(want).enumerate().map(move |(i, gw)| (t, i, gw)))
            .find(|(_, _, (g, w))| g.score.to_bits() != w.score.to_bits() || g.child != w.child);
        if let Some((t, i, (g, w))) = mismatch {
            return Err(Failure {
                kind: "mismatch",
                message: format!(
                    "frame {t} query {i}: engine ({}, {}) differs from reference ({}, {})",
                    g.score, g.child, w.score, w.child
                ),
            });
        }
    }

    if let Some(path) = &a.scores {
        save_results(&results, path)?;
    }
    let label = ExperimentConfig::new(a.precision, backend).label;
    let report = MetricsReport {
        label,
        precision: a.precision,
        hidden_cache: config.hidden_cache,
        backend,
        cost_model: cost,
        metrics,
    };
    report.check()?;
    write_json(&report, a.out.as_deref())
}

fn experiment(a: ExperimentArgs) -> CliResult {
    let (model, workload) = load_inputs(&a.inputs)?;
    let cost = load_cost(a.cost_model.as_ref())?;
    let configs = config_matrix(&a.precisions, &a.batchings, &a.devices);
    if configs.is_empty() {
        return Err(Error::Parameter("empty configuration matrix".into()).into());
    }
    let report = run_experiment(&model, &workload, &configs, cost)?;
    print!("{}", render_table(&report));
    if let Some(path) = &a.out {
        write_json(&report, Some(path))?;
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let bytes_a = a.bytes_a.unwrap_or_else(|| bytes_for_rows(a.rows, a.hidden, a.embed));
    let bytes_b = a.bytes_b.unwrap_or(bytes_a);
    let cost = calibrate_cost(
        Observation { rounds: a.rounds_a, bytes: bytes_a, seconds: a.seconds_a },
        Observation { rounds: a.rounds_b, bytes: bytes_b, seconds: a.seconds_b },
    )?;
    if let Some(path) = &a.out {
        cost.save(path)?;
    }
    write_json(&cost, None)
}
