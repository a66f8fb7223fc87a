//! Command-line front end. Every subcommand reads files, calls one library
//! routine and writes its result; no numerics live here.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prunemeta::analysis::{alignment_discrepancy, distribution_summary, emit_report, ReportFormat};
use prunemeta::io;
use prunemeta::metric::MetricKind;
use prunemeta::model::ModelConfig;
use prunemeta::objective::{collect_activation_stats, divergence, synthetic_calibration};
use prunemeta::search::{exhaustive_search, nsga2_search, random_search, RandomSearchParams, SearchParams};
use prunemeta::{init_model, prune_model, ActivationStats, EvalContext, SparsitySpec};

const METRIC_HELP: &str = "Pruning metric: magnitude | wanda | ria | optishear-l2-gsm8k | \
optishear-l3-gsm8k | custom:a,b,f1,f2 (coefficients: uniform, global_sum, frobenius, \
global_mean, row_wise, col_wise, relative; transforms: identity, square, sqrt, log1p, \
exp_neg, sigmoid, softmax; integer codes 0-6 also accepted)";

const SPARSITY_HELP: &str =
    "Sparsity: a decimal in [0,1] for unstructured pruning per output row (e.g. 0.5), or N:M for semi-structured (e.g. 2:4, 4:8)";

const AFTER_HELP: &str = "Metric presets: magnitude, wanda, ria, optishear-l2-gsm8k, optishear-l3-gsm8k, custom:a,b,f1,f2\n\
Sparsity grammar: a decimal in [0,1] (unstructured) or N:M (semi-structured, e.g. 2:4, 4:8)\n\
Exit codes: 0 success, 1 usage error, 2 data or validation error";

#[derive(Parser)]
#[command(name = "prunemeta", version, about = "Search pruning metrics for small decoder-only transformers", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize a seeded random model and write it as an OPSH weight file
    GenModel(GenModel),
    /// Write a synthetic calibration set (JSON lines of uniform token ids)
    GenCalib(GenCalib),
    /// Collect per-feature activation statistics over a calibration set
    Stats(StatsCmd),
    /// Prune a model with a metric and write the pruned weights
    Prune(PruneCmd),
    /// Print the divergence between dense and pruned final hidden states
    Eval(EvalCmd),
    /// Search the metric space with NSGA-II or random search
    Search(SearchCmd),
    /// Evaluate all 2401 metric configs
    Enumerate(EnumerateCmd),
    /// Weight/activation alignment report for a metric
    Align(AlignCmd),
    /// Per-layer weight L1 and activation norm summary
    Dist(DistCmd),
}

#[derive(Args)]
struct GenModel {
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    d_ff: usize,
    #[arg(long, default_value_t = 128)]
    vocab: usize,
    #[arg(long, default_value_t = 64)]
    max_seq: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output weight file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenCalib {
    #[arg(long, default_value_t = 128)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    seqs: usize,
    #[arg(long, default_value_t = 64)]
    len: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output JSON-lines file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Output stats JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneCmd {
    #[arg(long)]
    model: PathBuf,
    /// Activation stats JSON (not needed for magnitude)
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, help = METRIC_HELP)]
    metric: String,
    #[arg(long, help = SPARSITY_HELP)]
    sparsity: String,
    /// Output pruned weight file
    #[arg(long)]
    out: PathBuf,
    /// Optional mask file
    #[arg(long)]
    masks_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    dense: PathBuf,
    #[arg(long)]
    pruned: PathBuf,
    #[arg(long)]
    calib: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Nsga2,
    Random,
}

#[derive(Args)]
struct SearchCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value = "0.5", help = SPARSITY_HELP)]
    sparsity: String,
    #[arg(long, value_enum, default_value_t = Algo::Nsga2)]
    algo: Algo,
    /// Maximum number of distinct configs evaluated
    #[arg(long, default_value_t = 350)]
    budget: usize,
    /// Population size (even)
    #[arg(long, default_value_t = 24)]
    pop: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generations without improvement before stopping
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// SBX distribution index
    #[arg(long, default_value_t = 15.0)]
    eta_c: f64,
    /// Polynomial mutation distribution index
    #[arg(long, default_value_t = 20.0)]
    eta_m: f64,
    #[arg(long, default_value_t = 0.9)]
    p_crossover: f64,
    /// Per-gene mutation probability
    #[arg(long, default_value_t = 0.25)]
    p_mutation: f64,
    /// Random search only: never draw the same config twice
    #[arg(long)]
    without_replacement: bool,
    /// Worker threads; output does not depend on it
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output file: trial log as CSV if it ends in .csv, else full JSON result
    #[arg(long)]
    out: PathBuf,
    /// Additional CSV trial log
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value = "0.5", help = SPARSITY_HELP)]
    sparsity: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output table: CSV if it ends in .csv, else JSON
    #[arg(long)]
    out: PathBuf,
    /// Additional CSV table
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct AlignCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    #[arg(long, help = METRIC_HELP)]
    metric: String,
    /// Report file: CSV if it ends in .csv, else JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Report file: CSV if it ends in .csv, else JSON
    #[arg(long)]
    out: PathBuf,
}

type CmdResult = Result<(), prunemeta::Error>;

fn is_csv(path: &Path) -> bool {
    ReportFormat::from_path(path) == ReportFormat::Csv
}

fn load_stats_for(path: &Path, weights: &prunemeta::ModelWeights) -> Result<ActivationStats, prunemeta::Error> {
    let stats = io::read_stats(path)?;
    stats.validate_for(weights)?;
    Ok(stats)
}

fn gen_model(a: GenModel) -> CmdResult {
    let config = ModelConfig {
        vocab_size: a.vocab,
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        d_ff: a.d_ff,
        max_seq_len: a.max_seq,
    };
    let weights = init_model(config, a.seed)?;
    io::write_model(&a.out, &weights)?;
    println!("wrote model ({} layers, d_model {}) to {}", a.layers, a.d_model, a.out.display());
    Ok(())
}

fn gen_calib(a: GenCalib) -> CmdResult {
    if a.seqs == 0 || a.len == 0 || a.vocab == 0 {
        return Err(prunemeta::Error::EmptyCalibration);
    }
    let calib = synthetic_calibration(a.vocab, a.seqs, a.len, a.seed);
    io::write_calib(&a.out, &calib)?;
    println!("wrote {} sequences of {} tokens to {}", a.seqs, a.len, a.out.display());
    Ok(())
}

fn stats(a: StatsCmd) -> CmdResult {
    let weights = io::read_model(&a.model)?;
    let calib = io::read_calib(&a.calib)?;
    let stats = collect_activation_stats(&weights, &calib)?;
    io::write_stats(&a.out, &stats)?;
    println!("wrote stats for {} sub-modules over {} tokens", stats.len(), calib.token_count());
    Ok(())
}

fn prune(a: PruneCmd) -> CmdResult {
    let weights = io::read_model(&a.model)?;
    let kind: MetricKind = a.metric.parse()?;
    let spec: SparsitySpec = a.sparsity.parse()?;
    let stats = match (&a.stats, kind) {
        (Some(path), _) => load_stats_for(path, &weights)?,
        (None, MetricKind::Magnitude) => ActivationStats::default(),
        (None, _) => {
            return Err(prunemeta::Error::MissingStats(format!(
                "all sub-modules (metric {kind} needs --stats)"
            )))
        }
    };
    let (pruned, masks) = prune_model(&weights, &stats, &kind, &spec)?;
    io::write_model(&a.out, &pruned)?;
    if let Some(path) = &a.masks_out {
        io::write_masks(path, &masks)?;
    }
    let kept: usize = masks.values().map(|m| m.kept()).sum();
    let total: usize = masks.values().map(|m| m.rows() * m.cols()).sum();
    println!(
        "pruned {} sub-modules with {kind} at {spec}: sparsity {:.4}",
        masks.len(),
        1.0 - kept as f64 / total as f64
    );
    Ok(())
}

fn eval(a: EvalCmd) -> CmdResult {
    let dense = io::read_model(&a.dense)?;
    let pruned = io::read_model(&a.pruned)?;
    if dense.config != pruned.config {
        return Err(prunemeta::Error::Config("dense and pruned configs differ".into()));
    }
    let calib = io::read_calib(&a.calib)?;
    calib.validate_for(&dense)?;
    let cache = prunemeta::model::final_hidden_batch(&dense, &calib)?;
    let l_div = divergence(&cache, &pruned, &calib)?;
    println!("{l_div:?}");
    Ok(())
}

fn context(model: &Path, calib: &Path, sparsity: &str) -> Result<EvalContext, prunemeta::Error> {
    let spec: SparsitySpec = sparsity.parse()?;
    let weights = io::read_model(model)?;
    let calib = io::read_calib(calib)?;
    EvalContext::new(weights, calib, spec)
}

fn search(a: SearchCmd) -> CmdResult {
    let ctx = context(&a.model, &a.calib, &a.sparsity)?;
    let result = match a.algo {
        Algo::Nsga2 => nsga2_search(
            &ctx,
            &SearchParams {
                population: a.pop,
                budget: a.budget,
                eta_c: a.eta_c,
                eta_m: a.eta_m,
                p_crossover: a.p_crossover,
                p_mutation: a.p_mutation,
                seed: a.seed,
                patience: a.patience,
                jobs: a.jobs,
            },
        )?,
        Algo::Random => random_search(
            &ctx,
            &RandomSearchParams {
                budget: a.budget,
                seed: a.seed,
                without_replacement: a.without_replacement,
                jobs: a.jobs,
            },
        )?,
    };
    if is_csv(&a.out) {
        io::write_results_csv(&a.out, &result)?;
    } else {
        io::write_results_json(&a.out, &result)?;
    }
    if let Some(path) = &a.csv_out {
        io::write_results_csv(path, &result)?;
    }
    println!(
        "best {} l_div {} after {} evaluations ({} trials)",
        result.best_config,
        result.best_l_div,
        result.evaluations_used,
        result.trials.len()
    );
    Ok(())
}

fn enumerate(a: EnumerateCmd) -> CmdResult {
    let ctx = context(&a.model, &a.calib, &a.sparsity)?;
    let table = exhaustive_search(&ctx, a.jobs)?;
    if is_csv(&a.out) {
        io::write_table_csv(&a.out, &table)?;
    } else {
        io::write_table_json(&a.out, &table)?;
    }
    if let Some(path) = &a.csv_out {
        io::write_table_csv(path, &table)?;
    }
    let best = &table[0];
    println!("evaluated {} configs; minimum l_div {} at {}", table.len(), best.l_div, best.config);
    Ok(())
}

fn align(a: AlignCmd) -> CmdResult {
    let weights = io::read_model(&a.model)?;
    let stats = load_stats_for(&a.stats, &weights)?;
    let kind: MetricKind = a.metric.parse()?;
    let report = alignment_discrepancy(&weights, &stats, &kind)?;
    emit_report(&report, ReportFormat::from_path(&a.out), &a.out)?;
    println!("{kind}: model-level mean discrepancy {}", report.model_mean);
    Ok(())
}

fn dist(a: DistCmd) -> CmdResult {
    let weights = io::read_model(&a.model)?;
    let stats = load_stats_for(&a.stats, &weights)?;
    let report = distribution_summary(&weights, &stats)?;
    emit_report(&report, ReportFormat::from_path(&a.out), &a.out)?;
    println!("wrote distribution summary for {} layers", report.layers.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::GenModel(a) => gen_model(a),
        Command::GenCalib(a) => gen_calib(a),
        Command::Stats(a) => stats(a),
        Command::Prune(a) => prune(a),
        Command::Eval(a) => eval(a),
        Command::Search(a) => search(a),
        Command::Enumerate(a) => enumerate(a),
        Command::Align(a) => align(a),
        Command::Dist(a) => dist(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
