use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mirror_nas::arch::{
    canonical_serialize, count_blocks, enumerate_blocks, parse_arch_with_max_len, to_dot, OpKind, DEFAULT_MAX_LEN,
};
use mirror_nas::diff::{
    exact_topology, run_diff_search, softmax_probs, trace_csv, AlphaCell, DiffConfig, DiffError, QuadraticLoss,
    TaskLoss, TopologyGradient, ZeroLoss,
};
use mirror_nas::eval::{surrogate_accuracy, Cached, Evaluator, ExternalEvaluator, SurrogateEvaluator, SurrogateParams};
use mirror_nas::irl::{
    expert_library, mirror_stimuli, train_mirror, ExpertBlock, InitialPolicy, InnerSolver, IrlConfig, IrlError,
    MirrorWeights,
};
use mirror_nas::qagent::{run_search, samples_to_threshold, SearchError, SearchResult};

use crate::config::{resolve_pool, resolve_seed, EvaluatorKind, Mode, Overrides, RunConfig};
use crate::diag::{modify_rows, DIAG_HEADER, MIN_DIAG_MAX_LEN};
use crate::error::{read_file, usage, write_file, CliError};

pub const VERSION: &str = env!("MIRROR_NAS_VERSION");

/// Upper bound on exhaustive enumeration done on behalf of a command.
const ENUMERATION_LIMIT: u128 = 2_000_000;

#[derive(Debug, Parser)]
#[command(name = "mirror-nas", version = VERSION, about = "Block architecture search guided by a learned topology score")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit mirror weights to an expert block.
    IrlTrain(IrlTrainArgs),
    /// Q-learning search over blocks.
    Search(SearchArgs),
    /// Gradient search over a cell's op logits with the topology term.
    DiffSearch(DiffArgs),
    /// Score changes for three edits of the residual expert.
    ModifyDiag(ModifyArgs),
    /// Repeat the search for several topology weights and seeds.
    LambdaSweep(SweepArgs),
    /// Render a block file as a Graphviz digraph.
    ExportDot(DotArgs),
    /// List every block of a small space, optionally scored.
    Enumerate(EnumerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InnerKind {
    Exact,
    QLearning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Single,
    Random,
}

#[derive(Debug, Args)]
pub struct IrlTrainArgs {
    #[arg(long, default_value = "resnet_block")]
    pub expert: String,
    #[arg(long, default_value = "dwconv3,identity,add")]
    pub pool: String,
    #[arg(long, default_value_t = 3)]
    pub max_len: usize,
    /// Feature discount.
    #[arg(long, default_value_t = 0.9)]
    pub gamma: f64,
    /// Stop once the margin is at most this.
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = mirror_nas::irl::DEFAULT_MARGIN_ITERATIONS)]
    pub margin_iterations: usize,
    #[arg(long, value_enum, default_value_t = InnerKind::Exact)]
    pub inner: InnerKind,
    /// Episodes of the Q-learning inner solver.
    #[arg(long, default_value_t = 5000)]
    pub episodes: usize,
    #[arg(long, value_enum, default_value_t = InitKind::Single)]
    pub init: InitKind,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weights file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Margin trace CSV; defaults to `<out>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    Quadratic,
    Zero,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    #[arg(long, default_value_t = 2)]
    pub nodes: usize,
    /// Unary ops on each edge.
    #[arg(long, default_value = "dwconv3,maxpool3,avgpool3,identity")]
    pub pool: String,
    /// Initial cell file (overrides --nodes and --pool).
    #[arg(long)]
    pub cell: Option<PathBuf>,
    /// Mirror weights file, or `train`.
    #[arg(long, default_value = "train")]
    pub weights: String,
    #[arg(long, default_value = "resnet_block")]
    pub expert: String,
    /// Weight of the topology term.
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Samples per REINFORCE estimate.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Use the exact enumeration gradient instead of REINFORCE.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum, default_value_t = TaskKind::Quadratic)]
    pub task: TaskKind,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModifyArgs {
    /// Mirror weights file, or `train`.
    #[arg(long, default_value = "train")]
    pub weights: String,
    #[arg(long, default_value = "resnet_block")]
    pub expert: String,
    #[arg(long, default_value_t = MIN_DIAG_MAX_LEN)]
    pub max_len: usize,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated topology weights, e.g. `0,30,60`.
    #[arg(long)]
    pub lambdas: String,
    /// Number of seeds per weight, counting up from the base seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Accuracy threshold; defaults to the best accuracy in the space when it
    /// can be enumerated with the surrogate.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// CSV output; standard output when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct DotArgs {
    pub file: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[arg(long, default_value = "dwconv3,identity,add")]
    pub pool: String,
    #[arg(long, default_value_t = 3)]
    pub max_len: usize,
    /// Adds a topology column.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Adds a surrogate accuracy column.
    #[arg(long)]
    pub surrogate: bool,
    #[arg(long, default_value = "resnet_block")]
    pub expert: String,
    #[arg(long, default_value_t = 0.0)]
    pub surrogate_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub surrogate_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::IrlTrain(a) => cmd_irl_train(&a),
        Command::Search(a) => cmd_search(&a).map(|_| ()),
        Command::DiffSearch(a) => cmd_diff_search(&a),
        Command::ModifyDiag(a) => cmd_modify_diag(&a),
        Command::LambdaSweep(a) => cmd_lambda_sweep(&a),
        Command::ExportDot(a) => cmd_export_dot(&a),
        Command::Enumerate(a) => cmd_enumerate(&a),
    }
}

fn expert_at(name: &str, max_len: usize) -> Result<ExpertBlock, CliError> {
    let expert = expert_library(name).map_err(|e| usage(e.to_string()))?;
    expert
        .with_max_len(max_len)
        .map_err(|_| usage(format!("expert {name} has {} layers, more than max_len {max_len}", expert.arch.len())))
}

fn irl_error(e: IrlError) -> CliError {
    match e {
        IrlError::UnknownExpert(_) | IrlError::NoValidBlock | IrlError::InvalidArch(_) => usage(e.to_string()),
        IrlError::Format(_) | IrlError::Dimension(_) => usage(e.to_string()),
    }
}

/// Reads a weights file, or trains weights over `(pool, max_len)` when
/// `source == "train"`, saving them under `save_dir` if given.
fn obtain_weights(
    source: &str,
    expert: &str,
    pool: &[OpKind],
    max_len: usize,
    save_dir: Option<&Path>,
) -> Result<MirrorWeights, CliError> {
    if source != "train" {
        let text = read_file(Path::new(source))?;
        return MirrorWeights::from_json(&text).map_err(irl_error);
    }
    let expert = expert_at(expert, max_len)?;
    let config = IrlConfig { op_pool: pool.to_vec(), max_len, ..IrlConfig::default() };
    let (weights, trace) = train_mirror(&expert, &config).map_err(irl_error)?;
    info!("trained mirror weights: {} iterations, margin {}", trace.records.len(), weights.final_margin);
    if !trace.converged {
        warn!("mirror weights did not reach the margin target; final margin {}", weights.final_margin);
    }
    if let Some(dir) = save_dir {
        write_file(&dir.join("weights.json"), &weights.to_json())?;
        write_file(&dir.join("irl_trace.csv"), &trace.to_csv())?;
    }
    Ok(weights)
}

pub fn cmd_irl_train(a: &IrlTrainArgs) -> Result<(), CliError> {
    let pool = resolve_pool(&a.pool)?;
    if !(a.gamma > 0.0 && a.gamma <= 1.0) {
        return Err(usage("gamma must lie in (0, 1]"));
    }
    let expert = expert_at(&a.expert, a.max_len)?;
    let seed = resolve_seed(a.seed)?;
    let config = IrlConfig {
        epsilon: a.epsilon,
        max_iterations: a.max_iterations,
        gamma: a.gamma,
        op_pool: pool,
        max_len: a.max_len,
        margin_iterations: a.margin_iterations,
        inner: match a.inner {
            InnerKind::Exact => InnerSolver::Exact,
            InnerKind::QLearning => InnerSolver::QLearning { episodes: a.episodes, epsilon: 0.2, eta: 0.1, seed },
        },
        initial: match a.init {
            InitKind::Single => InitialPolicy::SingleLayer,
            InitKind::Random => InitialPolicy::Random { seed },
        },
    };
    let (weights, trace) = train_mirror(&expert, &config).map_err(irl_error)?;
    write_file(&a.out, &weights.to_json())?;
    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    write_file(&trace_path, &trace.to_csv())?;
    if trace.converged {
        println!("converged after {} iterations, margin {}", trace.records.len(), weights.final_margin);
    } else {
        warn!("no convergence within {} iterations", a.max_iterations);
        println!("stopped after {} iterations, margin {}", trace.records.len(), weights.final_margin);
    }
    Ok(())
}

fn merged(config: &Option<PathBuf>, flags: &Overrides) -> Result<Overrides, CliError> {
    Ok(match config {
        Some(path) => flags.over(&Overrides::from_file(path)?),
        None => flags.clone(),
    })
}

fn surrogate_for(cfg: &RunConfig) -> Result<SurrogateParams, CliError> {
    let expert = expert_at(&cfg.expert, cfg.max_len)?;
    Ok(SurrogateParams {
        noise_amp: cfg.surrogate_noise,
        seed: cfg.surrogate_seed,
        ..SurrogateParams::for_reference(&expert.arch, 0.9)
    })
}

fn build_evaluator(cfg: &RunConfig) -> Result<Box<dyn Evaluator>, CliError> {
    Ok(match cfg.evaluator {
        EvaluatorKind::Surrogate => Box::new(SurrogateEvaluator::new(surrogate_for(cfg)?)),
        EvaluatorKind::External => {
            let ext = ExternalEvaluator::new(cfg.plugin_command(), cfg.timeout());
            ext.check().map_err(|e| CliError::Evaluator(e.to_string()))?;
            Box::new(Cached::new(ext))
        }
    })
}

fn mirror_for(cfg: &RunConfig, save_dir: Option<&Path>) -> Result<Option<MirrorWeights>, CliError> {
    match cfg.weights.as_deref() {
        Some(source) => Ok(Some(obtain_weights(source, &cfg.expert, &cfg.op_pool(), cfg.max_len, save_dir)?)),
        None if cfg.lambda == 0.0 => Ok(None),
        None => Err(usage("a topology weight above 0 needs --weights <file> or --weights train (or --lambda 0)")),
    }
}

fn search_error(e: SearchError) -> CliError {
    match e {
        SearchError::InvalidConfig(msg) => usage(msg),
        SearchError::EvaluatorUnreachable(err) => CliError::Evaluator(err.to_string()),
    }
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_file(path, text),
        None => std::io::stdout().write_all(text.as_bytes()).context("writing to standard output").map_err(Into::into),
    }
}

/// Runs a search and writes its artifacts into the output directory.
pub fn cmd_search(a: &SearchArgs) -> Result<SearchResult, CliError> {
    let cfg = RunConfig::resolve(&merged(&a.config, &a.overrides)?, Mode::Qsearch)?;
    let out = cfg.out.clone().ok_or_else(|| usage("--out <dir> is required"))?;
    let mirror = mirror_for(&cfg, Some(&out))?;
    let evaluator = build_evaluator(&cfg)?;
    let result = run_search(&cfg.search_config(), &evaluator, mirror.as_ref()).map_err(search_error)?;

    write_file(&out.join("convergence.csv"), &result.convergence_csv())?;
    let mut rows = Vec::new();
    for (kind, list) in [("reward", &result.top_by_reward), ("accuracy", &result.top_by_accuracy)] {
        for (rank, s) in list.iter().enumerate() {
            let stem = format!("top_{kind}/{}", rank + 1);
            write_file(&out.join(format!("{stem}.json")), &(canonical_serialize(&s.arch) + "\n"))?;
            write_file(&out.join(format!("{stem}.dot")), &to_dot(&s.arch))?;
            rows.push(vec![
                kind.to_string(),
                (rank + 1).to_string(),
                s.reward.to_string(),
                s.accuracy.to_string(),
                s.topology.to_string(),
                format!("{stem}.json"),
            ]);
        }
    }
    write_file(
        &out.join("summary.csv"),
        &csv_string(&["kind", "rank", "reward", "accuracy", "topology", "file"], rows),
    )?;
    write_file(&out.join("manifest.toml"), &cfg.manifest(VERSION))?;
    if result.failures > 0 {
        warn!("{} evaluations failed and were skipped", result.failures);
    }
    match (result.top_by_reward.first(), result.top_by_accuracy.first()) {
        (Some(r), Some(acc)) => println!(
            "{} samples; best reward {} ({}); best accuracy {}",
            result.history.len(),
            r.reward,
            canonical_serialize(&r.arch),
            acc.accuracy
        ),
        _ => println!("no blocks evaluated"),
    }
    Ok(result)
}

pub fn cmd_diff_search(a: &DiffArgs) -> Result<(), CliError> {
    let cell = match &a.cell {
        Some(path) => AlphaCell::from_json(&read_file(path)?).map_err(|e| usage(e.to_string()))?,
        None => AlphaCell::uniform(a.nodes, resolve_pool(&a.pool)?).map_err(|e| usage(e.to_string()))?,
    };
    let max_len = DEFAULT_MAX_LEN.max(cell.block_len());
    let mut irl_pool = cell.ops().to_vec();
    irl_pool.push(OpKind::ADD);
    let weights = obtain_weights(&a.weights, &a.expert, &irl_pool, max_len, Some(&a.out))?;
    let task: Box<dyn TaskLoss> = match a.task {
        TaskKind::Quadratic => Box::new(QuadraticLoss::default_for(&cell)),
        TaskKind::Zero => Box::new(ZeroLoss),
    };
    let config = DiffConfig {
        scale: a.scale,
        steps: a.steps,
        lr: a.lr,
        gradient: if a.exact { TopologyGradient::Exact } else { TopologyGradient::Reinforce { k: a.k } },
    };
    if a.exact {
        // Surface an oversized cell before the first step.
        exact_topology(&cell, &weights).map_err(|e| usage(e.to_string()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(a.seed)?);
    match run_diff_search(&cell, &weights, task.as_ref(), &config, &mut rng) {
        Ok((final_cell, trace)) => {
            write_file(&a.out.join("trace.csv"), &trace_csv(&trace))?;
            write_file(&a.out.join("cell.json"), &final_cell.to_json())?;
            let dist = softmax_probs(&final_cell);
            for ((i, j), probs) in final_cell.edges().into_iter().zip(&dist.probs) {
                let best = probs.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).map(|(o, p)| (o, *p));
                if let Some((o, p)) = best {
                    println!("edge ({i},{j}): {} p={p:.4}", final_cell.ops()[o]);
                }
            }
            Ok(())
        }
        Err(DiffError::Diverged { step, trace }) => {
            write_file(&a.out.join("trace.csv"), &trace_csv(&trace))?;
            Err(anyhow::anyhow!("logits diverged at step {step}; trace written").into())
        }
        Err(e) => Err(usage(e.to_string())),
    }
}

pub fn cmd_modify_diag(a: &ModifyArgs) -> Result<(), CliError> {
    if a.expert != "resnet_block" {
        return Err(usage("the modifications are defined for the resnet_block expert"));
    }
    if a.max_len < MIN_DIAG_MAX_LEN {
        return Err(usage(format!("max_len must be at least {MIN_DIAG_MAX_LEN}")));
    }
    let pool = [OpKind::DWCONV3, OpKind::IDENTITY, OpKind::ADD];
    let weights = obtain_weights(&a.weights, &a.expert, &pool, a.max_len, None)?;
    let rows = modify_rows(&weights, a.max_len).map_err(|e| usage(e.to_string()))?;
    let rows =
        rows.into_iter().map(|r| vec![r.variant.to_string(), r.mu_delta.to_string(), r.f_delta.to_string()]).collect();
    emit(a.out.as_deref(), &csv_string(&DIAG_HEADER, rows))
}

fn parse_lambdas(text: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("bad lambda {s:?}"))))
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(usage("the lambda list is empty"));
    }
    if values.iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(usage("lambdas must be non-negative"));
    }
    Ok(values)
}

/// Best surrogate accuracy over the whole configured space.
fn oracle_threshold(cfg: &RunConfig) -> Result<f64, CliError> {
    let pool = cfg.op_pool();
    if cfg.evaluator != EvaluatorKind::Surrogate || count_blocks(cfg.max_len, &pool) > ENUMERATION_LIMIT {
        return Err(usage("--threshold is required unless the surrogate space is small enough to enumerate"));
    }
    let params = surrogate_for(cfg)?;
    Ok(enumerate_blocks(cfg.max_len, &pool).map(|b| surrogate_accuracy(&b, &params)).fold(f64::NEG_INFINITY, f64::max))
}

pub fn cmd_lambda_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let lambdas = parse_lambdas(&a.lambdas)?;
    let base = RunConfig::resolve(&merged(&a.config, &a.overrides)?, Mode::Qsearch)?;
    let threshold = match a.threshold {
        Some(t) => t,
        None => oracle_threshold(&base)?,
    };
    let mirror = match base.weights.as_deref() {
        Some(source) => Some(obtain_weights(source, &base.expert, &base.op_pool(), base.max_len, base.out.as_deref())?),
        None if lambdas.iter().all(|&l| l == 0.0) => None,
        None => return Err(usage("topology weights above 0 need --weights <file> or --weights train")),
    };
    let evaluator = build_evaluator(&base)?;
    let mut rows = Vec::new();
    for &lambda in &lambdas {
        for i in 0..a.seeds {
            let seed = base.seed + i;
            let config = mirror_nas::qagent::SearchConfig { lambda, seed, ..base.search_config() };
            let result = run_search(&config, &evaluator, mirror.as_ref()).map_err(search_error)?;
            let best = |f: fn(&mirror_nas::qagent::SampleRecord) -> f64| {
                result.history.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
            };
            rows.push(vec![
                lambda.to_string(),
                seed.to_string(),
                best(|s| s.reward).to_string(),
                best(|s| s.accuracy).to_string(),
                best(|s| s.topology).to_string(),
                samples_to_threshold(&result.history, threshold).map(|n| n.to_string()).unwrap_or_default(),
            ]);
        }
    }
    let header = ["lambda", "seed", "best_R", "best_acc", "best_topo", "samples_to_threshold"];
    emit(a.csv.as_deref(), &csv_string(&header, rows))
}

pub fn cmd_export_dot(a: &DotArgs) -> Result<(), CliError> {
    let text = read_file(&a.file)?;
    let arch =
        parse_arch_with_max_len(text.trim(), a.max_len).map_err(|e| usage(format!("{}: {e}", a.file.display())))?;
    emit(a.out.as_deref(), &to_dot(&arch))
}

pub fn cmd_enumerate(a: &EnumerateArgs) -> Result<(), CliError> {
    let pool = resolve_pool(&a.pool)?;
    let total = count_blocks(a.max_len, &pool);
    if total > ENUMERATION_LIMIT {
        return Err(usage(format!("{total} blocks is too many to list")));
    }
    let weights = match &a.weights {
        Some(path) => Some(MirrorWeights::from_json(&read_file(path)?).map_err(irl_error)?),
        None => None,
    };
    let params = if a.surrogate {
        let expert = expert_at(&a.expert, a.max_len)?;
        Some(SurrogateParams {
            noise_amp: a.surrogate_noise,
            seed: a.surrogate_seed,
            ..SurrogateParams::for_reference(&expert.arch, 0.9)
        })
    } else {
        None
    };
    let mut header = vec!["index", "layers", "arch"];
    if weights.is_some() {
        header.push("topology");
    }
    if params.is_some() {
        header.push("accuracy");
    }
    let mut rows = Vec::new();
    for (i, arch) in enumerate_blocks(a.max_len, &pool).enumerate() {
        let mut row = vec![(i + 1).to_string(), arch.len().to_string(), canonical_serialize(&arch)];
        if let Some(w) = &weights {
            row.push(mirror_stimuli(w, &arch).expect("enumerated blocks are valid").to_string());
        }
        if let Some(p) = &params {
            row.push(surrogate_accuracy(&arch, p).to_string());
        }
        rows.push(row);
    }
    emit(a.out.as_deref(), &csv_string(&header, rows))
}
